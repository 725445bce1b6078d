//! Belief-space planning and state estimation for hybrid (switched-mode)
//! dynamical systems.
//!
//! A hybrid system is a finite set of discrete modes, each with its own
//! continuous dynamics and observation model, connected by guard regions that
//! gate mode transitions. Beliefs over such systems are hybrid too: a Gaussian
//! mixture over the continuous state paired with a categorical distribution
//! over the active mode.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] - mode-indexed dynamics, guards, transition graph, hybrid beliefs
//! * [`filter`] - hybrid Bayesian filtering (mixture prediction, sampled
//!   transition matrix, bank-of-EKF measurement update, mixture reduction)
//! * [`direct`] - direct transcription of belief-space trajectory optimisation
//!   under the maximum-likely-observation assumption, solved by an in-repo SQP
//! * [`hierarchical`] - mode-sequence enumeration, confidence maps with RBF
//!   surrogates and differential evolution, divergence-based plan ranking
//! * [`stabilizer`] - time-varying LQR tracking of a nominal belief trajectory
//!   with divergence-triggered replanning
//! * [`domains`] - the two benchmark setups (planar walled navigation and a
//!   peg-in-corner assembly task) plus a ground-truth simulator
//! * [`record`] - serialisable execution traces

pub mod direct;
pub mod domains;
pub mod filter;
pub mod hierarchical;
mod math;
pub mod model;
pub mod record;
pub mod stabilizer;
