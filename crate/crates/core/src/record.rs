//! Serializable execution records: one log entry per closed-loop step plus a
//! run-level summary derived from the logs.

use serde::{Deserialize, Serialize};

/// Snapshot of one closed-loop step.
///
/// Entry `t` holds the belief *after* the observation update at time `t`;
/// `control` is the input applied when leaving this step (absent on the final
/// entry) and `observation` the measurement that produced this belief (absent
/// at time zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub time: usize,
    pub true_state: Vec<f64>,
    pub belief_mean: Vec<f64>,
    /// Row-major `n x n` covariance of the mixture.
    pub belief_cov: Vec<f64>,
    pub mode_probs: Vec<f64>,
    pub control: Option<Vec<f64>>,
    pub observation: Option<Vec<f64>>,
    /// Whether a replanning call fired while this belief was current.
    pub replanned: bool,
}

/// Full record of one seeded run: per-step logs plus summary metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub domain: String,
    pub planner: String,
    pub seed: u64,
    pub steps: Vec<StepLog>,
    /// Mode sequence of the winning high-level plan, when one exists.
    pub high_level_plan: Option<Vec<usize>>,
    /// Total wall-clock time spent in planning calls, including replans.
    pub planning_seconds: f64,
    pub replan_count: usize,
    pub steps_to_termination: usize,
    /// Signed per-axis difference between the final true state and the goal.
    pub final_error: Vec<f64>,
    pub final_max_covariance: f64,
    pub success: bool,
}

impl ExperimentRecord {
    pub fn final_step(&self) -> Option<&StepLog> {
        self.steps.last()
    }
}
