//! Closed-loop execution: belief-space LQR tracking of a nominal trajectory
//! with deviation-triggered replanning.
//!
//! Every point of the nominal trajectory is a set point. The tracking error
//! is the stacked belief error (mean error, packed-covariance error); the
//! feedback gains come from a finite-horizon Riccati recursion on the
//! most-likely-mode dynamics at each set point. Covariance-error feedback is
//! deliberately off — those gain columns are zero — because mean tracking is
//! the minimal scheme that stabilises the executions handled here.
//!
//! During execution the loop is: B-LQR control, simulator step, hybrid filter
//! update, deviation check. When the combined deviation (Hellinger on the
//! discrete parts plus Mahalanobis of the actual mean under the planned
//! belief) exceeds the policy threshold, the planner is re-invoked from the
//! current belief and tracking restarts on the fresh nominal.

use crate::direct::{
    pack_triangle, plan_direct, BeliefTrajectory, DirectError, TranscriptionProblem,
};
use crate::domains::Simulator;
use crate::filter::{belief_prior, posterior_update, FilterConfig, FilterError};
use crate::hierarchical::{
    hellinger, rank_and_plan, GoalRegion, HierarchicalConfig, HierarchicalError, HighLevelPlan,
};
use crate::math;
use crate::model::{
    most_likely_mode, AxisBox, HybridBelief, HybridDynamicsModel, ModelError,
};
use crate::record::{ExperimentRecord, StepLog};
use nalgebra::{Cholesky, DMatrix, DVector};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StabilizerError {
    #[error("riccati recursion hit a singular or indefinite step")]
    SingularRiccati,
    #[error("nominal trajectory has no steps to track")]
    EmptyNominal,
    #[error("tracking cost dimensions do not match the model")]
    DimensionMismatch,
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Direct(#[from] DirectError),
    #[error(transparent)]
    Hierarchical(#[from] HierarchicalError),
}

/// Time-varying tracking controller around a nominal belief trajectory.
#[derive(Debug, Clone)]
pub struct BlqrController {
    pub nominal: BeliefTrajectory,
    /// One `m x (n + n(n+1)/2)` gain per step; covariance columns are zero.
    gains: Vec<DMatrix<f64>>,
    pub q_track: DMatrix<f64>,
    pub r_track: DMatrix<f64>,
    bounds: AxisBox,
    pub horizon: usize,
}

impl BlqrController {
    pub fn gain(&self, t: usize) -> &DMatrix<f64> {
        &self.gains[t.min(self.gains.len() - 1)]
    }

    /// `u = u_nom(t) - K(t) * (belief error)`, clamped to the control bounds.
    pub fn control(&self, actual: &HybridBelief, t: usize) -> DVector<f64> {
        let idx = t.min(self.horizon - 1);
        let (nom_belief, nom_u) = &self.nominal.dense[idx];
        let n = actual.state_dim();
        let tri = n * (n + 1) / 2;
        let mut err = DVector::zeros(n + tri);
        err.rows_mut(0, n)
            .copy_from(&(actual.mean() - nom_belief.mean()));
        err.rows_mut(n, tri)
            .copy_from(&(pack_triangle(&actual.cov()) - pack_triangle(&nom_belief.cov())));
        self.bounds.clamp(&(nom_u - self.gain(idx) * err))
    }
}

/// Replanning trigger: combined deviation above `delta_threshold`.
#[derive(Debug, Clone)]
pub struct ReplanPolicy {
    pub delta_threshold: f64,
}

impl ReplanPolicy {
    pub fn new(delta_threshold: f64) -> Self {
        assert!(delta_threshold > 0.0, "threshold must be positive");
        Self { delta_threshold }
    }
}

impl Default for ReplanPolicy {
    fn default() -> Self {
        Self::new(3.0)
    }
}

/// Builds the tracking controller for a nominal trajectory by a backward
/// Riccati pass over the most-likely-mode linearisations at each set point.
pub fn build_blqr(
    model: &HybridDynamicsModel,
    nominal: BeliefTrajectory,
    q_track: &DMatrix<f64>,
    r_track: &DMatrix<f64>,
) -> Result<BlqrController, StabilizerError> {
    let n = model.state_dim;
    let m = model.control_dim;
    if q_track.nrows() != n || q_track.ncols() != n || r_track.nrows() != m || r_track.ncols() != m
    {
        return Err(StabilizerError::DimensionMismatch);
    }
    let horizon = nominal.dense.len().saturating_sub(1);
    if horizon == 0 {
        return Err(StabilizerError::EmptyNominal);
    }

    let mut lin = Vec::with_capacity(horizon);
    for (belief, u) in &nominal.dense[..horizon] {
        let local = model.local(most_likely_mode(belief))?;
        let mean = belief.mean();
        lin.push(((local.dynamics_jac_x)(&mean, u), (local.dynamics_jac_u)(&mean, u)));
    }

    let mut value = q_track.clone();
    let tri = n * (n + 1) / 2;
    let mut gains = vec![DMatrix::zeros(m, n + tri); horizon];
    for (t, (a, b)) in lin.iter().enumerate().rev() {
        let s = r_track + b.transpose() * &value * b;
        let chol = Cholesky::new(math::symmetrize(&s)).ok_or(StabilizerError::SingularRiccati)?;
        let k = chol.solve(&(b.transpose() * &value * a));
        value = math::symmetrize(&(q_track + a.transpose() * &value * (a - b * &k)));
        if !math::is_psd(&value, 1e-7) {
            return Err(StabilizerError::SingularRiccati);
        }
        gains[t].view_mut((0, 0), (m, n)).copy_from(&k);
    }

    Ok(BlqrController {
        nominal,
        gains,
        q_track: q_track.clone(),
        r_track: r_track.clone(),
        bounds: model.control_bounds.clone(),
        horizon,
    })
}

/// True iff the combined deviation strictly exceeds the threshold: Hellinger
/// distance of the discrete parts plus the Mahalanobis distance of the actual
/// mean under the planned belief.
pub fn check_replan(policy: &ReplanPolicy, planned: &HybridBelief, actual: &HybridBelief) -> bool {
    let discrete = hellinger(&planned.mode_probs, &actual.mode_probs)
        .expect("beliefs share one mode set");
    let residual = actual.mean() - planned.mean();
    let continuous = match Cholesky::new(math::symmetrize(&planned.cov())) {
        Some(chol) => residual.dot(&chol.solve(&residual)).max(0.0).sqrt(),
        // A degenerate planned covariance cannot explain any offset.
        None => {
            if residual.amax() == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        }
    };
    discrete + continuous > policy.delta_threshold
}

/// Which planner backs both the initial plan and replans.
#[derive(Debug, Clone)]
pub enum Planner {
    Direct(TranscriptionProblem),
    Hierarchical(HierarchicalConfig),
}

impl Planner {
    pub fn name(&self) -> &'static str {
        match self {
            Planner::Direct(_) => "direct",
            Planner::Hierarchical(_) => "hierarchical",
        }
    }

    pub fn filter_config(&self) -> &FilterConfig {
        &self.problem().filter
    }

    fn problem(&self) -> &TranscriptionProblem {
        match self {
            Planner::Direct(p) => p,
            Planner::Hierarchical(c) => &c.transcription,
        }
    }

    /// Tracking costs reuse the planning stage costs.
    pub fn tracking_costs(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let p = self.problem();
        (p.state_cost.clone(), p.control_cost.clone())
    }

    pub fn plan(
        &self,
        model: &HybridDynamicsModel,
        belief: &HybridBelief,
        goal: &GoalRegion,
    ) -> Result<(BeliefTrajectory, Option<HighLevelPlan>), StabilizerError> {
        match self {
            Planner::Direct(p) => Ok((plan_direct(model, belief, &goal.center, p)?, None)),
            Planner::Hierarchical(c) => {
                let (trajectory, plan) = rank_and_plan(model, belief, goal, c)?;
                Ok((trajectory, Some(plan)))
            }
        }
    }
}

/// Termination and safety limits for one closed-loop run.
#[derive(Debug, Clone)]
pub struct ExecutionSettings {
    pub max_steps: usize,
    /// Largest belief-covariance eigenvalue allowed at termination.
    pub covariance_bound: f64,
}

/// Runs the closed loop until the belief mean enters the goal region with the
/// covariance bound satisfied, or `max_steps` pass (recorded as a failure,
/// not an error).
///
/// `replan_count` counts deviation-triggered replans only; a step's
/// `replanned` flag is also set when the nominal horizon was exhausted and a
/// fresh plan had to be made.
pub fn execute(
    model: &HybridDynamicsModel,
    sim: &mut Simulator,
    planner: &Planner,
    policy: &ReplanPolicy,
    start_belief: &HybridBelief,
    goal: &GoalRegion,
    settings: &ExecutionSettings,
) -> Result<ExperimentRecord, StabilizerError> {
    let fcfg = planner.filter_config().clone();
    let (q_track, r_track) = planner.tracking_costs();
    let mut planning_seconds = 0.0;
    let plan_from =
        |belief: &HybridBelief,
         seconds: &mut f64|
         -> Result<(BlqrController, Option<HighLevelPlan>), StabilizerError> {
            let clock = Instant::now();
            let (nominal, high_level) = planner.plan(model, belief, goal)?;
            *seconds += clock.elapsed().as_secs_f64();
            Ok((build_blqr(model, nominal, &q_track, &r_track)?, high_level))
        };

    let (mut blqr, high_level) = plan_from(start_belief, &mut planning_seconds)?;
    let mut belief = start_belief.clone();
    let mut steps = vec![snapshot(0, sim, &belief)];
    let mut t_local = 0usize;
    let mut time = 0usize;
    let mut replan_count = 0usize;
    let done = |b: &HybridBelief| {
        goal.contains(&b.mean()) && b.max_cov_eigenvalue() <= settings.covariance_bound
    };

    let mut success = done(&belief);
    while !success && time < settings.max_steps {
        if t_local >= blqr.horizon {
            (blqr, _) = plan_from(&belief, &mut planning_seconds)?;
            t_local = 0;
            steps.last_mut().expect("nonempty log").replanned = true;
        }
        let u = blqr.control(&belief, t_local);
        let z = sim.step(&u)?;
        let prior = belief_prior(model, &belief, &u, &fcfg)?;
        belief = posterior_update(model, &prior, &z, &fcfg)?.belief;
        t_local += 1;
        time += 1;

        steps.last_mut().expect("nonempty log").control = Some(u.as_slice().to_vec());
        let mut log = snapshot(time, sim, &belief);
        log.observation = Some(z.as_slice().to_vec());
        steps.push(log);

        success = done(&belief);
        if !success {
            let planned = &blqr.nominal.dense[t_local.min(blqr.horizon)].0;
            if check_replan(policy, planned, &belief) {
                (blqr, _) = plan_from(&belief, &mut planning_seconds)?;
                t_local = 0;
                replan_count += 1;
                steps.last_mut().expect("nonempty log").replanned = true;
            }
        }
    }

    Ok(ExperimentRecord {
        domain: String::new(),
        planner: planner.name().to_string(),
        seed: 0,
        high_level_plan: high_level.map(|p| p.sequence),
        planning_seconds,
        replan_count,
        steps_to_termination: time,
        final_error: (sim.true_state() - &goal.center).as_slice().to_vec(),
        final_max_covariance: belief.max_cov_eigenvalue(),
        success,
        steps,
    })
}

fn snapshot(time: usize, sim: &Simulator, belief: &HybridBelief) -> StepLog {
    StepLog {
        time,
        true_state: sim.true_state().as_slice().to_vec(),
        belief_mean: belief.mean().as_slice().to_vec(),
        belief_cov: belief.cov().transpose().as_slice().to_vec(),
        mode_probs: belief.mode_probs.as_slice().to_vec(),
        control: None,
        observation: None,
        replanned: false,
    }
}
