//! Belief-space trajectory optimisation by direct transcription.
//!
//! The planner discretises the horizon into segments, places a knot point
//! (belief mean and covariance) at every segment boundary, and solves a
//! constrained nonlinear program whose equality constraints force consecutive
//! knots to be connected by the segment belief dynamics: delta filter steps
//! under a held control and the maximum-likely-observation (MLO) assumption.
//! Under MLO the assumed measurement equals the predicted one, so the mean
//! follows the open-loop prediction while the covariance contracts through
//! the Kalman gains — planning can trade control effort against information.
//!
//! Knots store only continuous moments `(mu, s)`; the discrete distribution
//! is rebuilt from the moments via sampled mode occupancy whenever a knot is
//! re-expanded into a full hybrid belief. The NLP is solved by the in-repo
//! SQP in [`sqp`].

use crate::filter::{
    belief_prior, mode_occupancy, posterior_update, FilterConfig, FilterError,
};
use crate::math;
use crate::model::{AxisBox, HybridBelief, HybridDynamicsModel, ModelError};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

mod sqp;

#[derive(Debug, Error)]
pub enum DirectError {
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid transcription problem: {0}")]
    InvalidProblem(&'static str),
    #[error("numerical failure: {0}")]
    NumericalFailure(&'static str),
}

/// Cost weights, discretisation, endpoints and bounds for one solve.
#[derive(Debug, Clone)]
pub struct TranscriptionProblem {
    /// Total number of filter steps T.
    pub horizon: usize,
    /// Number of segments M; the segment length is `horizon / segments`.
    pub segments: usize,
    /// Running cost on the mean error at every knot.
    pub state_cost: DMatrix<f64>,
    /// Running cost on each segment control.
    pub control_cost: DMatrix<f64>,
    /// Extra cost on the final mean error.
    pub terminal_cost: DMatrix<f64>,
    /// Weight on the squared flattened final covariance.
    pub covariance_weight: f64,
    pub start_belief: HybridBelief,
    pub goal_state: DVector<f64>,
    pub control_bounds: AxisBox,
    pub filter: FilterConfig,
    pub max_iterations: usize,
}

impl TranscriptionProblem {
    pub fn segment_length(&self) -> usize {
        self.horizon / self.segments.max(1)
    }

    fn validate(&self, model: &HybridDynamicsModel) -> Result<(), DirectError> {
        if self.segments == 0 || self.horizon == 0 {
            return Err(DirectError::InvalidProblem("horizon and segments must be positive"));
        }
        if self.horizon % self.segments != 0 {
            return Err(DirectError::InvalidProblem("horizon must divide evenly into segments"));
        }
        let n = model.state_dim;
        let m = model.control_dim;
        if self.state_cost.nrows() != n
            || self.state_cost.ncols() != n
            || self.terminal_cost.nrows() != n
            || self.goal_state.len() != n
            || self.start_belief.state_dim() != n
        {
            return Err(DirectError::InvalidProblem("state-cost/goal dimensions do not match the model"));
        }
        if self.control_cost.nrows() != m || self.control_bounds.dim() != m {
            return Err(DirectError::InvalidProblem("control-cost/bounds dimensions do not match the model"));
        }
        if !math::is_psd(&self.state_cost, 1e-9)
            || !math::is_psd(&self.control_cost, 1e-9)
            || !math::is_psd(&self.terminal_cost, 1e-9)
            || self.covariance_weight < 0.0
        {
            return Err(DirectError::InvalidProblem("cost weights must be positive semidefinite"));
        }
        Ok(())
    }
}

/// Solved plan: knot beliefs with their segment controls, plus the dense
/// per-step expansion obtained by rolling the filter forward under the
/// piecewise-constant controls (so the dense trajectory satisfies the belief
/// dynamics exactly). The control stored with the last knot is a zero
/// placeholder; no segment leaves it.
#[derive(Debug, Clone)]
pub struct BeliefTrajectory {
    pub knots: Vec<(HybridBelief, DVector<f64>)>,
    pub dense: Vec<(HybridBelief, DVector<f64>)>,
    pub objective_value: f64,
}

impl BeliefTrajectory {
    pub fn final_belief(&self) -> &HybridBelief {
        &self.dense.last().expect("trajectory is never empty").0
    }

    /// Per-step controls (one fewer entry than `dense`).
    pub fn step_controls(&self) -> Vec<DVector<f64>> {
        self.dense[..self.dense.len() - 1]
            .iter()
            .map(|(_, u)| u.clone())
            .collect()
    }
}

/// Solver certificate. `converged` requires both tolerances:
/// `kkt_norm <= 1e-4` on the normalised objective and
/// `constraint_residual <= 1e-6` (infinity norm over flattened defects).
#[derive(Debug, Clone)]
pub struct NlpReport {
    pub converged: bool,
    pub iterations: usize,
    pub kkt_norm: f64,
    pub constraint_residual: f64,
}

/// Decision-vector guess: one (mean, covariance) pair per knot after the
/// start, one control per segment.
#[derive(Debug, Clone)]
pub struct TranscriptionGuess {
    pub knot_means: Vec<DVector<f64>>,
    pub knot_covs: Vec<DMatrix<f64>>,
    pub controls: Vec<DVector<f64>>,
}

impl TranscriptionGuess {
    /// Default warm start: means interpolate linearly from the start mean to
    /// the goal, covariances stay at the start covariance, controls are zero.
    pub fn straight_line(problem: &TranscriptionProblem) -> Self {
        let m_seg = problem.segments;
        let start_mean = problem.start_belief.mean();
        let start_cov = problem.start_belief.cov();
        let dir = &problem.goal_state - &start_mean;
        let knot_means = (1..=m_seg)
            .map(|i| &start_mean + (i as f64 / m_seg as f64) * &dir)
            .collect();
        Self {
            knot_means,
            knot_covs: vec![start_cov; m_seg],
            controls: vec![DVector::zeros(problem.control_bounds.dim()); m_seg],
        }
    }

    /// Re-use a previous solution as a warm start.
    pub fn from_trajectory(trajectory: &BeliefTrajectory) -> Self {
        let m_seg = trajectory.knots.len() - 1;
        Self {
            knot_means: trajectory.knots[1..].iter().map(|(b, _)| b.mean()).collect(),
            knot_covs: trajectory.knots[1..].iter().map(|(b, _)| b.cov()).collect(),
            controls: trajectory.knots[..m_seg].iter().map(|(_, u)| u.clone()).collect(),
        }
    }
}

/// Roll the filter forward assuming every observation equals its prediction:
/// `z_hat = sum_q b_hat[q] * H^q(mean)`. Returns `controls.len() + 1` beliefs.
pub fn mlo_rollout(
    model: &HybridDynamicsModel,
    start_belief: &HybridBelief,
    controls: &[DVector<f64>],
    cfg: &FilterConfig,
) -> Result<Vec<HybridBelief>, DirectError> {
    let mut out = Vec::with_capacity(controls.len() + 1);
    out.push(start_belief.clone());
    let mut current = start_belief.clone();
    for u in controls {
        let prior = belief_prior(model, &current, u, cfg)?;
        let z_hat = assumed_observation(model, &prior)?;
        current = posterior_update(model, &prior, &z_hat, cfg)?.belief;
        out.push(current.clone());
    }
    Ok(out)
}

fn assumed_observation(
    model: &HybridDynamicsModel,
    belief: &HybridBelief,
) -> Result<DVector<f64>, DirectError> {
    let mean = belief.mean();
    let mut z = DVector::zeros(model.obs_dim);
    for q in 0..model.n_modes() {
        let p = belief.mode_probs[q];
        if p > 0.0 {
            z += p * (model.local(q)?.observation)(&mean);
        }
    }
    Ok(z)
}

/// Apply a discrete dynamics map `delta` times with a held control.
pub fn segment_integrate_state<F>(
    dynamics: F,
    x_start: &DVector<f64>,
    u: &DVector<f64>,
    delta: usize,
) -> Result<DVector<f64>, DirectError>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    if delta == 0 {
        return Err(DirectError::InvalidProblem("segment length must be at least 1"));
    }
    let mut x = x_start.clone();
    for _ in 0..delta {
        x = dynamics(&x, u);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(DirectError::NumericalFailure("state integration diverged"));
        }
    }
    Ok(x)
}

/// `delta` MLO filter steps under a held control.
pub fn segment_integrate_belief(
    model: &HybridDynamicsModel,
    b_start: &HybridBelief,
    u: &DVector<f64>,
    delta: usize,
    cfg: &FilterConfig,
) -> Result<HybridBelief, DirectError> {
    if delta == 0 {
        return Err(DirectError::InvalidProblem("segment length must be at least 1"));
    }
    let controls = vec![u.clone(); delta];
    Ok(mlo_rollout(model, b_start, &controls, cfg)?.pop().expect("rollout is never empty"))
}

/// Trajectory cost: mean-error quadratic at every knot, control quadratic on
/// every segment, terminal mean-error quadratic, and the covariance weight
/// times the squared flattened final covariance (all of its columns).
pub fn objective(trajectory: &BeliefTrajectory, problem: &TranscriptionProblem) -> f64 {
    let goal = &problem.goal_state;
    let mut total = 0.0;
    for (belief, u) in &trajectory.knots {
        let e = belief.mean() - goal;
        total += quadratic_form(&problem.state_cost, &e) + quadratic_form(&problem.control_cost, u);
    }
    if let Some((last, _)) = trajectory.knots.last() {
        let e = last.mean() - goal;
        total += quadratic_form(&problem.terminal_cost, &e);
        total += problem.covariance_weight * last.cov().iter().map(|v| v * v).sum::<f64>();
    }
    total
}

fn quadratic_form(w: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (w * v).dot(v)
}

/// Solve the transcription NLP. Infeasible or unconverged runs still return
/// the best iterate found, flagged through the report.
pub fn solve_nlp(
    model: &HybridDynamicsModel,
    problem: &TranscriptionProblem,
    guess: &TranscriptionGuess,
) -> Result<(BeliefTrajectory, NlpReport), DirectError> {
    problem.validate(model)?;
    let layout = Layout::new(model, problem);
    if guess.knot_means.len() != problem.segments
        || guess.knot_covs.len() != problem.segments
        || guess.controls.len() != problem.segments
    {
        return Err(DirectError::InvalidProblem("guess length does not match the segment count"));
    }
    let x0 = layout.pack_guess(guess);

    // Surface genuine model/filter failures at the initial point; during the
    // solve the closures degrade to NaN blocks, which the line search rejects.
    layout.defects(model, problem, &x0)?;

    let (lower, upper) = layout.bounds(problem);
    let nlp = sqp::NlpFunctions {
        objective: Box::new(|x: &DVector<f64>| layout.cost(problem, x)),
        gradient: Box::new(|x: &DVector<f64>| layout.cost_gradient(problem, x)),
        objective_hessian: Some(layout.cost_hessian(problem)),
        constraints: Box::new(|x: &DVector<f64>| {
            layout
                .defects(model, problem, x)
                .unwrap_or_else(|_| DVector::from_element(layout.n_constraints(), f64::NAN))
        }),
        constraint_jac: Box::new(|x: &DVector<f64>| layout.defect_jacobian(model, problem, x)),
        lower,
        upper,
    };
    let settings = sqp::SqpSettings {
        max_iterations: problem.max_iterations,
        ..sqp::SqpSettings::default()
    };
    let solution = sqp::solve(&nlp, &x0, &settings).map_err(DirectError::NumericalFailure)?;

    let trajectory = layout.unpack_trajectory(model, problem, &solution.x)?;
    let report = NlpReport {
        converged: solution.converged(),
        iterations: solution.iterations,
        kkt_norm: solution.kkt_norm,
        constraint_residual: solution.constraint_residual,
    };
    Ok((trajectory, report))
}

/// Plan over the full horizon from a start belief to a goal, using the
/// default straight-line warm start.
pub fn plan_direct(
    model: &HybridDynamicsModel,
    start_belief: &HybridBelief,
    goal: &DVector<f64>,
    problem: &TranscriptionProblem,
) -> Result<BeliefTrajectory, DirectError> {
    let mut instance = problem.clone();
    instance.start_belief = start_belief.clone();
    instance.goal_state = goal.clone();
    let guess = TranscriptionGuess::straight_line(&instance);
    Ok(solve_nlp(model, &instance, &guess)?.0)
}

/// Decision-vector layout: M knots of (mean, upper-triangle covariance)
/// followed by M segment controls.
struct Layout {
    n: usize,
    m: usize,
    tri: usize,
    segments: usize,
    delta: usize,
}

impl Layout {
    fn new(model: &HybridDynamicsModel, problem: &TranscriptionProblem) -> Self {
        let n = model.state_dim;
        Self {
            n,
            m: model.control_dim,
            tri: n * (n + 1) / 2,
            segments: problem.segments,
            delta: problem.segment_length(),
        }
    }

    fn knot_size(&self) -> usize {
        self.n + self.tri
    }

    fn n_vars(&self) -> usize {
        self.segments * (self.knot_size() + self.m)
    }

    fn n_constraints(&self) -> usize {
        self.segments * self.knot_size()
    }

    fn knot_offset(&self, i: usize) -> usize {
        i * self.knot_size()
    }

    fn control_offset(&self, i: usize) -> usize {
        self.segments * self.knot_size() + i * self.m
    }

    fn pack_guess(&self, guess: &TranscriptionGuess) -> DVector<f64> {
        let mut x = DVector::zeros(self.n_vars());
        for i in 0..self.segments {
            let o = self.knot_offset(i);
            x.rows_mut(o, self.n).copy_from(&guess.knot_means[i]);
            let s = pack_triangle(&guess.knot_covs[i]);
            x.rows_mut(o + self.n, self.tri).copy_from(&s);
            x.rows_mut(self.control_offset(i), self.m).copy_from(&guess.controls[i]);
        }
        x
    }

    fn bounds(&self, problem: &TranscriptionProblem) -> (DVector<f64>, DVector<f64>) {
        let mut lower = DVector::from_element(self.n_vars(), f64::NEG_INFINITY);
        let mut upper = DVector::from_element(self.n_vars(), f64::INFINITY);
        for i in 0..self.segments {
            let o = self.control_offset(i);
            for k in 0..self.m {
                lower[o + k] = problem.control_bounds.lo[k];
                upper[o + k] = problem.control_bounds.hi[k];
            }
        }
        (lower, upper)
    }

    fn knot_mean(&self, x: &DVector<f64>, i: usize) -> DVector<f64> {
        x.rows(self.knot_offset(i), self.n).into_owned()
    }

    fn knot_cov(&self, x: &DVector<f64>, i: usize) -> DMatrix<f64> {
        let s = x.rows(self.knot_offset(i) + self.n, self.tri).into_owned();
        unpack_triangle(self.n, s.as_slice())
    }

    fn control(&self, x: &DVector<f64>, i: usize) -> DVector<f64> {
        x.rows(self.control_offset(i), self.m).into_owned()
    }

    /// Expand packed knot moments into a hybrid belief (mode distribution
    /// from sampled occupancy of the PSD-projected covariance).
    fn expand_knot(
        &self,
        model: &HybridDynamicsModel,
        cfg: &FilterConfig,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
    ) -> Result<HybridBelief, DirectError> {
        let cov = psd_project(cov);
        let probs = mode_occupancy(model, mean, &cov, cfg)?;
        Ok(HybridBelief::gaussian(mean.clone(), cov, probs)?)
    }

    /// Segment map applied to a packed source knot: returns the packed
    /// moments of the belief after `delta` MLO steps.
    fn propagate_packed(
        &self,
        model: &HybridDynamicsModel,
        problem: &TranscriptionProblem,
        source: &HybridBelief,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>, DirectError> {
        let after = segment_integrate_belief(model, source, u, self.delta, &problem.filter)?;
        let mut packed = DVector::zeros(self.knot_size());
        packed.rows_mut(0, self.n).copy_from(&after.mean());
        packed
            .rows_mut(self.n, self.tri)
            .copy_from(&pack_triangle(&after.cov()));
        Ok(packed)
    }

    fn source_belief(
        &self,
        model: &HybridDynamicsModel,
        problem: &TranscriptionProblem,
        x: &DVector<f64>,
        segment: usize,
    ) -> Result<HybridBelief, DirectError> {
        if segment == 0 {
            Ok(problem.start_belief.clone())
        } else {
            let mean = self.knot_mean(x, segment - 1);
            let cov = self.knot_cov(x, segment - 1);
            self.expand_knot(model, &problem.filter, &mean, &cov)
        }
    }

    /// Defect vector: for every segment, propagated source knot minus the
    /// packed target knot.
    fn defects(
        &self,
        model: &HybridDynamicsModel,
        problem: &TranscriptionProblem,
        x: &DVector<f64>,
    ) -> Result<DVector<f64>, DirectError> {
        let mut c = DVector::zeros(self.n_constraints());
        for i in 0..self.segments {
            let source = self.source_belief(model, problem, x, i)?;
            let u = self.control(x, i);
            let predicted = self.propagate_packed(model, problem, &source, &u)?;
            let target = x.rows(self.knot_offset(i), self.knot_size());
            c.rows_mut(i * self.knot_size(), self.knot_size())
                .copy_from(&(predicted - target));
        }
        Ok(c)
    }

    /// Defect Jacobian. The dependence on the target knot is exactly `-I`;
    /// source-knot and control columns use central differences per segment
    /// block (constant elsewhere, so no full re-evaluation is needed).
    fn defect_jacobian(
        &self,
        model: &HybridDynamicsModel,
        problem: &TranscriptionProblem,
        x: &DVector<f64>,
    ) -> DMatrix<f64> {
        let nk = self.knot_size();
        let mut jac = DMatrix::zeros(self.n_constraints(), self.n_vars());
        for i in 0..self.segments {
            let row = i * nk;
            for k in 0..nk {
                jac[(row + k, self.knot_offset(i) + k)] = -1.0;
            }
            let mut cols: Vec<usize> = Vec::with_capacity(nk + self.m);
            if i > 0 {
                cols.extend(self.knot_offset(i - 1)..self.knot_offset(i - 1) + nk);
            }
            cols.extend(self.control_offset(i)..self.control_offset(i) + self.m);
            for col in cols {
                let h = FD_STEP * (1.0 + x[col].abs());
                let mut xp = x.clone();
                xp[col] += h;
                let mut xm = x.clone();
                xm[col] -= h;
                let fp = self.segment_block(model, problem, &xp, i);
                let fm = self.segment_block(model, problem, &xm, i);
                let column = (fp - fm) / (2.0 * h);
                for k in 0..nk {
                    jac[(row + k, col)] = column[k];
                }
            }
        }
        jac
    }

    fn segment_block(
        &self,
        model: &HybridDynamicsModel,
        problem: &TranscriptionProblem,
        x: &DVector<f64>,
        segment: usize,
    ) -> DVector<f64> {
        let attempt = self
            .source_belief(model, problem, x, segment)
            .and_then(|source| {
                let u = self.control(x, segment);
                self.propagate_packed(model, problem, &source, &u)
            });
        attempt.unwrap_or_else(|_| DVector::from_element(self.knot_size(), f64::NAN))
    }

    /// Packed-variable objective; equals [`objective`] on the corresponding
    /// trajectory (the start-knot term is a constant offset).
    fn cost(&self, problem: &TranscriptionProblem, x: &DVector<f64>) -> f64 {
        let goal = &problem.goal_state;
        let start_err = problem.start_belief.mean() - goal;
        let mut total = quadratic_form(&problem.state_cost, &start_err);
        for i in 0..self.segments {
            let e = self.knot_mean(x, i) - goal;
            total += quadratic_form(&problem.state_cost, &e);
            total += quadratic_form(&problem.control_cost, &self.control(x, i));
        }
        let e = self.knot_mean(x, self.segments - 1) - goal;
        total += quadratic_form(&problem.terminal_cost, &e);
        let cov = self.knot_cov(x, self.segments - 1);
        total += problem.covariance_weight * cov.iter().map(|v| v * v).sum::<f64>();
        total
    }

    fn cost_gradient(&self, problem: &TranscriptionProblem, x: &DVector<f64>) -> DVector<f64> {
        let goal = &problem.goal_state;
        let q_sym = &problem.state_cost + problem.state_cost.transpose();
        let r_sym = &problem.control_cost + problem.control_cost.transpose();
        let qt_sym = &problem.terminal_cost + problem.terminal_cost.transpose();
        let mut grad = DVector::zeros(self.n_vars());
        for i in 0..self.segments {
            let e = self.knot_mean(x, i) - goal;
            grad.rows_mut(self.knot_offset(i), self.n).copy_from(&(&q_sym * &e));
            grad.rows_mut(self.control_offset(i), self.m)
                .copy_from(&(&r_sym * self.control(x, i)));
        }
        let last = self.segments - 1;
        let e = self.knot_mean(x, last) - goal;
        let mut terminal_mean = grad.rows(self.knot_offset(last), self.n).into_owned();
        terminal_mean += &qt_sym * &e;
        grad.rows_mut(self.knot_offset(last), self.n).copy_from(&terminal_mean);
        // d/ds of lambda * sum(Sigma_ab^2): off-diagonal triangle entries
        // appear twice in the full matrix.
        let cov = self.knot_cov(x, last);
        let mut idx = self.knot_offset(last) + self.n;
        for r in 0..self.n {
            for c in r..self.n {
                let factor = if r == c { 2.0 } else { 4.0 };
                grad[idx] = problem.covariance_weight * factor * cov[(r, c)];
                idx += 1;
            }
        }
        grad
    }

    /// The packed objective is quadratic, so its Hessian is a constant
    /// block-diagonal matrix: knot-mean blocks, control blocks, and the
    /// terminal covariance entries (off-diagonal triangle entries count twice
    /// in the Frobenius term, hence the doubled curvature).
    fn cost_hessian(&self, problem: &TranscriptionProblem) -> DMatrix<f64> {
        let q_sym = &problem.state_cost + problem.state_cost.transpose();
        let r_sym = &problem.control_cost + problem.control_cost.transpose();
        let qt_sym = &problem.terminal_cost + problem.terminal_cost.transpose();
        let mut h = DMatrix::zeros(self.n_vars(), self.n_vars());
        for i in 0..self.segments {
            let o = self.knot_offset(i);
            h.view_mut((o, o), (self.n, self.n)).copy_from(&q_sym);
            let co = self.control_offset(i);
            h.view_mut((co, co), (self.m, self.m)).copy_from(&r_sym);
        }
        let o = self.knot_offset(self.segments - 1);
        let mean_block = h.view((o, o), (self.n, self.n)).into_owned() + &qt_sym;
        h.view_mut((o, o), (self.n, self.n)).copy_from(&mean_block);
        let mut idx = o + self.n;
        for r in 0..self.n {
            for c in r..self.n {
                let factor = if r == c { 2.0 } else { 4.0 };
                h[(idx, idx)] = problem.covariance_weight * factor;
                idx += 1;
            }
        }
        h
    }

    fn unpack_trajectory(
        &self,
        model: &HybridDynamicsModel,
        problem: &TranscriptionProblem,
        x: &DVector<f64>,
    ) -> Result<BeliefTrajectory, DirectError> {
        let mut knots = Vec::with_capacity(self.segments + 1);
        knots.push((problem.start_belief.clone(), self.control(x, 0)));
        for i in 0..self.segments {
            let belief =
                self.expand_knot(model, &problem.filter, &self.knot_mean(x, i), &self.knot_cov(x, i))?;
            let u = if i + 1 < self.segments {
                self.control(x, i + 1)
            } else {
                DVector::zeros(self.m)
            };
            knots.push((belief, u));
        }
        let mut step_controls = Vec::with_capacity(self.segments * self.delta);
        for i in 0..self.segments {
            let u = problem.control_bounds.clamp(&self.control(x, i));
            for _ in 0..self.delta {
                step_controls.push(u.clone());
            }
        }
        let beliefs = mlo_rollout(model, &problem.start_belief, &step_controls, &problem.filter)?;
        let dense = beliefs
            .into_iter()
            .enumerate()
            .map(|(t, b)| {
                let u = step_controls.get(t).cloned().unwrap_or_else(|| DVector::zeros(self.m));
                (b, u)
            })
            .collect();
        let mut trajectory = BeliefTrajectory {
            knots,
            dense,
            objective_value: 0.0,
        };
        trajectory.objective_value = objective(&trajectory, problem);
        Ok(trajectory)
    }
}

/// Finite-difference step for the segment-map Jacobian. Larger than the
/// usual sqrt(eps) scale: the guard-conditioned moments are piecewise
/// constant at the sample resolution, and the step must average across that
/// granularity rather than amplify it.
const FD_STEP: f64 = 5e-3;

pub(crate) fn pack_triangle(cov: &DMatrix<f64>) -> DVector<f64> {
    let n = cov.nrows();
    let mut s = DVector::zeros(n * (n + 1) / 2);
    let mut idx = 0;
    for r in 0..n {
        for c in r..n {
            s[idx] = cov[(r, c)];
            idx += 1;
        }
    }
    s
}

fn unpack_triangle(n: usize, s: &[f64]) -> DMatrix<f64> {
    let mut cov = DMatrix::zeros(n, n);
    let mut idx = 0;
    for r in 0..n {
        for c in r..n {
            cov[(r, c)] = s[idx];
            cov[(c, r)] = s[idx];
            idx += 1;
        }
    }
    cov
}

/// Clamp eigenvalues to a small floor so optimiser iterates always expand to
/// a valid covariance.
fn psd_project(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = math::symmetrize(cov);
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 1e-9) {
        return sym;
    }
    let mut rebuilt = DMatrix::zeros(cov.nrows(), cov.ncols());
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        rebuilt += l.max(1e-9) * &v * v.transpose();
    }
    math::symmetrize(&rebuilt)
}
