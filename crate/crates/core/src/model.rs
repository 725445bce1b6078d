//! Mode-indexed dynamics models, guard regions, and hybrid beliefs.
//!
//! A [`HybridDynamicsModel`] couples one [`LocalModel`] per discrete mode with
//! a [`TransitionGraph`] whose edges carry [`GuardSet`] regions: the system may
//! switch from mode `q` to `q'` only where the guard `G(q, q')` holds. Every
//! mode keeps a self-loop guard describing where that mode itself is active;
//! together the self-loop guards must cover the operating domain.
//!
//! Beliefs are hybrid: a weighted Gaussian mixture over the continuous state
//! ([`GaussianComponent`]) paired with a categorical distribution over modes
//! ([`HybridBelief`]).

use crate::math;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use thiserror::Error;

/// Discrete mode index, `0..n_modes`.
pub type ModeId = usize;

/// Vector field `f(x, u)`.
pub type StateFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Jacobian of a vector field with respect to one argument, evaluated at `(x, u)`.
pub type StateJacFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Observation map `h(x)`.
pub type ObsFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Jacobian of the observation map at `x`.
pub type ObsJacFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Region membership predicate.
pub type RegionFn = Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{context}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("mode {0} has no self-loop guard")]
    MissingSelfLoop(ModeId),
    #[error("mode id {0} out of range (model has {1} modes)")]
    MissingMode(ModeId, usize),
    #[error("sampled domain point {0:?} is covered by no self-loop guard")]
    UncoveredDomain(Vec<f64>),
    #[error("covariance is not symmetric positive semidefinite")]
    NonPsdCovariance,
    #[error("weights must be nonnegative and sum to 1 (sum was {0})")]
    UnnormalizedWeights(f64),
    #[error("analytical jacobian {which} of mode {mode} deviates from finite differences by {rel_err:.3e}")]
    JacobianMismatch {
        mode: ModeId,
        which: &'static str,
        rel_err: f64,
    },
}

/// Axis-aligned box, used for the operating domain, control bounds, and the
/// sampling region attached to each guard.
#[derive(Debug, Clone)]
pub struct AxisBox {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len(), "box bounds must share a dimension");
        assert!(
            lo.iter().zip(&hi).all(|(a, b)| a <= b),
            "box lower bound exceeds upper bound"
        );
        Self {
            lo: DVector::from_vec(lo),
            hi: DVector::from_vec(hi),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn clamp(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .map(|(v, (lo, hi))| v.max(*lo).min(*hi)),
        )
    }

    pub fn diagonal(&self) -> f64 {
        (&self.hi - &self.lo).norm()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lo
                .iter()
                .zip(self.hi.iter())
                .map(|(lo, hi)| if lo == hi { *lo } else { rng.random_range(*lo..*hi) }),
        )
    }
}

/// Continuous-state region gating a discrete transition: an arbitrary
/// membership predicate plus a rectangular region used when the guard has to
/// be sampled.
#[derive(Clone)]
pub struct GuardSet {
    membership: RegionFn,
    pub bounds: AxisBox,
}

impl GuardSet {
    pub fn new(membership: RegionFn, bounds: AxisBox) -> Self {
        Self { membership, bounds }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        (self.membership)(x)
    }
}

impl std::fmt::Debug for GuardSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GuardSet").field("bounds", &self.bounds).finish()
    }
}

/// Directed mode-transition structure. Dense `n x n` storage; absent edges are
/// `None`. Construction requires a self-loop guard for every mode.
#[derive(Debug, Clone)]
pub struct TransitionGraph {
    n_modes: usize,
    edges: Vec<Option<GuardSet>>,
}

impl TransitionGraph {
    pub fn new(n_modes: usize, edges: Vec<(ModeId, ModeId, GuardSet)>) -> Result<Self, ModelError> {
        let mut dense: Vec<Option<GuardSet>> = vec![None; n_modes * n_modes];
        for (from, to, guard) in edges {
            if from >= n_modes {
                return Err(ModelError::MissingMode(from, n_modes));
            }
            if to >= n_modes {
                return Err(ModelError::MissingMode(to, n_modes));
            }
            dense[from * n_modes + to] = Some(guard);
        }
        let graph = Self {
            n_modes,
            edges: dense,
        };
        for q in 0..n_modes {
            if graph.edge(q, q).is_none() {
                return Err(ModelError::MissingSelfLoop(q));
            }
        }
        Ok(graph)
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn edge(&self, from: ModeId, to: ModeId) -> Option<&GuardSet> {
        self.edges[from * self.n_modes + to].as_ref()
    }

    /// Self-loop guard, i.e. the region where `mode` is active.
    pub fn region(&self, mode: ModeId) -> &GuardSet {
        self.edge(mode, mode)
            .expect("constructor guarantees self-loops")
    }
}

/// Per-mode dynamics and observation model:
/// `x' = f(x, u) + v`, `z = h(x) + w`, with `v ~ N(0, process_noise)` and
/// `w ~ N(0, obs_noise)`. Jacobians are supplied analytically and can be
/// cross-checked with [`validate_jacobians`].
#[derive(Clone)]
pub struct LocalModel {
    pub mode: ModeId,
    pub dynamics: StateFn,
    pub dynamics_jac_x: StateJacFn,
    pub dynamics_jac_u: StateJacFn,
    pub observation: ObsFn,
    pub observation_jac: ObsJacFn,
    pub process_noise: DMatrix<f64>,
    pub obs_noise: DMatrix<f64>,
}

impl LocalModel {
    /// Linear-Gaussian mode: `x' = a x + b u + v`, `z = c x + w`.
    pub fn linear(
        mode: ModeId,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        process_noise: DMatrix<f64>,
        obs_noise: DMatrix<f64>,
    ) -> Self {
        let (af, bf, cf) = (a.clone(), b.clone(), c.clone());
        let (aj, bj, cj) = (a, b, c);
        Self {
            mode,
            dynamics: Arc::new(move |x, u| &af * x + &bf * u),
            dynamics_jac_x: Arc::new(move |_, _| aj.clone()),
            dynamics_jac_u: Arc::new(move |_, _| bj.clone()),
            observation: Arc::new(move |x| &cf * x),
            observation_jac: Arc::new(move |_| cj.clone()),
            process_noise,
            obs_noise,
        }
    }
}

impl std::fmt::Debug for LocalModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalModel").field("mode", &self.mode).finish()
    }
}

/// Full hybrid system: one local model per mode, the transition graph, the
/// operating domain, and the admissible control box.
///
/// All fields are immutable after construction; closures must be re-entrant,
/// so the model can be shared freely across worker threads.
#[derive(Debug, Clone)]
pub struct HybridDynamicsModel {
    pub state_dim: usize,
    pub control_dim: usize,
    pub obs_dim: usize,
    pub locals: Vec<LocalModel>,
    pub graph: TransitionGraph,
    pub domain: AxisBox,
    pub control_bounds: AxisBox,
}

impl HybridDynamicsModel {
    /// Validating constructor. Checks id/dimension consistency for every mode
    /// (by probing the closures at the domain centre) and that the self-loop
    /// guards jointly cover the domain, tested on 1000 seeded samples.
    pub fn new(
        locals: Vec<LocalModel>,
        graph: TransitionGraph,
        domain: AxisBox,
        control_bounds: AxisBox,
    ) -> Result<Self, ModelError> {
        let n_modes = graph.n_modes();
        if locals.len() != n_modes {
            return Err(ModelError::DimensionMismatch {
                context: "local model count vs graph mode count",
                expected: n_modes,
                got: locals.len(),
            });
        }
        for (i, lm) in locals.iter().enumerate() {
            if lm.mode != i {
                return Err(ModelError::MissingMode(lm.mode, n_modes));
            }
        }
        let state_dim = domain.dim();
        let control_dim = control_bounds.dim();
        let x0 = 0.5 * (&domain.lo + &domain.hi);
        let u0 = DVector::zeros(control_dim);
        let obs_dim = (locals[0].observation)(&x0).len();
        for lm in &locals {
            // Shape checks first: the jacobian closures only report shapes,
            // while probing the dynamics with a wrongly-sized control would
            // abort inside the closure itself.
            check_dim("process_noise rows", lm.process_noise.nrows(), state_dim)?;
            check_dim("process_noise cols", lm.process_noise.ncols(), state_dim)?;
            let ax = (lm.dynamics_jac_x)(&x0, &u0);
            check_dim("dynamics_jac_x rows", ax.nrows(), state_dim)?;
            check_dim("dynamics_jac_x cols", ax.ncols(), state_dim)?;
            let bu = (lm.dynamics_jac_u)(&x0, &u0);
            check_dim("dynamics_jac_u rows", bu.nrows(), state_dim)?;
            check_dim("dynamics_jac_u cols", bu.ncols(), control_dim)?;
            let c = (lm.observation_jac)(&x0);
            check_dim("observation_jac rows", c.nrows(), obs_dim)?;
            check_dim("observation_jac cols", c.ncols(), state_dim)?;
            check_dim("obs_noise rows", lm.obs_noise.nrows(), obs_dim)?;
            check_dim("obs_noise cols", lm.obs_noise.ncols(), obs_dim)?;
            check_dim("dynamics output", (lm.dynamics)(&x0, &u0).len(), state_dim)?;
            check_dim("observation output", (lm.observation)(&x0).len(), obs_dim)?;
        }
        let model = Self {
            state_dim,
            control_dim,
            obs_dim,
            locals,
            graph,
            domain,
            control_bounds,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0x_C0FE);
        for _ in 0..1000 {
            let x = model.domain.sample(&mut rng);
            if (0..n_modes).all(|q| !model.graph.region(q).contains(&x)) {
                return Err(ModelError::UncoveredDomain(x.iter().copied().collect()));
            }
        }
        Ok(model)
    }

    pub fn n_modes(&self) -> usize {
        self.graph.n_modes()
    }

    pub fn local(&self, mode: ModeId) -> Result<&LocalModel, ModelError> {
        self.locals
            .get(mode)
            .ok_or(ModelError::MissingMode(mode, self.n_modes()))
    }
}

fn check_dim(context: &'static str, got: usize, expected: usize) -> Result<(), ModelError> {
    if got == expected {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}

/// Normalised indicator vector telling which modes are active at `x`: each
/// covering self-loop guard gets equal share, so a point on the boundary of
/// two regions reports 0.5 for each.
pub fn mode_membership(
    model: &HybridDynamicsModel,
    x: &DVector<f64>,
) -> Result<DVector<f64>, ModelError> {
    let n = model.n_modes();
    let mut v = DVector::zeros(n);
    for q in 0..n {
        if model.graph.region(q).contains(x) {
            v[q] = 1.0;
        }
    }
    let total: f64 = v.sum();
    if total == 0.0 {
        return Err(ModelError::UncoveredDomain(x.iter().copied().collect()));
    }
    Ok(v / total)
}

/// Gaussian mixture component with its weight.
#[derive(Debug, Clone)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, ModelError> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(ModelError::DimensionMismatch {
                context: "component covariance",
                expected: mean.len(),
                got: cov.nrows().max(cov.ncols()),
            });
        }
        if !math::is_psd(&cov, 1e-9) {
            return Err(ModelError::NonPsdCovariance);
        }
        if !(weight >= 0.0) {
            return Err(ModelError::UnnormalizedWeights(weight));
        }
        Ok(Self { weight, mean, cov })
    }
}

/// Hybrid belief: Gaussian mixture over the continuous state plus a
/// categorical distribution over modes. Component weights and mode
/// probabilities each sum to one (checked to 1e-9 at construction).
#[derive(Debug, Clone)]
pub struct HybridBelief {
    pub components: Vec<GaussianComponent>,
    pub mode_probs: DVector<f64>,
}

impl HybridBelief {
    pub fn new(
        components: Vec<GaussianComponent>,
        mode_probs: DVector<f64>,
    ) -> Result<Self, ModelError> {
        assert!(!components.is_empty(), "belief needs at least one component");
        let wsum: f64 = components.iter().map(|c| c.weight).sum();
        if (wsum - 1.0).abs() > 1e-9 {
            return Err(ModelError::UnnormalizedWeights(wsum));
        }
        let psum: f64 = mode_probs.sum();
        if (psum - 1.0).abs() > 1e-9 || mode_probs.iter().any(|p| *p < 0.0) {
            return Err(ModelError::UnnormalizedWeights(psum));
        }
        Ok(Self {
            components,
            mode_probs,
        })
    }

    /// Single-component helper.
    pub fn gaussian(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        mode_probs: DVector<f64>,
    ) -> Result<Self, ModelError> {
        Self::new(vec![GaussianComponent::new(1.0, mean, cov)?], mode_probs)
    }

    pub fn state_dim(&self) -> usize {
        self.components[0].mean.len()
    }

    /// Mixture mean.
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.state_dim());
        for c in &self.components {
            m += c.weight * &c.mean;
        }
        m
    }

    /// Moment-matched mixture covariance (component covariances plus spread).
    pub fn cov(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let d = self.state_dim();
        let mut cov = DMatrix::zeros(d, d);
        for c in &self.components {
            let delta = &c.mean - &mean;
            cov += c.weight * (&c.cov + &delta * delta.transpose());
        }
        math::symmetrize(&cov)
    }

    pub fn max_cov_eigenvalue(&self) -> f64 {
        self.cov()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    }
}

/// Most probable mode under the belief's categorical part; ties resolve to the
/// lowest mode id.
pub fn most_likely_mode(belief: &HybridBelief) -> ModeId {
    let mut best = 0;
    for (q, p) in belief.mode_probs.iter().enumerate() {
        if *p > belief.mode_probs[best] {
            best = q;
        }
    }
    best
}

/// Cross-check every local model's analytical jacobians against central
/// finite differences at `n_samples` seeded points in the domain/control box.
/// Tolerance is relative (1e-5) against the larger of the two norms.
pub fn validate_jacobians(
    model: &HybridDynamicsModel,
    n_samples: usize,
    seed: u64,
) -> Result<(), ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_samples {
        let x = model.domain.sample(&mut rng);
        let u = model.control_bounds.sample(&mut rng);
        for lm in &model.locals {
            let dyn_f = lm.dynamics.clone();
            let uu = u.clone();
            let fd_a = math::jacobian_fd(move |xx| dyn_f(xx, &uu), &x, 1e-6);
            check_jac(lm.mode, "dynamics_jac_x", &(lm.dynamics_jac_x)(&x, &u), &fd_a)?;
            let dyn_f = lm.dynamics.clone();
            let xx = x.clone();
            let fd_b = math::jacobian_fd(move |uu| dyn_f(&xx, uu), &u, 1e-6);
            check_jac(lm.mode, "dynamics_jac_u", &(lm.dynamics_jac_u)(&x, &u), &fd_b)?;
            let obs_f = lm.observation.clone();
            let fd_c = math::jacobian_fd(move |xx| obs_f(xx), &x, 1e-6);
            check_jac(lm.mode, "observation_jac", &(lm.observation_jac)(&x), &fd_c)?;
        }
    }
    Ok(())
}

fn check_jac(
    mode: ModeId,
    which: &'static str,
    analytic: &DMatrix<f64>,
    fd: &DMatrix<f64>,
) -> Result<(), ModelError> {
    let scale = analytic.norm().max(fd.norm()).max(1.0);
    let rel_err = (analytic - fd).norm() / scale;
    if rel_err > 1e-5 {
        return Err(ModelError::JacobianMismatch {
            mode,
            which,
            rel_err,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn half_plane(lo_x: f64, hi_x: f64, domain: &AxisBox) -> GuardSet {
        GuardSet::new(
            Arc::new(move |x: &DVector<f64>| x[0] >= lo_x && x[0] <= hi_x),
            domain.clone(),
        )
    }

    fn two_mode_model() -> HybridDynamicsModel {
        let domain = AxisBox::new(vec![-5.0, -5.0], vec![5.0, 5.0]);
        let controls = AxisBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]);
        let id = DMatrix::<f64>::identity(2, 2);
        let locals = vec![
            LocalModel::linear(0, id.clone(), id.clone(), id.clone(), DMatrix::zeros(2, 2), id.clone()),
            LocalModel::linear(1, id.clone(), id.clone(), id.clone(), DMatrix::zeros(2, 2), id.clone()),
        ];
        let graph = TransitionGraph::new(
            2,
            vec![
                (0, 0, half_plane(f64::NEG_INFINITY, 0.0, &domain)),
                (1, 1, half_plane(0.0, f64::INFINITY, &domain)),
                (0, 1, half_plane(0.0, f64::INFINITY, &domain)),
                (1, 0, half_plane(f64::NEG_INFINITY, 0.0, &domain)),
            ],
        )
        .unwrap();
        HybridDynamicsModel::new(locals, graph, domain, controls).unwrap()
    }

    #[test]
    fn membership_splits_evenly_on_shared_boundary() {
        let model = two_mode_model();
        let w = mode_membership(&model, &DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert_relative_eq!(w[0], 0.5);
        assert_relative_eq!(w[1], 0.5);
        let w = mode_membership(&model, &DVector::from_vec(vec![-1.0, 0.0])).unwrap();
        assert_relative_eq!(w[0], 1.0);
        assert_relative_eq!(w[1], 0.0);
    }

    #[test]
    fn membership_always_normalised_over_domain_samples() {
        let model = two_mode_model();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let x = model.domain.sample(&mut rng);
            let w = mode_membership(&model, &x).unwrap();
            assert_relative_eq!(w.sum(), 1.0, epsilon = 1e-12);
            assert!(w.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn tie_break_prefers_lowest_mode_id() {
        let belief = HybridBelief::gaussian(
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![0.25, 0.5, 0.25]),
        )
        .unwrap();
        assert_eq!(most_likely_mode(&belief), 1);
        let tied = HybridBelief::gaussian(
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![0.5, 0.5]),
        )
        .unwrap();
        assert_eq!(most_likely_mode(&tied), 0);
    }

    #[test]
    fn missing_self_loop_rejected() {
        let domain = AxisBox::new(vec![-1.0], vec![1.0]);
        let all = GuardSet::new(Arc::new(|_: &DVector<f64>| true), domain.clone());
        let err = TransitionGraph::new(2, vec![(0, 0, all.clone()), (0, 1, all)]).unwrap_err();
        assert!(matches!(err, ModelError::MissingSelfLoop(1)));
    }

    #[test]
    fn uncovered_domain_rejected() {
        let domain = AxisBox::new(vec![-5.0, -5.0], vec![5.0, 5.0]);
        let controls = AxisBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]);
        let id = DMatrix::<f64>::identity(2, 2);
        let local = LocalModel::linear(
            0,
            id.clone(),
            id.clone(),
            id.clone(),
            DMatrix::zeros(2, 2),
            id.clone(),
        );
        // Guard covers only the left half: right-half samples are orphaned.
        let guard = GuardSet::new(Arc::new(|x: &DVector<f64>| x[0] <= 0.0), domain.clone());
        let graph = TransitionGraph::new(1, vec![(0, 0, guard)]).unwrap();
        let err = HybridDynamicsModel::new(vec![local], graph, domain, controls).unwrap_err();
        assert!(matches!(err, ModelError::UncoveredDomain(_)));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let domain = AxisBox::new(vec![-5.0, -5.0], vec![5.0, 5.0]);
        let controls = AxisBox::new(vec![-1.0], vec![1.0]);
        let id = DMatrix::<f64>::identity(2, 2);
        // Control jacobian is 2x2 while the control box is one-dimensional.
        let local = LocalModel::linear(
            0,
            id.clone(),
            id.clone(),
            id.clone(),
            DMatrix::zeros(2, 2),
            id.clone(),
        );
        let guard = GuardSet::new(Arc::new(|_: &DVector<f64>| true), domain.clone());
        let graph = TransitionGraph::new(1, vec![(0, 0, guard)]).unwrap();
        let err = HybridDynamicsModel::new(vec![local], graph, domain, controls).unwrap_err();
        assert!(matches!(err, ModelError::DimensionMismatch { .. }));
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        // Nonlinear single-mode model: x' = x + sin(x) .* u elementwise.
        let domain = AxisBox::new(vec![-3.0, -3.0], vec![3.0, 3.0]);
        let controls = AxisBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]);
        let local = LocalModel {
            mode: 0,
            dynamics: Arc::new(|x: &DVector<f64>, u: &DVector<f64>| {
                DVector::from_iterator(2, (0..2).map(|i| x[i] + x[i].sin() * u[i]))
            }),
            dynamics_jac_x: Arc::new(|x: &DVector<f64>, u: &DVector<f64>| {
                DMatrix::from_diagonal(&DVector::from_iterator(
                    2,
                    (0..2).map(|i| 1.0 + x[i].cos() * u[i]),
                ))
            }),
            dynamics_jac_u: Arc::new(|x: &DVector<f64>, _u: &DVector<f64>| {
                DMatrix::from_diagonal(&DVector::from_iterator(2, (0..2).map(|i| x[i].sin())))
            }),
            observation: Arc::new(|x: &DVector<f64>| x.clone()),
            observation_jac: Arc::new(|_x: &DVector<f64>| DMatrix::identity(2, 2)),
            process_noise: DMatrix::zeros(2, 2),
            obs_noise: DMatrix::identity(2, 2),
        };
        let guard = GuardSet::new(Arc::new(|_: &DVector<f64>| true), domain.clone());
        let graph = TransitionGraph::new(1, vec![(0, 0, guard)]).unwrap();
        let model = HybridDynamicsModel::new(vec![local], graph, domain, controls).unwrap();
        validate_jacobians(&model, 100, 42).unwrap();
    }

    #[test]
    fn belief_constructors_reject_bad_inputs() {
        let nonpsd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            GaussianComponent::new(1.0, DVector::zeros(2), nonpsd),
            Err(ModelError::NonPsdCovariance)
        ));
        let err = HybridBelief::gaussian(
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![0.5, 0.4]),
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::UnnormalizedWeights(_)));
    }
}
