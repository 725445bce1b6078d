//! Two-level planning: rank discrete mode sequences, then stitch short
//! transcription solves through per-mode subgoals.
//!
//! The upper level enumerates every repetition-free mode sequence (each
//! finished by a synthetic goal state), drops sequences with geometrically
//! infeasible consecutive transitions, and converts each survivor into
//! continuous subgoals: one representative point per visited mode — the
//! minimiser of that mode's divergence cost map — plus the task goal. The
//! lower level chains belief-space transcription solves through the subgoals.
//! Candidates are scored by the Hellinger distance between the final sampled
//! mode confidence and the all-mass-at-goal target, plus a path-length
//! penalty, and the cheapest candidate's trajectory is returned.

use crate::direct::{
    plan_direct, BeliefTrajectory, DirectError, TranscriptionProblem,
};
use crate::filter::{sample_belief, FilterConfig, FilterError};
use crate::model::{
    mode_membership, AxisBox, HybridBelief, HybridDynamicsModel, ModeId, ModelError,
};
use nalgebra::{DMatrix, DVector};
use rand::{RngExt as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

mod de;
mod rbf;

pub use de::DeSettings;
pub use rbf::RbfInterpolant;

#[derive(Debug, Error)]
pub enum HierarchicalError {
    #[error("probability vectors have different lengths: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no sample found inside the guard region of mode {0}")]
    EmptyGuardRegion(ModeId),
    #[error("every candidate plan failed its lower-level solves")]
    NoFeasiblePlan,
    #[error(transparent)]
    Direct(#[from] DirectError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Spherical region a trajectory should finish in.
#[derive(Debug, Clone)]
pub struct GoalRegion {
    pub center: DVector<f64>,
    pub radius: f64,
}

impl GoalRegion {
    pub fn new(center: DVector<f64>, radius: f64) -> Self {
        assert!(radius > 0.0, "goal radius must be positive");
        Self { center, radius }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        (x - &self.center).norm() <= self.radius
    }
}

/// Ordered mode visits ending with the synthetic goal state.
#[derive(Debug, Clone, PartialEq)]
pub struct HighLevelPlan {
    /// Mode ids; the last entry is the goal pseudo-mode (`model.n_modes()`).
    pub sequence: Vec<ModeId>,
    /// Hellinger divergence of the final confidence from the goal target.
    pub divergence_cost: f64,
    /// `lambda * number of intermediate modes`.
    pub path_length_penalty: f64,
}

impl HighLevelPlan {
    pub fn total_cost(&self) -> f64 {
        self.divergence_cost + self.path_length_penalty
    }
}

/// Divergence-cost samples for one mode plus the fitted surrogate used for
/// global optimisation over the domain box.
#[derive(Debug, Clone)]
pub struct ConfidenceMap {
    pub samples: Vec<(DVector<f64>, DVector<f64>)>,
    pub costs: Vec<f64>,
    pub interpolator: RbfInterpolant,
    pub domain: AxisBox,
    pub optimizer_seed: u64,
    pub de: DeSettings,
}

/// Knobs for the upper level. `transcription` is the lower-level template:
/// its horizon is the full planning horizon, its segment length fixes the
/// subgoal-horizon granularity, and its start/goal are overwritten per leg.
#[derive(Debug, Clone)]
pub struct HierarchicalConfig {
    pub transcription: TranscriptionProblem,
    /// Domain points sampled per confidence map.
    pub n_map_samples: usize,
    /// Neighborhood draws per confidence estimate.
    pub n_conf_samples: usize,
    /// Neighborhood radius as a fraction of the domain diagonal.
    pub conf_radius_frac: f64,
    /// Per-region draws for the transition-feasibility separation test.
    pub n_sep_samples: usize,
    /// Touch distance as a fraction of the domain diagonal.
    pub d_touch_frac: f64,
    /// Path-length penalty per intermediate mode.
    pub lambda_path: f64,
    /// Draws used to estimate the final confidence distribution.
    pub n_final_samples: usize,
    /// Smallest horizon granted to a single leg, before delta-rounding.
    pub min_subgoal_horizon: usize,
    /// Terminal-cost weight (times identity) for intermediate legs. A
    /// subgoal is a waypoint to reach and localize near, not a point worth
    /// the template's full terminal pin; a soft pull lets a contact-seeking
    /// leg settle at the constraint surface instead of burying the belief
    /// deep inside it.
    pub leg_terminal_weight: f64,
    /// Iteration cap for each subgoal leg's solve. Legs are short-horizon
    /// subproblems that converge or plateau quickly, so they get a smaller
    /// budget than the template grants a monolithic solve.
    pub leg_max_iterations: usize,
    pub rng_seed: u64,
    pub de: DeSettings,
}

impl HierarchicalConfig {
    pub fn new(transcription: TranscriptionProblem) -> Self {
        Self {
            transcription,
            n_map_samples: 400,
            n_conf_samples: 300,
            conf_radius_frac: 0.05,
            n_sep_samples: 2000,
            d_touch_frac: 0.01,
            lambda_path: 0.05,
            n_final_samples: 2000,
            min_subgoal_horizon: 5,
            leg_terminal_weight: 50.0,
            leg_max_iterations: 40,
            rng_seed: 0x9A1B_0001,
            de: DeSettings::default(),
        }
    }
}

/// Hellinger distance `(1/sqrt(2)) * |sqrt(p) - sqrt(q)|`, in `[0, 1]`.
pub fn hellinger(p: &DVector<f64>, q: &DVector<f64>) -> Result<f64, HierarchicalError> {
    if p.len() != q.len() {
        return Err(HierarchicalError::DimensionMismatch(p.len(), q.len()));
    }
    let sum: f64 = p
        .iter()
        .zip(q.iter())
        .map(|(a, b)| (a.max(0.0).sqrt() - b.max(0.0).sqrt()).powi(2))
        .sum();
    Ok((0.5 * sum).sqrt().min(1.0))
}

/// All repetition-free ordered mode subsets, each closed with the goal
/// pseudo-mode; sequences with a geometrically infeasible consecutive pair
/// are dropped.
pub fn enumerate_plans(
    model: &HybridDynamicsModel,
    goal_mode: ModeId,
    config: &HierarchicalConfig,
) -> Result<Vec<HighLevelPlan>, HierarchicalError> {
    let n = model.n_modes();
    let mut feasible = vec![vec![true; n]; n];
    for q in 0..n {
        for r in 0..n {
            if q != r {
                feasible[q][r] = feasible_transition(model, q, r, config)?;
            }
        }
    }
    let modes: Vec<ModeId> = (0..n).collect();
    let sequences = permutations_without_repetition(&modes, &|a, b| feasible[a][b]);
    Ok(sequences
        .into_iter()
        .map(|mut seq| {
            seq.push(goal_mode);
            HighLevelPlan {
                sequence: seq,
                divergence_cost: 0.0,
                path_length_penalty: 0.0,
            }
        })
        .collect())
}

/// Ordered subsets (all lengths, including empty) whose consecutive pairs
/// pass the feasibility predicate.
fn permutations_without_repetition(
    modes: &[ModeId],
    feasible: &dyn Fn(ModeId, ModeId) -> bool,
) -> Vec<Vec<ModeId>> {
    let mut out = vec![Vec::new()];
    let mut frontier: Vec<Vec<ModeId>> = vec![Vec::new()];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for prefix in &frontier {
            for &m in modes {
                if prefix.contains(&m) {
                    continue;
                }
                if let Some(&last) = prefix.last() {
                    if !feasible(last, m) {
                        continue;
                    }
                }
                let mut extended = prefix.clone();
                extended.push(m);
                out.push(extended.clone());
                next.push(extended);
            }
        }
        frontier = next;
    }
    out
}

/// Geometric touch test: sample both self-loop guard regions and compare the
/// minimum pairwise distance against the touch threshold.
pub fn feasible_transition(
    model: &HybridDynamicsModel,
    q: ModeId,
    r: ModeId,
    config: &HierarchicalConfig,
) -> Result<bool, HierarchicalError> {
    let a = sample_region(model, q, config)?;
    let b = sample_region(model, r, config)?;
    let d_touch = config.d_touch_frac * model.domain.diagonal();
    let mut min_sq = f64::INFINITY;
    let threshold_sq = d_touch * d_touch;
    for pa in &a {
        for pb in &b {
            let d = (pa - pb).norm_squared();
            if d < min_sq {
                min_sq = d;
                if min_sq <= threshold_sq {
                    return Ok(true);
                }
            }
        }
    }
    Ok(min_sq <= threshold_sq)
}

/// Rejection-sample points of a mode's active region inside its bounding box.
fn sample_region(
    model: &HybridDynamicsModel,
    mode: ModeId,
    config: &HierarchicalConfig,
) -> Result<Vec<DVector<f64>>, HierarchicalError> {
    let guard = model.graph.region(mode);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ (mode as u64).wrapping_mul(0x9E37_79B9));
    let mut out = Vec::with_capacity(config.n_sep_samples);
    let budget = config.n_sep_samples * 50;
    let mut draws = 0;
    while out.len() < config.n_sep_samples && draws < budget {
        let x = guard.bounds.sample(&mut rng);
        draws += 1;
        if guard.contains(&x) {
            out.push(x);
        }
    }
    if out.is_empty() {
        return Err(HierarchicalError::EmptyGuardRegion(mode));
    }
    Ok(out)
}

/// Sampled mode-membership average over a neighborhood ball: the planner's
/// local confidence of being in each mode near `x`.
pub fn confidence_at(
    model: &HybridDynamicsModel,
    x: &DVector<f64>,
    radius: f64,
    n_samples: usize,
    seed: u64,
) -> Result<DVector<f64>, HierarchicalError> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = x.len();
    let mut acc = DVector::zeros(model.n_modes());
    let mut counted = 0usize;
    for _ in 0..n_samples {
        // Uniform draw from the ball around x.
        let mut dir = DVector::from_iterator(
            dim,
            (0..dim).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)),
        );
        let norm = dir.norm();
        if norm > 0.0 {
            dir /= norm;
        }
        let u: f64 = rng.random();
        let point = x + radius * u.powf(1.0 / dim as f64) * dir;
        if let Ok(w) = mode_membership(model, &point) {
            acc += w;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(HierarchicalError::Filter(FilterError::NumericalFailure(
            "no confidence sample fell in any mode region",
        )));
    }
    Ok(acc / counted as f64)
}

/// Build the divergence cost map of one mode: sample the domain, estimate
/// local confidence at each point, take the Hellinger distance to full
/// confidence in `mode_k`, and fit the RBF surrogate.
pub fn build_confidence_map(
    model: &HybridDynamicsModel,
    mode_k: ModeId,
    config: &HierarchicalConfig,
) -> Result<ConfidenceMap, HierarchicalError> {
    if mode_k >= model.n_modes() {
        return Err(HierarchicalError::Model(ModelError::MissingMode(
            mode_k,
            model.n_modes(),
        )));
    }
    let radius = config.conf_radius_frac * model.domain.diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ 0xC0F1_DE00 ^ mode_k as u64);
    let mut target = DVector::zeros(model.n_modes());
    target[mode_k] = 1.0;

    let points: Vec<DVector<f64>> = (0..config.n_map_samples)
        .map(|_| model.domain.sample(&mut rng))
        .collect();
    let results: Vec<(DVector<f64>, f64)> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let w = confidence_at(
                model,
                x,
                radius,
                config.n_conf_samples,
                config.rng_seed ^ ((i as u64) << 20) ^ mode_k as u64,
            )?;
            let c = hellinger(&w, &target)?;
            Ok((w, c))
        })
        .collect::<Result<_, HierarchicalError>>()?;

    let costs: Vec<f64> = results.iter().map(|(_, c)| *c).collect();
    let samples: Vec<(DVector<f64>, DVector<f64>)> = points
        .iter()
        .cloned()
        .zip(results.into_iter().map(|(w, _)| w))
        .collect();
    let interpolator = RbfInterpolant::fit(points, &DVector::from_vec(costs.clone()))
        .ok_or(HierarchicalError::Filter(FilterError::NumericalFailure(
            "confidence-map interpolation failed",
        )))?;
    Ok(ConfidenceMap {
        samples,
        costs,
        interpolator,
        domain: model.domain.clone(),
        optimizer_seed: config.rng_seed ^ 0xDE00 ^ ((mode_k as u64) << 8),
        de: config.de.clone(),
    })
}

/// Global minimiser of the map's surrogate over the domain box, via
/// differential evolution.
pub fn best_representative_point(cmap: &ConfidenceMap) -> DVector<f64> {
    de::minimize(
        |x| cmap.interpolator.eval(x),
        &cmap.domain,
        &cmap.de,
        cmap.optimizer_seed,
    )
}

/// Continuous subgoals of a plan: the representative point of every
/// intermediate mode, then the task goal.
pub fn plan_to_goals(
    model: &HybridDynamicsModel,
    plan: &HighLevelPlan,
    goal: &GoalRegion,
    config: &HierarchicalConfig,
) -> Result<Vec<DVector<f64>>, HierarchicalError> {
    let mut goals = Vec::with_capacity(plan.sequence.len());
    for &mode in &plan.sequence {
        if mode == model.n_modes() {
            goals.push(goal.center.clone());
        } else {
            let cmap = build_confidence_map(model, mode, config)?;
            goals.push(best_representative_point(&cmap));
        }
    }
    Ok(goals)
}

/// Sampled confidence distribution over modes plus the goal pseudo-mode:
/// draws from the final continuous belief land either inside the goal
/// neighborhood (goal pseudo-mode mass) or contribute their mode membership.
pub fn final_confidence(
    model: &HybridDynamicsModel,
    belief: &HybridBelief,
    goal: &GoalRegion,
    config: &HierarchicalConfig,
) -> Result<DVector<f64>, HierarchicalError> {
    let cfg = FilterConfig {
        n_guard_samples: config.n_final_samples,
        rng_seed: config.rng_seed ^ 0xF1AA_0001,
        ..config.transcription.filter.clone()
    };
    let samples = sample_belief(belief, &cfg)?;
    let n = model.n_modes();
    let mut acc = DVector::zeros(n + 1);
    let mut counted = 0usize;
    for x in samples.blocks.iter().flatten() {
        counted += 1;
        if goal.contains(x) {
            acc[n] += 1.0;
        } else if let Ok(w) = mode_membership(model, x) {
            for q in 0..n {
                acc[q] += w[q];
            }
        } else {
            counted -= 1;
        }
    }
    if counted == 0 {
        return Err(HierarchicalError::Filter(FilterError::NumericalFailure(
            "no usable sample for the final confidence",
        )));
    }
    Ok(acc / counted as f64)
}

/// Evaluate every candidate plan and return the cheapest trajectory with its
/// plan. Candidates are scored with `hellinger(final confidence, all mass at
/// goal) + lambda * intermediate-mode count`; failed lower-level solves
/// disqualify a candidate. Ties break on the lexicographically smallest
/// sequence, so the result is independent of evaluation order.
pub fn rank_and_plan(
    model: &HybridDynamicsModel,
    start_belief: &HybridBelief,
    goal: &GoalRegion,
    config: &HierarchicalConfig,
) -> Result<(BeliefTrajectory, HighLevelPlan), HierarchicalError> {
    let goal_mode = model.n_modes();
    let candidates = enumerate_plans(model, goal_mode, config)?;

    // Shared per-mode subgoals: maps are identical across candidates.
    let visited: Vec<ModeId> = (0..model.n_modes())
        .filter(|m| candidates.iter().any(|p| p.sequence.contains(m)))
        .collect();
    let representatives: Vec<(ModeId, DVector<f64>)> = visited
        .par_iter()
        .map(|&mode| {
            let cmap = build_confidence_map(model, mode, config)?;
            Ok((mode, best_representative_point(&cmap)))
        })
        .collect::<Result<_, HierarchicalError>>()?;
    let representative = |mode: ModeId| -> &DVector<f64> {
        &representatives.iter().find(|(m, _)| *m == mode).expect("cached mode").1
    };

    let evaluated: Vec<(HighLevelPlan, BeliefTrajectory)> = candidates
        .par_iter()
        .filter_map(|plan| {
            let goals: Vec<DVector<f64>> = plan
                .sequence
                .iter()
                .map(|&m| {
                    if m == goal_mode {
                        goal.center.clone()
                    } else {
                        representative(m).clone()
                    }
                })
                .collect();
            let trajectory = chain_subgoal_solves(model, start_belief, &goals, config).ok()?;
            let confidence = final_confidence(model, trajectory.final_belief(), goal, config).ok()?;
            let mut desired = DVector::zeros(goal_mode + 1);
            desired[goal_mode] = 1.0;
            let divergence = hellinger(&confidence, &desired).ok()?;
            let scored = HighLevelPlan {
                sequence: plan.sequence.clone(),
                divergence_cost: divergence,
                path_length_penalty: config.lambda_path * (plan.sequence.len() - 1) as f64,
            };
            Some((scored, trajectory))
        })
        .collect();

    evaluated
        .into_iter()
        .min_by(|(a, _), (b, _)| {
            a.total_cost()
                .partial_cmp(&b.total_cost())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.sequence.cmp(&b.sequence))
        })
        .map(|(plan, trajectory)| (trajectory, plan))
        .ok_or(HierarchicalError::NoFeasiblePlan)
}

/// Solve one transcription problem per consecutive subgoal, chaining each
/// leg's final belief into the next leg's start.
fn chain_subgoal_solves(
    model: &HybridDynamicsModel,
    start_belief: &HybridBelief,
    goals: &[DVector<f64>],
    config: &HierarchicalConfig,
) -> Result<BeliefTrajectory, HierarchicalError> {
    let template = &config.transcription;
    let delta = template.segment_length().max(1);
    let per_leg = (template.horizon / goals.len().max(1)).max(config.min_subgoal_horizon);
    let horizon = per_leg.div_ceil(delta) * delta;
    let segments = horizon / delta;

    let mut current = start_belief.clone();
    let mut knots: Vec<(HybridBelief, DVector<f64>)> = Vec::new();
    let mut dense: Vec<(HybridBelief, DVector<f64>)> = Vec::new();
    let mut objective_value = 0.0;
    for (i, g) in goals.iter().enumerate() {
        let mut leg = template.clone();
        leg.horizon = horizon;
        leg.segments = segments;
        leg.max_iterations = config.leg_max_iterations;
        // Only the true goal earns the template's terminal pin.
        if i + 1 < goals.len() {
            let n = g.len();
            leg.terminal_cost = config.leg_terminal_weight * DMatrix::identity(n, n);
        }
        let trajectory = plan_direct(model, &current, g, &leg)?;
        current = trajectory.final_belief().clone();
        objective_value += trajectory.objective_value;
        let skip = usize::from(!knots.is_empty());
        knots.extend(trajectory.knots.iter().skip(skip).cloned());
        dense.extend(trajectory.dense.iter().skip(usize::from(!dense.is_empty())).cloned());
    }
    Ok(BeliefTrajectory {
        knots,
        dense,
        objective_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GaussianComponent, GuardSet, LocalModel, TransitionGraph};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    /// 2D free/wall split at x = -2: the wall region only moves along y.
    fn wall_model_2d() -> HybridDynamicsModel {
        let id = DMatrix::<f64>::identity(2, 2);
        let free = LocalModel::linear(
            0,
            id.clone(),
            id.clone(),
            id.clone(),
            DMatrix::zeros(2, 2),
            id.clone(),
        );
        let wall = LocalModel::linear(
            1,
            id.clone(),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0])),
            id.clone(),
            DMatrix::zeros(2, 2),
            id.clone(),
        );
        let dom = AxisBox::new(vec![-6.0, -6.0], vec![6.0, 6.0]);
        let free_region = GuardSet::new(Arc::new(|x: &DVector<f64>| x[0] >= -2.0), dom.clone());
        let wall_region = GuardSet::new(Arc::new(|x: &DVector<f64>| x[0] <= -2.0), dom.clone());
        let graph = TransitionGraph::new(
            2,
            vec![
                (0, 0, free_region.clone()),
                (1, 1, wall_region.clone()),
                (0, 1, wall_region),
                (1, 0, free_region),
            ],
        )
        .unwrap();
        HybridDynamicsModel::new(
            vec![free, wall],
            graph,
            dom,
            AxisBox::new(vec![-3.0, -3.0], vec![3.0, 3.0]),
        )
        .unwrap()
    }

    /// Three modes: two distant boxes plus the surrounding remainder.
    fn disjoint_boxes_model() -> HybridDynamicsModel {
        let id = DMatrix::<f64>::identity(2, 2);
        let local = |mode| {
            LocalModel::linear(mode, id.clone(), id.clone(), id.clone(), DMatrix::zeros(2, 2), id.clone())
        };
        let dom = AxisBox::new(vec![-2.0, -2.0], vec![8.0, 8.0]);
        let in_a = |x: &DVector<f64>| (0.0..=1.0).contains(&x[0]) && (0.0..=1.0).contains(&x[1]);
        let in_b = |x: &DVector<f64>| (5.0..=6.0).contains(&x[0]) && (5.0..=6.0).contains(&x[1]);
        let region_a = GuardSet::new(Arc::new(in_a), AxisBox::new(vec![0.0, 0.0], vec![1.0, 1.0]));
        let region_b = GuardSet::new(Arc::new(in_b), AxisBox::new(vec![5.0, 5.0], vec![6.0, 6.0]));
        let region_c = GuardSet::new(
            Arc::new(move |x: &DVector<f64>| !in_a(x) && !in_b(x)),
            dom.clone(),
        );
        let graph = TransitionGraph::new(
            3,
            vec![
                (0, 0, region_a.clone()),
                (1, 1, region_b.clone()),
                (2, 2, region_c.clone()),
                (0, 2, region_c.clone()),
                (2, 0, region_a),
                (1, 2, region_c),
                (2, 1, region_b),
            ],
        )
        .unwrap();
        HybridDynamicsModel::new(
            vec![local(0), local(1), local(2)],
            graph,
            dom,
            AxisBox::new(vec![-3.0, -3.0], vec![3.0, 3.0]),
        )
        .unwrap()
    }

    fn test_config(model: &HybridDynamicsModel, horizon: usize, segments: usize) -> HierarchicalConfig {
        let n = model.state_dim;
        let start = HybridBelief::gaussian(
            DVector::zeros(n),
            DMatrix::<f64>::identity(n, n),
            DVector::from_fn(model.n_modes(), |_, _| 1.0 / model.n_modes() as f64),
        )
        .unwrap();
        let transcription = TranscriptionProblem {
            horizon,
            segments,
            state_cost: 0.5 * DMatrix::<f64>::identity(n, n),
            control_cost: 0.1 * DMatrix::<f64>::identity(n, n),
            terminal_cost: 1e4 * DMatrix::<f64>::identity(n, n),
            covariance_weight: 0.0,
            start_belief: start,
            goal_state: DVector::zeros(n),
            control_bounds: model.control_bounds.clone(),
            filter: FilterConfig {
                n_guard_samples: 500,
                ..FilterConfig::default()
            },
            max_iterations: 40,
        };
        let mut config = HierarchicalConfig::new(transcription);
        config.n_map_samples = 150;
        config.n_conf_samples = 150;
        config
    }

    #[test]
    fn hellinger_examples() {
        let p = DVector::from_vec(vec![0.3, 0.7]);
        assert_relative_eq!(hellinger(&p, &p).unwrap(), 0.0);
        let one = DVector::from_vec(vec![1.0, 0.0]);
        let other = DVector::from_vec(vec![0.0, 1.0]);
        assert_relative_eq!(hellinger(&one, &other).unwrap(), 1.0);
        let even = DVector::from_vec(vec![0.5, 0.5]);
        assert_relative_eq!(hellinger(&even, &one).unwrap(), 0.5412, epsilon = 1e-4);
        assert!(hellinger(&one, &DVector::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn hellinger_is_a_bounded_symmetric_metric_on_samples() {
        use rand::RngExt as _;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let dim = rng.random_range(2..6usize);
            let draw = |rng: &mut ChaCha8Rng| {
                let mut v = DVector::from_fn(dim, |_, _| rng.random_range(0.0..1.0f64) + 1e-12);
                let s = v.sum();
                v /= s;
                v
            };
            let p = draw(&mut rng);
            let q = draw(&mut rng);
            let hpq = hellinger(&p, &q).unwrap();
            let hqp = hellinger(&q, &p).unwrap();
            assert_relative_eq!(hpq, hqp, epsilon = 1e-12);
            assert!((0.0..=1.0).contains(&hpq));
            assert_relative_eq!(hellinger(&p, &p).unwrap(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_adjacent_modes_give_five_plans() {
        let model = wall_model_2d();
        let config = test_config(&model, 8, 2);
        let plans = enumerate_plans(&model, 2, &config).unwrap();
        let mut sequences: Vec<Vec<usize>> = plans.iter().map(|p| p.sequence.clone()).collect();
        sequences.sort();
        assert_eq!(
            sequences,
            vec![
                vec![0, 1, 2],
                vec![0, 2],
                vec![1, 0, 2],
                vec![1, 2],
                vec![2],
            ]
        );
        for plan in &plans {
            let mut seen = std::collections::HashSet::new();
            assert!(plan.sequence.iter().all(|m| seen.insert(*m)));
            assert_eq!(*plan.sequence.last().unwrap(), 2);
        }
    }

    #[test]
    fn empty_mode_set_yields_single_sequence() {
        let seqs = permutations_without_repetition(&[], &|_, _| true);
        assert_eq!(seqs, vec![Vec::<ModeId>::new()]);
    }

    #[test]
    fn separated_regions_are_infeasible_and_pruned() {
        let model = disjoint_boxes_model();
        let config = test_config(&model, 8, 2);
        assert!(!feasible_transition(&model, 0, 1, &config).unwrap());
        assert!(feasible_transition(&model, 0, 2, &config).unwrap());
        assert!(feasible_transition(&model, 1, 2, &config).unwrap());

        // 16 raw sequences minus those with a 0<->1 adjacency.
        let plans = enumerate_plans(&model, 3, &config).unwrap();
        assert_eq!(plans.len(), 10);
        for plan in &plans {
            for pair in plan.sequence.windows(2) {
                assert!(!(pair[0] == 0 && pair[1] == 1) && !(pair[0] == 1 && pair[1] == 0));
            }
        }
    }

    #[test]
    fn touching_half_planes_are_feasible() {
        let model = wall_model_2d();
        let config = test_config(&model, 8, 2);
        assert!(feasible_transition(&model, 0, 1, &config).unwrap());
        assert!(feasible_transition(&model, 1, 0, &config).unwrap());
    }

    #[test]
    fn confidence_reflects_region_membership() {
        let model = wall_model_2d();
        let radius = 0.05 * model.domain.diagonal();
        let free_target = DVector::from_vec(vec![1.0, 0.0]);
        let wall_target = DVector::from_vec(vec![0.0, 1.0]);

        let deep_free = confidence_at(&model, &DVector::from_vec(vec![3.0, 0.0]), radius, 400, 5).unwrap();
        assert_relative_eq!(hellinger(&deep_free, &free_target).unwrap(), 0.0, epsilon = 1e-9);
        assert_relative_eq!(hellinger(&deep_free, &wall_target).unwrap(), 1.0, epsilon = 1e-9);

        let boundary = confidence_at(&model, &DVector::from_vec(vec![-2.0, 0.0]), radius, 4000, 5).unwrap();
        let h = hellinger(&boundary, &free_target).unwrap();
        assert_relative_eq!(h, 0.5412, epsilon = 0.05);
    }

    #[test]
    fn cost_map_interpolates_its_samples() {
        let model = wall_model_2d();
        let config = test_config(&model, 8, 2);
        let cmap = build_confidence_map(&model, 0, &config).unwrap();
        assert_eq!(cmap.samples.len(), config.n_map_samples);
        for ((x, w), c) in cmap.samples.iter().zip(&cmap.costs) {
            assert_relative_eq!(w.sum(), 1.0, epsilon = 1e-9);
            assert!((0.0..=1.0).contains(c));
            // Collocation accuracy is limited by the conditioning of the
            // 150-center system; 1e-4 is ample for a surrogate over [0, 1].
            assert_relative_eq!(cmap.interpolator.eval(x), *c, epsilon = 1e-4);
        }
    }

    #[test]
    fn wall_representative_point_sits_in_the_wall() {
        let model = wall_model_2d();
        let config = test_config(&model, 8, 2);
        let cmap = build_confidence_map(&model, 1, &config).unwrap();
        let best = best_representative_point(&cmap);
        assert!(best[0] < -2.0, "best point {best}");

        // The surrogate minimum found by evolution is at least as good as a
        // dense grid scan.
        let mut grid_min = f64::INFINITY;
        let mut grid_max = f64::NEG_INFINITY;
        for i in 0..200 {
            for j in 0..200 {
                let x = DVector::from_vec(vec![
                    -6.0 + 12.0 * (i as f64 + 0.5) / 200.0,
                    -6.0 + 12.0 * (j as f64 + 0.5) / 200.0,
                ]);
                let v = cmap.interpolator.eval(&x);
                grid_min = grid_min.min(v);
                grid_max = grid_max.max(v);
            }
        }
        let de_value = cmap.interpolator.eval(&best);
        assert!(
            de_value <= grid_min + 0.01 * (grid_max - grid_min),
            "de {de_value} vs grid {grid_min}"
        );

        // High sampled confidence of actually being in the wall mode there.
        let radius = config.conf_radius_frac * model.domain.diagonal();
        let w = confidence_at(&model, &best, radius, 1000, 9).unwrap();
        assert!(w[1] >= 0.9, "confidence {w}");
    }

    #[test]
    fn subgoals_follow_the_plan() {
        let model = wall_model_2d();
        let config = test_config(&model, 8, 2);
        let goal = GoalRegion::new(DVector::from_vec(vec![2.0, 2.0]), 0.2);

        let trivial = HighLevelPlan {
            sequence: vec![2],
            divergence_cost: 0.0,
            path_length_penalty: 0.0,
        };
        let goals = plan_to_goals(&model, &trivial, &goal, &config).unwrap();
        assert_eq!(goals.len(), 1);
        assert_eq!(goals[0], goal.center);

        let through_wall = HighLevelPlan {
            sequence: vec![1, 2],
            divergence_cost: 0.0,
            path_length_penalty: 0.0,
        };
        let goals = plan_to_goals(&model, &through_wall, &goal, &config).unwrap();
        assert_eq!(goals.len(), 2);
        assert!(goals[0][0] < -2.0);
        assert_eq!(goals[1], goal.center);
    }

    #[test]
    fn concentrated_start_selects_the_trivial_plan_deterministically() {
        let model = wall_model_2d();
        let config = test_config(&model, 8, 2);
        let goal = GoalRegion::new(DVector::from_vec(vec![2.0, 2.0]), 0.2);
        let start = HybridBelief::new(
            vec![GaussianComponent::new(
                1.0,
                goal.center.clone(),
                1e-6 * DMatrix::<f64>::identity(2, 2),
            )
            .unwrap()],
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();

        let (trajectory, plan) = rank_and_plan(&model, &start, &goal, &config).unwrap();
        assert_eq!(plan.sequence, vec![2]);
        assert!(plan.total_cost() <= 0.05, "cost {}", plan.total_cost());
        assert_relative_eq!(plan.path_length_penalty, 0.0);
        assert!(trajectory.final_belief().mean().norm() > 0.0);

        let (again, plan_again) = rank_and_plan(&model, &start, &goal, &config).unwrap();
        assert_eq!(plan_again.sequence, plan.sequence);
        assert_eq!(plan_again.total_cost(), plan.total_cost());
        assert_eq!(again.objective_value, trajectory.objective_value);
    }
}
