//! Hybrid Bayesian filtering over mode-indexed Gaussian mixtures.
//!
//! One filter step is prediction followed by correction:
//!
//! 1. **Prediction** ([`belief_prior`]). Every mode the belief occupies
//!    pushes the mixture through its own dynamics with an EKF-style
//!    covariance update, weighted by that mode's probability. Each propagated
//!    component is then split across the destination regions its transition
//!    edges permit: a closed-form axis-box truncation gives each piece's
//!    moments together with its contained mass, and that mass is exactly the
//!    transfer probability `p(q' | q, x)` marginalised over the propagated
//!    component. The pieces form the continuous prior (reduced back to `L`
//!    components) and the same masses accumulate into the discrete prior, so
//!    the two stay consistent by construction. Splitting is moment-exact:
//!    when one region holds essentially all the mass the truncation
//!    short-circuits to the exact propagated component, and pieces over a
//!    partition recombine to the unrestricted mixture's mean. Two behaviours
//!    fall out of the split rather than being modelled separately: holding a
//!    belief against a region boundary contracts its variance along the
//!    pressed axis (iterated truncation), and driving it back across the
//!    boundary transfers the escaping tail's mass to the neighbouring mode.
//! 2. **Correction** ([`posterior_update`]). A bank of extended Kalman
//!    updates, one per mode, corrects each component: the mean receives the
//!    discrete-prior-weighted sum of the per-mode Kalman corrections and the
//!    covariance the matching weighted combination of `(I - K C) Sigma`.
//!    Mode probabilities are reweighted by per-mode observation likelihoods,
//!    mixture weights by per-component innovation likelihoods.
//!
//! The sampling-based operations ([`estimate_transition_matrix`],
//! [`mode_occupancy`]) draw from a ChaCha stream seeded by
//! [`FilterConfig::rng_seed`], so a given belief always produces the same
//! sample set (common random numbers): repeated evaluations are bit-identical,
//! which keeps downstream planners deterministic. The filter step itself is
//! sampling-free, so trajectory optimisers differentiating through it see
//! smooth dynamics.

use crate::math;
use crate::model::{
    mode_membership, AxisBox, GaussianComponent, HybridBelief, HybridDynamicsModel, LocalModel,
    ModeId, ModelError,
};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("belief component covariance is not positive definite")]
    DegenerateBelief,
    #[error("innovation covariance is singular for mode {0}")]
    SingularInnovationCovariance(ModeId),
    #[error("numerical failure: {0}")]
    NumericalFailure(&'static str),
}

/// Sampling and reduction knobs for the filter.
#[derive(Debug, Clone)]
pub struct FilterConfig {
    /// Samples drawn from the continuous belief per guard-probability query.
    pub n_guard_samples: usize,
    /// Floor given to transition-matrix entries of absent edges.
    pub epsilon: f64,
    /// Mixture size L kept after reduction.
    pub mixture_size: usize,
    /// Seed of the sampling stream; fixed seed = common random numbers.
    pub rng_seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            n_guard_samples: 2000,
            epsilon: 1e-6,
            mixture_size: 1,
            rng_seed: 0x5EED_0001,
        }
    }
}

/// Row-stochastic mode-transition estimate. Row `i` is the distribution of the
/// next mode given current mode `i` under the sampled continuous belief.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    pub entries: DMatrix<f64>,
}

impl TransitionMatrix {
    pub fn n_modes(&self) -> usize {
        self.entries.nrows()
    }

    /// Discrete prior `Pi^T b`.
    pub fn propagate(&self, mode_probs: &DVector<f64>) -> DVector<f64> {
        let v = self.entries.transpose() * mode_probs;
        // row-stochastic rows keep the result normalised up to rounding
        let s = v.sum();
        v / s
    }
}

/// EKF prediction of one mixture component through one local model:
/// `mean' = f(mean, u)`, `cov' = A cov A^T + V`. The weight is untouched.
pub fn propagate_component(
    local: &LocalModel,
    component: &GaussianComponent,
    u: &DVector<f64>,
) -> GaussianComponent {
    let mean = (local.dynamics)(&component.mean, u);
    let a = (local.dynamics_jac_x)(&component.mean, u);
    let cov = math::symmetrize(&(&a * &component.cov * a.transpose() + &local.process_noise));
    GaussianComponent {
        weight: component.weight,
        mean,
        cov,
    }
}

/// Deterministic per-component sample allocation: `round(w_l * n)` with the
/// remainder assigned by largest fractional part.
fn allocate_samples(weights: &[f64], n: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = weights.iter().map(|w| (w * n as f64).floor() as usize).collect();
    let mut frac: Vec<(usize, f64)> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| (i, w * n as f64 - (w * n as f64).floor()))
        .collect();
    frac.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let assigned: usize = counts.iter().sum();
    for k in 0..n.saturating_sub(assigned) {
        counts[frac[k % frac.len()].0] += 1;
    }
    counts
}

/// Sample set for one belief: per component, points `mean + L xi` with `xi`
/// standard normal from the seeded stream.
pub(crate) struct BeliefSamples {
    /// One block of points per mixture component.
    pub(crate) blocks: Vec<Vec<DVector<f64>>>,
}

pub(crate) fn sample_belief(
    belief: &HybridBelief,
    cfg: &FilterConfig,
) -> Result<BeliefSamples, FilterError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let weights: Vec<f64> = belief.components.iter().map(|c| c.weight).collect();
    let counts = allocate_samples(&weights, cfg.n_guard_samples);
    let dim = belief.state_dim();
    let mut blocks = Vec::with_capacity(belief.components.len());
    for (comp, count) in belief.components.iter().zip(counts) {
        let chol = math::cholesky_lower(&comp.cov).ok_or(FilterError::DegenerateBelief)?;
        let mut pts = Vec::with_capacity(count);
        for _ in 0..count {
            let xi = DVector::from_iterator(
                dim,
                (0..dim).map(|_| StandardNormal.sample(&mut rng)),
            );
            pts.push(&comp.mean + &chol * xi);
        }
        blocks.push(pts);
    }
    Ok(BeliefSamples { blocks })
}

/// Sampled estimate of the extended transition matrix: entry `(i, j)` is the
/// fraction of belief samples lying in the guard `G(i, j)`; absent edges get
/// the epsilon floor; rows are then normalised.
pub fn estimate_transition_matrix(
    model: &HybridDynamicsModel,
    belief: &HybridBelief,
    cfg: &FilterConfig,
) -> Result<TransitionMatrix, FilterError> {
    let samples = sample_belief(belief, cfg)?;
    let all: Vec<&DVector<f64>> = samples.blocks.iter().flatten().collect();
    let total = all.len().max(1) as f64;
    let n = model.n_modes();
    let mut entries = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            entries[(i, j)] = match model.graph.edge(i, j) {
                Some(guard) => {
                    all.iter().filter(|x| guard.contains(x)).count() as f64 / total
                }
                None => cfg.epsilon,
            };
        }
        let row_sum: f64 = entries.row(i).sum();
        if row_sum <= 0.0 {
            for j in 0..n {
                entries[(i, j)] = 1.0 / n as f64;
            }
        } else {
            for j in 0..n {
                entries[(i, j)] /= row_sum;
            }
        }
    }
    Ok(TransitionMatrix { entries })
}

/// Mode occupancy of a single Gaussian: sampled average of the normalised
/// mode-membership indicator under `N(mean, cov)`. Used wherever a discrete
/// distribution has to be rebuilt from continuous moments alone (knot points,
/// confidence maps).
pub fn mode_occupancy(
    model: &HybridDynamicsModel,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    cfg: &FilterConfig,
) -> Result<DVector<f64>, FilterError> {
    let n = model.n_modes();
    let comp = GaussianComponent::new(1.0, mean.clone(), cov.clone())?;
    let belief = HybridBelief::new(vec![comp], DVector::from_element(n, 1.0 / n as f64))?;
    let samples = sample_belief(&belief, cfg)?;
    let mut acc = DVector::zeros(n);
    let mut counted = 0usize;
    for x in &samples.blocks[0] {
        if let Ok(m) = mode_membership(model, x) {
            acc += m;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(FilterError::NumericalFailure(
            "no occupancy sample fell in any mode region",
        ));
    }
    Ok(acc / counted as f64)
}

/// One component restricted to an axis box: per-axis moment-matched
/// truncation of the marginals, with off-diagonal covariance rescaled so
/// correlation coefficients survive. Returns the restricted component and the
/// contained mass; `None` when the box carries no mass. A box holding
/// essentially everything short-circuits to the exact component, so
/// fully-covered beliefs lose nothing to truncation algebra.
fn truncate_to_box(
    component: &GaussianComponent,
    bounds: &AxisBox,
) -> Option<(GaussianComponent, f64)> {
    let dim = component.mean.len();
    let mut mass = 1.0_f64;
    let mut mean = component.mean.clone();
    let mut vars = vec![0.0_f64; dim];
    let mut scale = vec![1.0_f64; dim];
    for i in 0..dim {
        let v = component.cov[(i, i)];
        let (m, tm, tv) =
            math::truncated_moments_1d(component.mean[i], v, bounds.lo[i], bounds.hi[i]);
        mass *= m;
        if mass < 1e-12 {
            return None;
        }
        mean[i] = tm;
        vars[i] = tv.max(1e-12);
        scale[i] = if v > 0.0 { (vars[i] / v).sqrt() } else { 1.0 };
    }
    if mass > 1.0 - 1e-9 {
        return Some((component.clone(), 1.0));
    }
    let mut cov = component.cov.clone();
    for i in 0..dim {
        cov[(i, i)] = vars[i];
        for j in 0..i {
            let c = component.cov[(i, j)] * scale[i] * scale[j];
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    Some((
        GaussianComponent {
            weight: component.weight,
            mean,
            cov,
        },
        mass,
    ))
}

/// Prediction step. Each occupied mode propagates the mixture through its own
/// dynamics; every propagated component is split across the destination
/// regions its transition edges permit, the truncation mass of each piece
/// doubling as the transfer probability. The pieces form the continuous prior
/// (reduced back to the configured mixture size) and the masses form the
/// discrete prior. Absent edges keep the epsilon floor in the discrete part,
/// rows normalised, exactly as in [`estimate_transition_matrix`].
pub fn belief_prior(
    model: &HybridDynamicsModel,
    belief: &HybridBelief,
    u: &DVector<f64>,
    cfg: &FilterConfig,
) -> Result<HybridBelief, FilterError> {
    let n_modes = model.n_modes();
    let mut pieces: Vec<GaussianComponent> = Vec::new();
    let mut mode_prior = DVector::zeros(n_modes);
    for q in 0..n_modes {
        let bq = belief.mode_probs[q];
        if bq <= 0.0 {
            continue;
        }
        let local = model.local(q)?;
        for comp in &belief.components {
            let prop = propagate_component(local, comp, u);
            let mut row = vec![0.0_f64; n_modes];
            let mut parts: Vec<Option<GaussianComponent>> = vec![None; n_modes];
            for dest in 0..n_modes {
                match model.graph.edge(q, dest) {
                    Some(guard) => {
                        if let Some((piece, mass)) = truncate_to_box(&prop, &guard.bounds) {
                            row[dest] = mass;
                            parts[dest] = Some(piece);
                        }
                    }
                    None => row[dest] = cfg.epsilon,
                }
            }
            let mut row_sum: f64 = row.iter().sum();
            if row_sum < 1e-12 {
                // No permitted region carries mass: the state has nowhere to
                // go, so it stays in its source mode unrestricted.
                row.iter_mut().for_each(|r| *r = 0.0);
                row[q] = 1.0;
                parts[q] = Some(prop.clone());
                row_sum = 1.0;
            }
            let w = bq * comp.weight;
            for dest in 0..n_modes {
                let p = row[dest] / row_sum;
                if p <= 0.0 {
                    continue;
                }
                mode_prior[dest] += w * p;
                if let Some(piece) = &parts[dest] {
                    let mut piece = piece.clone();
                    piece.weight = w * p;
                    pieces.push(piece);
                }
            }
        }
    }
    if pieces.is_empty() {
        return Err(FilterError::NumericalFailure("no propagated mixture mass"));
    }
    let wsum: f64 = pieces.iter().map(|c| c.weight).sum();
    for c in &mut pieces {
        c.weight /= wsum;
    }
    let msum = mode_prior.sum();
    if !(msum > 0.0) {
        return Err(FilterError::NumericalFailure("discrete prior lost all mass"));
    }
    mode_prior /= msum;
    let reduced = reduce_mixture(pieces, cfg.mixture_size)?;
    Ok(HybridBelief::new(reduced, mode_prior)?)
}

/// Measurement update outcome. `likelihood_floor_hit` reports that every
/// mode likelihood underflowed and the discrete posterior was left at the
/// prior.
#[derive(Debug, Clone)]
pub struct PosteriorOutcome {
    pub belief: HybridBelief,
    pub likelihood_floor_hit: bool,
}

/// Correction step: bank-of-EKF update of every component, likelihood
/// reweighting of the mode distribution and of the mixture weights.
pub fn posterior_update(
    model: &HybridDynamicsModel,
    prior: &HybridBelief,
    z: &DVector<f64>,
    _cfg: &FilterConfig,
) -> Result<PosteriorOutcome, FilterError> {
    let n_modes = model.n_modes();
    let dim = prior.state_dim();
    let identity = DMatrix::<f64>::identity(dim, dim);
    let mut components = Vec::with_capacity(prior.components.len());
    let mut raw_weights = Vec::with_capacity(prior.components.len());
    // Per-mode observation likelihoods, mixture-marginalised.
    let mut mode_lik = vec![0.0_f64; n_modes];
    for comp in &prior.components {
        let mut mean = comp.mean.clone();
        let mut cov = DMatrix::zeros(dim, dim);
        let mut zhat = DVector::zeros(z.len());
        let mut innov_cov = DMatrix::zeros(z.len(), z.len());
        for q in 0..n_modes {
            let bq = prior.mode_probs[q];
            let local = model.local(q)?;
            let c = (local.observation_jac)(&comp.mean);
            let s = math::symmetrize(&(&c * &comp.cov * c.transpose() + &local.obs_noise));
            let s_chol = nalgebra::Cholesky::new(s.clone())
                .ok_or(FilterError::SingularInnovationCovariance(q))?;
            let gain = &comp.cov * c.transpose() * s_chol.inverse();
            let predicted = (local.observation)(&comp.mean);
            let innovation = z - &predicted;
            mean += bq * (&gain * &innovation);
            cov += bq * math::symmetrize(&((&identity - &gain * &c) * &comp.cov));
            zhat += bq * &predicted;
            innov_cov += bq * &s;
            if let Some(lp) = math::gaussian_logpdf(z, &predicted, &s) {
                mode_lik[q] += comp.weight * lp.exp();
            }
        }
        let lik = math::gaussian_logpdf(z, &zhat, &innov_cov)
            .map(|lp| lp.exp())
            .unwrap_or(0.0);
        raw_weights.push(lik);
        components.push(GaussianComponent {
            weight: comp.weight,
            mean,
            cov: math::symmetrize(&cov),
        });
    }
    // Mixture weights proportional to innovation likelihoods; an all-zero
    // vector (far-tail observation) keeps the prior weights.
    let wsum: f64 = raw_weights.iter().sum();
    if wsum > 0.0 {
        for (c, w) in components.iter_mut().zip(&raw_weights) {
            c.weight = w / wsum;
        }
    }
    // Discrete posterior: elementwise product with the prior, normalised.
    let mut mode_post = DVector::zeros(n_modes);
    for q in 0..n_modes {
        mode_post[q] = mode_lik[q] * prior.mode_probs[q];
    }
    let msum = mode_post.sum();
    let likelihood_floor_hit = !(msum > 0.0) || !msum.is_finite();
    if likelihood_floor_hit {
        mode_post = prior.mode_probs.clone();
    } else {
        mode_post /= msum;
    }
    // Guard against rounding drift in the component weights.
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in &mut components {
        c.weight /= total;
    }
    Ok(PosteriorOutcome {
        belief: HybridBelief::new(components, mode_post)?,
        likelihood_floor_hit,
    })
}

/// Greedy moment-matching mixture reduction: repeatedly merge the component
/// pair with the smallest symmetrised KL divergence until at most
/// `target_size` components remain. Every merge preserves the mixture's
/// overall mean and covariance exactly.
pub fn reduce_mixture(
    mut components: Vec<GaussianComponent>,
    target_size: usize,
) -> Result<Vec<GaussianComponent>, FilterError> {
    if target_size == 0 {
        return Err(FilterError::NumericalFailure("mixture size must be positive"));
    }
    // Drop numerically weightless components first (they carry no moments).
    if components.iter().any(|c| c.weight < 1e-12) && components.len() > 1 {
        let kept: Vec<GaussianComponent> = components
            .iter()
            .filter(|c| c.weight >= 1e-12)
            .cloned()
            .collect();
        if !kept.is_empty() {
            components = kept;
            let wsum: f64 = components.iter().map(|c| c.weight).sum();
            for c in &mut components {
                c.weight /= wsum;
            }
        }
    }
    while components.len() > target_size {
        let mut best = (0usize, 1usize, f64::INFINITY);
        for i in 0..components.len() {
            for j in (i + 1)..components.len() {
                let d = symmetric_kl(&components[i], &components[j])
                    .ok_or(FilterError::DegenerateBelief)?;
                if d < best.2 {
                    best = (i, j, d);
                }
            }
        }
        let (i, j, _) = best;
        let merged = merge_pair(&components[i], &components[j]);
        components[i] = merged;
        components.swap_remove(j);
    }
    Ok(components)
}

/// Symmetrised KL divergence between two Gaussians (closed form).
fn symmetric_kl(a: &GaussianComponent, b: &GaussianComponent) -> Option<f64> {
    let ca = nalgebra::Cholesky::new(math::symmetrize(&a.cov))?;
    let cb = nalgebra::Cholesky::new(math::symmetrize(&b.cov))?;
    let d = &a.mean - &b.mean;
    let n = a.mean.len() as f64;
    let tr_ba = cb.solve(&a.cov).trace();
    let tr_ab = ca.solve(&b.cov).trace();
    let maha_b = d.dot(&cb.solve(&d));
    let maha_a = d.dot(&ca.solve(&d));
    Some(0.5 * (tr_ba + tr_ab + maha_a + maha_b - 2.0 * n))
}

/// Moment-matched merge of two components.
fn merge_pair(a: &GaussianComponent, b: &GaussianComponent) -> GaussianComponent {
    let w = a.weight + b.weight;
    let (wa, wb) = (a.weight / w, b.weight / w);
    let mean = wa * &a.mean + wb * &b.mean;
    let da = &a.mean - &mean;
    let db = &b.mean - &mean;
    let cov = wa * (&a.cov + &da * da.transpose()) + wb * (&b.cov + &db * db.transpose());
    GaussianComponent {
        weight: w,
        mean,
        cov: math::symmetrize(&cov),
    }
}
