//! Built-in benchmark domains and their ground-truth simulators.
//!
//! Both domains are planar single-integrator models whose modes differ only
//! in how they mask the control input: walls and assembly constraints absorb
//! motion along the blocked axis. The simulator carries the hidden true
//! state, picks the true mode from guard membership (not from any belief),
//! and injects seeded noise that may differ from what the model assumes.
//! True states live between the physical walls (`physical_bounds`); the
//! model's domain box may extend past them so that wall-side guard regions
//! keep sampleable interiors for the belief machinery.

use crate::direct::TranscriptionProblem;
use crate::filter::FilterConfig;
use crate::hierarchical::GoalRegion;
use crate::math;
use crate::model::{
    mode_membership, AxisBox, GuardSet, HybridBelief, HybridDynamicsModel, LocalModel, ModeId,
    ModelError, TransitionGraph,
};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::Arc;

/// A benchmark task: model, start conditions, goal, termination bound, true
/// execution noise, and the default transcription template.
#[derive(Debug, Clone)]
pub struct DomainSpec {
    pub name: &'static str,
    pub model: HybridDynamicsModel,
    pub start_true_state: DVector<f64>,
    pub start_belief: HybridBelief,
    pub goal: GoalRegion,
    /// Termination requires the largest covariance eigenvalue at or below this.
    pub covariance_bound: f64,
    /// Box the true state is confined to (the physical walls). The model's
    /// `domain` may extend past it for guard evaluation.
    pub physical_bounds: AxisBox,
    /// Noise the *simulator* injects; the model's assumed noise may differ.
    pub process_noise: DMatrix<f64>,
    pub obs_noise: DMatrix<f64>,
    pub transcription: TranscriptionProblem,
}

impl DomainSpec {
    pub fn simulator(&self, seed: u64) -> Simulator {
        Simulator::new(
            self.model.clone(),
            self.start_true_state.clone(),
            self.physical_bounds.clone(),
            self.process_noise.clone(),
            self.obs_noise.clone(),
            seed,
        )
    }
}

/// Ground-truth stepper. Owns its RNG; a fixed seed fixes the whole trace.
#[derive(Debug, Clone)]
pub struct Simulator {
    model: HybridDynamicsModel,
    true_state: DVector<f64>,
    bounds: AxisBox,
    process_noise: DMatrix<f64>,
    obs_noise: DMatrix<f64>,
    rng: ChaCha8Rng,
}

impl Simulator {
    pub fn new(
        model: HybridDynamicsModel,
        start: DVector<f64>,
        bounds: AxisBox,
        process_noise: DMatrix<f64>,
        obs_noise: DMatrix<f64>,
        seed: u64,
    ) -> Self {
        let true_state = bounds.clamp(&start);
        Self {
            model,
            true_state,
            bounds,
            process_noise,
            obs_noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn true_state(&self) -> &DVector<f64> {
        &self.true_state
    }

    /// Mode whose guard contains the true state; ties go to the lowest id.
    pub fn true_mode(&self) -> Result<ModeId, ModelError> {
        let weights = mode_membership(&self.model, &self.true_state)?;
        let mut best = 0;
        for (q, w) in weights.iter().enumerate() {
            if *w > weights[best] {
                best = q;
            }
        }
        Ok(best)
    }

    /// Advances the hidden state one step under `u` and returns a noisy
    /// observation of the new state.
    ///
    /// Disturbances enter through the active mode's control channel: a
    /// contact that blocks an actuation axis blocks pushes along that axis
    /// too, so the sampled process noise is projected through ∂F/∂u before
    /// being added.
    pub fn step(&mut self, u: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        let local = self.model.local(self.true_mode()?)?;
        let mut next = (local.dynamics)(&self.true_state, u);
        next += (local.dynamics_jac_u)(&self.true_state, u)
            * draw_noise(&self.process_noise, &mut self.rng);
        self.true_state = self.bounds.clamp(&next);
        let mut z = (self.model.local(self.true_mode()?)?.observation)(&self.true_state);
        z += draw_noise(&self.obs_noise, &mut self.rng);
        Ok(z)
    }
}

fn draw_noise(cov: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n = cov.nrows();
    if cov.amax() == 0.0 {
        return DVector::zeros(n);
    }
    let root = math::cholesky_lower(cov).unwrap_or_else(|| psd_root(cov));
    let xi = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
    root * xi
}

fn psd_root(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = math::symmetrize(cov).symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Planar navigation with two perpendicular walls meeting at `(-2, -2)`.
///
/// Modes: 0 free (`x' = x + u`), 1 wall along x (`x <= -2`, u masked to
/// `diag(0, 1)`), 2 wall along y (`x >= -2`, `y <= -2`, u masked to
/// `diag(1, 0)`). Deterministic dynamics; observation `x + w` with
/// `w ~ N(0, 15 I)`.
pub fn walled_domain() -> DomainSpec {
    let id = DMatrix::<f64>::identity(2, 2);
    let v = DMatrix::<f64>::zeros(2, 2);
    let w = 15.0 * &id;
    let free = LocalModel::linear(0, id.clone(), id.clone(), id.clone(), v.clone(), w.clone());
    let wall_x = LocalModel::linear(
        1,
        id.clone(),
        DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0])),
        id.clone(),
        v.clone(),
        w.clone(),
    );
    let wall_y = LocalModel::linear(
        2,
        id.clone(),
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])),
        id.clone(),
        v,
        w,
    );

    // The walls sit on the lower-left boundary of the paper's workspace; the
    // box extends past them so the wall regions have sampleable interiors.
    let domain = AxisBox::new(vec![-6.0, -6.0], vec![15.0, 15.0]);
    let regions = vec![
        GuardSet::new(
            Arc::new(|x: &DVector<f64>| x[0] >= -2.0 && x[1] >= -2.0),
            AxisBox::new(vec![-2.0, -2.0], vec![15.0, 15.0]),
        ),
        GuardSet::new(
            Arc::new(|x: &DVector<f64>| x[0] <= -2.0),
            AxisBox::new(vec![-6.0, -6.0], vec![-2.0, 15.0]),
        ),
        GuardSet::new(
            Arc::new(|x: &DVector<f64>| x[0] >= -2.0 && x[1] <= -2.0),
            AxisBox::new(vec![-2.0, -6.0], vec![15.0, -2.0]),
        ),
    ];
    let model = HybridDynamicsModel::new(
        vec![free, wall_x, wall_y],
        dense_graph(&regions),
        domain,
        AxisBox::new(vec![-4.0, -4.0], vec![4.0, 4.0]),
    )
    .expect("walled domain construction");

    let start_belief = HybridBelief::gaussian(
        DVector::from_vec(vec![5.0, 5.0]),
        DMatrix::from_diagonal(&DVector::from_vec(vec![11.5, 11.5])),
        DVector::from_vec(vec![1.0, 0.0, 0.0]),
    )
    .expect("walled start belief");

    let transcription = TranscriptionProblem {
        horizon: 20,
        segments: 10,
        state_cost: DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5])),
        control_cost: DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 10.0])),
        terminal_cost: 1e4 * DMatrix::<f64>::identity(2, 2),
        covariance_weight: 1e7,
        start_belief: start_belief.clone(),
        goal_state: DVector::zeros(2),
        control_bounds: model.control_bounds.clone(),
        filter: FilterConfig::default(),
        max_iterations: 120,
    };

    DomainSpec {
        name: "walled",
        model,
        start_true_state: DVector::from_vec(vec![3.5, 2.0]),
        start_belief,
        goal: GoalRegion::new(DVector::zeros(2), 0.2),
        covariance_bound: 1.0,
        // The walls are solid: the workspace stops at them even though the
        // modeled wall regions continue past for guard evaluation.
        physical_bounds: AxisBox::new(vec![-2.0, -2.0], vec![15.0, 15.0]),
        process_noise: DMatrix::zeros(2, 2),
        obs_noise: 15.0 * DMatrix::<f64>::identity(2, 2),
        transcription,
    }
}

/// Planar gear-insertion task in a plane parallel to an airplane wing.
///
/// Modes: 0 wing edge along y (`x in [4, 4.5]`, `y > -13.5`, u masked to
/// `diag(0, 1)`), 1 wing edge along x (`x < 4`, `y in [-14, -13]`, u masked
/// to `diag(1, 0)`), 2 corner (`x in [4, 4.5]`, `y in [-14, -13.5]`, u fully
/// masked), 3 free elsewhere. All modes carry process noise `N(0, I)` and
/// observation noise `N(0, 2 I)`; one unit is one centimetre.
pub fn assembly_domain() -> DomainSpec {
    let id = DMatrix::<f64>::identity(2, 2);
    let v = id.clone();
    let w = 2.0 * &id;
    let edge_y = LocalModel::linear(
        0,
        id.clone(),
        DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0])),
        id.clone(),
        v.clone(),
        w.clone(),
    );
    let edge_x = LocalModel::linear(
        1,
        id.clone(),
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])),
        id.clone(),
        v.clone(),
        w.clone(),
    );
    let corner = LocalModel::linear(
        2,
        id.clone(),
        DMatrix::zeros(2, 2),
        id.clone(),
        v.clone(),
        w.clone(),
    );
    let free = LocalModel::linear(3, id.clone(), id.clone(), id, v, w);

    let in_edge_y = |x: &DVector<f64>| (4.0..=4.5).contains(&x[0]) && x[1] > -13.5;
    let in_edge_x = |x: &DVector<f64>| x[0] < 4.0 && (-14.0..=-13.0).contains(&x[1]);
    let in_corner =
        |x: &DVector<f64>| (4.0..=4.5).contains(&x[0]) && (-14.0..=-13.5).contains(&x[1]);
    let domain = AxisBox::new(vec![-2.0, -18.0], vec![8.0, -8.0]);
    let regions = vec![
        GuardSet::new(
            Arc::new(in_edge_y),
            AxisBox::new(vec![4.0, -13.5], vec![4.5, -8.0]),
        ),
        GuardSet::new(
            Arc::new(in_edge_x),
            AxisBox::new(vec![-2.0, -14.0], vec![4.0, -13.0]),
        ),
        GuardSet::new(
            Arc::new(in_corner),
            AxisBox::new(vec![4.0, -14.0], vec![4.5, -13.5]),
        ),
        GuardSet::new(
            Arc::new(move |x: &DVector<f64>| !in_edge_y(x) && !in_edge_x(x) && !in_corner(x)),
            domain.clone(),
        ),
    ];
    let model = HybridDynamicsModel::new(
        vec![edge_y, edge_x, corner, free],
        dense_graph(&regions),
        domain,
        AxisBox::new(vec![-4.0, -4.0], vec![4.0, 4.0]),
    )
    .expect("assembly domain construction");

    let start_belief = HybridBelief::gaussian(
        DVector::from_vec(vec![0.5, -10.0]),
        DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 4.0])),
        DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]),
    )
    .expect("assembly start belief");

    let transcription = TranscriptionProblem {
        horizon: 20,
        segments: 10,
        state_cost: DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5])),
        control_cost: DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 0.1])),
        terminal_cost: 5000.0 * DMatrix::<f64>::identity(2, 2),
        covariance_weight: 1e7,
        start_belief: start_belief.clone(),
        goal_state: DVector::from_vec(vec![4.25, -13.75]),
        control_bounds: model.control_bounds.clone(),
        filter: FilterConfig::default(),
        max_iterations: 120,
    };

    let physical_bounds = model.domain.clone();
    DomainSpec {
        name: "assembly",
        model,
        start_true_state: DVector::from_vec(vec![1.8, -11.0]),
        start_belief,
        goal: GoalRegion::new(DVector::from_vec(vec![4.25, -13.75]), 0.2),
        covariance_bound: 0.5,
        physical_bounds,
        process_noise: DMatrix::identity(2, 2),
        obs_noise: 2.0 * DMatrix::<f64>::identity(2, 2),
        transcription,
    }
}

/// Self-loops on every region plus every ordered pair gated by the target's
/// region: all mode boundaries in these domains are reachable.
fn dense_graph(regions: &[GuardSet]) -> TransitionGraph {
    let n = regions.len();
    let mut edges = Vec::with_capacity(n * n);
    for i in 0..n {
        for (j, region) in regions.iter().enumerate() {
            edges.push((i, j, region.clone()));
        }
    }
    TransitionGraph::new(n, edges).expect("dense transition graph")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::RngExt as _;

    fn dynamics_at(spec: &DomainSpec, x: &[f64], u: &[f64]) -> DVector<f64> {
        let x = DVector::from_vec(x.to_vec());
        let u = DVector::from_vec(u.to_vec());
        let weights = mode_membership(&spec.model, &x).unwrap();
        let mode = (0..weights.len())
            .max_by(|a, b| weights[*a].partial_cmp(&weights[*b]).unwrap())
            .unwrap();
        (spec.model.local(mode).unwrap().dynamics)(&x, &u)
    }

    #[test]
    fn walled_dynamics_match_the_mode_masks() {
        let spec = walled_domain();
        assert_eq!(
            dynamics_at(&spec, &[0.0, 0.0], &[1.0, 1.0]),
            DVector::from_vec(vec![1.0, 1.0])
        );
        assert_eq!(
            dynamics_at(&spec, &[-3.0, 5.0], &[1.0, 1.0]),
            DVector::from_vec(vec![-3.0, 6.0])
        );
        assert_eq!(
            dynamics_at(&spec, &[5.0, -3.0], &[1.0, 1.0]),
            DVector::from_vec(vec![6.0, -3.0])
        );
    }

    #[test]
    fn walled_constants_are_pinned() {
        let spec = walled_domain();
        let t = &spec.transcription;
        assert_eq!(t.state_cost.diagonal().as_slice(), &[0.5, 0.5]);
        assert_eq!(t.control_cost.diagonal().as_slice(), &[10.0, 10.0]);
        assert_eq!(t.terminal_cost.diagonal().as_slice(), &[1e4, 1e4]);
        assert_eq!(t.covariance_weight, 1e7);
        assert_eq!(t.horizon, 20);
        assert_eq!(t.filter.mixture_size, 1);
        assert_eq!(spec.goal.radius, 0.2);
        assert_eq!(spec.goal.center, DVector::zeros(2));
        assert_eq!(spec.covariance_bound, 1.0);
        assert_eq!(spec.start_true_state.as_slice(), &[3.5, 2.0]);
        assert_eq!(spec.start_belief.mean().as_slice(), &[5.0, 5.0]);
        assert_eq!(spec.start_belief.cov().diagonal().as_slice(), &[11.5, 11.5]);
        assert_eq!(spec.obs_noise, 15.0 * DMatrix::<f64>::identity(2, 2));
        assert_eq!(spec.process_noise, DMatrix::zeros(2, 2));
    }

    #[test]
    fn assembly_dynamics_match_the_mode_masks() {
        let spec = assembly_domain();
        // Corner: control fully absorbed.
        assert_eq!(
            dynamics_at(&spec, &[4.2, -13.8], &[1.0, 1.0]),
            DVector::from_vec(vec![4.2, -13.8])
        );
        // Edge along y: x component blocked.
        assert_eq!(
            dynamics_at(&spec, &[4.2, -10.0], &[1.0, 1.0]),
            DVector::from_vec(vec![4.2, -9.0])
        );
        // Edge along x: y component blocked.
        assert_eq!(
            dynamics_at(&spec, &[1.0, -13.5], &[1.0, 1.0]),
            DVector::from_vec(vec![2.0, -13.5])
        );
        assert_eq!(
            dynamics_at(&spec, &[0.5, -10.0], &[1.0, 1.0]),
            DVector::from_vec(vec![1.5, -9.0])
        );
    }

    #[test]
    fn assembly_constants_are_pinned() {
        let spec = assembly_domain();
        let t = &spec.transcription;
        assert_eq!(t.control_cost.diagonal().as_slice(), &[0.1, 0.1]);
        assert_eq!(t.terminal_cost.diagonal().as_slice(), &[5000.0, 5000.0]);
        assert_eq!(spec.obs_noise, 2.0 * DMatrix::<f64>::identity(2, 2));
        assert_eq!(spec.process_noise, DMatrix::<f64>::identity(2, 2));
        assert_eq!(spec.goal.center.as_slice(), &[4.25, -13.75]);
        assert_eq!(spec.covariance_bound, 0.5);
        for local in 0..4 {
            assert_eq!(
                spec.model.local(local).unwrap().obs_noise,
                2.0 * DMatrix::<f64>::identity(2, 2)
            );
        }
    }

    #[test]
    fn regions_partition_each_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for spec in [walled_domain(), assembly_domain()] {
            for _ in 0..10_000 {
                let x = spec.model.domain.sample(&mut rng);
                let members = (0..spec.model.n_modes())
                    .filter(|q| spec.model.graph.region(*q).contains(&x))
                    .count();
                assert_eq!(members, 1, "point {x} in {} regions", members);
            }
        }
    }

    #[test]
    fn masked_coordinates_never_move() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let walled = walled_domain();
        let assembly = assembly_domain();
        // (spec, mode, region box, masked coordinate)
        let cases = [
            (&walled, 1usize, AxisBox::new(vec![-6.0, -6.0], vec![-2.0, 15.0]), 0usize),
            (&walled, 2, AxisBox::new(vec![-2.0, -6.0], vec![15.0, -2.0]), 1),
            (&assembly, 0, AxisBox::new(vec![4.0, -13.5], vec![4.5, -8.0]), 0),
            (&assembly, 1, AxisBox::new(vec![-2.0, -14.0], vec![4.0, -13.0]), 1),
            (&assembly, 2, AxisBox::new(vec![4.0, -14.0], vec![4.5, -13.5]), 0),
            (&assembly, 2, AxisBox::new(vec![4.0, -14.0], vec![4.5, -13.5]), 1),
        ];
        for (spec, mode, region, coord) in cases {
            for _ in 0..200 {
                let x = region.sample(&mut rng);
                let u = spec.model.control_bounds.sample(&mut rng);
                let next = (spec.model.local(mode).unwrap().dynamics)(&x, &u);
                assert_eq!(next[coord], x[coord]);
            }
        }
    }

    #[test]
    fn noiseless_observation_equals_dynamics_output() {
        let spec = walled_domain();
        let mut sim = Simulator::new(
            spec.model.clone(),
            DVector::from_vec(vec![3.0, 2.0]),
            spec.physical_bounds.clone(),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            0,
        );
        let z = sim.step(&DVector::from_vec(vec![1.0, -0.5])).unwrap();
        assert_eq!(z, DVector::from_vec(vec![4.0, 1.5]));
        assert_eq!(sim.true_state(), &z);
    }

    #[test]
    fn fixed_seed_reproduces_the_trace() {
        let spec = assembly_domain();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let controls: Vec<DVector<f64>> = (0..100)
            .map(|_| spec.model.control_bounds.sample(&mut rng))
            .collect();
        let run = |seed| {
            let mut sim = spec.simulator(seed);
            controls
                .iter()
                .map(|u| (sim.step(u).unwrap(), sim.true_state().clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn true_mode_tracks_membership_and_state_stays_in_the_box() {
        let spec = walled_domain();
        let mut sim = spec.simulator(4);
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..100 {
            // Bias motion down-left so both walls actually get visited.
            let u = DVector::from_vec(vec![
                rng.random_range(-4.0..2.0),
                rng.random_range(-4.0..2.0),
            ]);
            sim.step(&u).unwrap();
            assert!(spec.physical_bounds.contains(sim.true_state()));
            let weights = mode_membership(&spec.model, sim.true_state()).unwrap();
            let best = (0..weights.len())
                .max_by(|a, b| weights[*a].partial_cmp(&weights[*b]).unwrap())
                .unwrap();
            assert_relative_eq!(weights[sim.true_mode().unwrap()], weights[best]);
        }
    }

    #[test]
    fn walls_stop_the_true_state_and_release_it() {
        let spec = walled_domain();
        let mut sim = Simulator::new(
            spec.model.clone(),
            DVector::from_vec(vec![-1.0, 5.0]),
            spec.physical_bounds.clone(),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            0,
        );
        sim.step(&DVector::from_vec(vec![-4.0, 0.0])).unwrap();
        assert_eq!(sim.true_state().as_slice(), &[-2.0, 5.0]);
        // Pressing while sliding: the blocked axis pins, the free axis moves.
        sim.step(&DVector::from_vec(vec![-4.0, 1.0])).unwrap();
        assert_eq!(sim.true_state().as_slice(), &[-2.0, 6.0]);
        // Pulling away releases the contact.
        sim.step(&DVector::from_vec(vec![1.5, 0.0])).unwrap();
        assert_eq!(sim.true_state().as_slice(), &[-0.5, 6.0]);
    }

    #[test]
    fn corner_contact_absorbs_process_disturbance() {
        let spec = assembly_domain();
        let mut sim = Simulator::new(
            spec.model.clone(),
            DVector::from_vec(vec![4.25, -13.75]),
            spec.physical_bounds.clone(),
            spec.process_noise.clone(),
            DMatrix::zeros(2, 2),
            7,
        );
        for _ in 0..50 {
            sim.step(&DVector::from_vec(vec![1.0, -1.0])).unwrap();
            assert_eq!(sim.true_state().as_slice(), &[4.25, -13.75]);
        }
    }

    #[test]
    fn empirical_observation_noise_matches_configuration() {
        let spec = walled_domain();
        let mut sim = Simulator::new(
            spec.model.clone(),
            DVector::from_vec(vec![5.0, 5.0]),
            spec.physical_bounds.clone(),
            DMatrix::zeros(2, 2),
            spec.obs_noise.clone(),
            31,
        );
        let zero = DVector::zeros(2);
        let residuals: Vec<DVector<f64>> = (0..10_000)
            .map(|_| sim.step(&zero).unwrap() - sim.true_state())
            .collect();
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<DVector<f64>>() / n;
        let mut cov = DMatrix::zeros(2, 2);
        for r in &residuals {
            let d = r - &mean;
            cov += &d * d.transpose();
        }
        cov /= n - 1.0;
        let tol = 0.05 * 15.0;
        assert_relative_eq!(cov[(0, 0)], 15.0, epsilon = tol);
        assert_relative_eq!(cov[(1, 1)], 15.0, epsilon = tol);
        assert_relative_eq!(cov[(0, 1)], 0.0, epsilon = tol);
    }
}
