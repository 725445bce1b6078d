//! Differential evolution (rand/1/bin) for low-dimensional global search.

use crate::model::AxisBox;
use nalgebra::DVector;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct DeSettings {
    /// Population is `population_factor * dim`.
    pub population_factor: usize,
    pub differential_weight: f64,
    pub crossover_rate: f64,
    pub max_generations: usize,
    /// Stop after this many generations without improving the best value.
    pub stagnation_limit: usize,
}

impl Default for DeSettings {
    fn default() -> Self {
        Self {
            population_factor: 15,
            differential_weight: 0.8,
            crossover_rate: 0.9,
            max_generations: 300,
            stagnation_limit: 50,
        }
    }
}

/// Minimise `f` over the box. Deterministic for a fixed seed.
pub fn minimize<F>(f: F, domain: &AxisBox, settings: &DeSettings, seed: u64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let dim = domain.dim();
    let pop_size = (settings.population_factor * dim).max(4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pop: Vec<DVector<f64>> = (0..pop_size).map(|_| domain.sample(&mut rng)).collect();
    let mut cost: Vec<f64> = pop.iter().map(&f).collect();

    let mut best = argmin(&cost);
    let mut stagnant = 0;
    for _ in 0..settings.max_generations {
        let mut improved_best = false;
        for i in 0..pop_size {
            let (a, b, c) = three_distinct(&mut rng, pop_size, i);
            let forced = rng.random_range(0..dim);
            let mut trial = pop[i].clone();
            for d in 0..dim {
                if d == forced || rng.random::<f64>() < settings.crossover_rate {
                    let v = pop[a][d]
                        + settings.differential_weight * (pop[b][d] - pop[c][d]);
                    trial[d] = v.clamp(domain.lo[d], domain.hi[d]);
                }
            }
            let trial_cost = f(&trial);
            if trial_cost <= cost[i] {
                pop[i] = trial;
                cost[i] = trial_cost;
                if trial_cost < cost[best] {
                    best = i;
                    improved_best = true;
                }
            }
        }
        if improved_best {
            stagnant = 0;
        } else {
            stagnant += 1;
            if stagnant >= settings.stagnation_limit {
                break;
            }
        }
    }
    pop[best].clone()
}

fn argmin(cost: &[f64]) -> usize {
    let mut best = 0;
    for (i, c) in cost.iter().enumerate() {
        if *c < cost[best] {
            best = i;
        }
    }
    best
}

fn three_distinct<R: Rng>(rng: &mut R, n: usize, avoid: usize) -> (usize, usize, usize) {
    let mut pick = || loop {
        let k = rng.random_range(0..n);
        if k != avoid {
            return k;
        }
    };
    let a = pick();
    let b = loop {
        let k = pick();
        if k != a {
            break k;
        }
    };
    let c = loop {
        let k = pick();
        if k != a && k != b {
            break k;
        }
    };
    (a, b, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let domain = AxisBox::new(vec![-5.0, -5.0], vec![5.0, 5.0]);
        let f = |x: &DVector<f64>| (x[0] - 1.2).powi(2) + 2.0 * (x[1] + 0.4).powi(2);
        let best = minimize(f, &domain, &DeSettings::default(), 7);
        assert!((best[0] - 1.2).abs() < 1e-2, "{best}");
        assert!((best[1] + 0.4).abs() < 1e-2, "{best}");
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let domain = AxisBox::new(vec![-3.0], vec![3.0]);
        let f = |x: &DVector<f64>| x[0].cos() + 0.1 * x[0].abs();
        let a = minimize(&f, &domain, &DeSettings::default(), 42);
        let b = minimize(&f, &domain, &DeSettings::default(), 42);
        assert_eq!(a, b);
    }

    #[test]
    fn respects_domain_bounds() {
        let domain = AxisBox::new(vec![0.0, 2.0], vec![1.0, 2.5]);
        // Minimum far outside the box: solution must sit on the boundary.
        let f = |x: &DVector<f64>| (x[0] - 10.0).powi(2) + (x[1] - 10.0).powi(2);
        let best = minimize(f, &domain, &DeSettings::default(), 3);
        assert!((best[0] - 1.0).abs() < 1e-9);
        assert!((best[1] - 2.5).abs() < 1e-9);
    }
}
