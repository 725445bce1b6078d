//! Small numeric helpers shared across the crate.

use nalgebra::{DMatrix, DVector};

/// Force exact symmetry; covariance updates accumulate asymmetric rounding.
pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Symmetric positive semidefinite check with an absolute eigenvalue slack.
pub(crate) fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > tol.max(1e-9 * m[(i, i)].abs().max(1.0)) {
                return false;
            }
        }
    }
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .all(|&e| e >= -tol)
}

/// Lower Cholesky factor, symmetrizing first. `None` when not positive definite.
pub(crate) fn cholesky_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    nalgebra::Cholesky::new(symmetrize(m)).map(|c| c.l())
}

/// Log density of N(mean, cov) at `x`, via a Cholesky solve.
/// `None` when `cov` is not positive definite.
pub(crate) fn gaussian_logpdf(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Option<f64> {
    let chol = nalgebra::Cholesky::new(symmetrize(cov))?;
    let d = x - mean;
    let sol = chol.solve(&d);
    let maha = d.dot(&sol);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let k = x.len() as f64;
    Some(-0.5 * (maha + log_det + k * (2.0 * std::f64::consts::PI).ln()))
}

/// Central finite-difference Jacobian of `f` at `x`, one column per input.
pub(crate) fn jacobian_fd<F>(f: F, x: &DVector<f64>, rel_step: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let fx = f(x);
    let mut jac = DMatrix::zeros(fx.len(), x.len());
    for j in 0..x.len() {
        let h = rel_step * (1.0 + x[j].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// Standard normal CDF, computed through `erfc` so both tails stay accurate.
pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub(crate) fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Mass, mean, and variance of a scalar normal restricted to `[lo, hi]`.
/// Returns `(mass, mean, var)`; when the interval carries no mass the
/// moments are meaningless and callers must drop the branch.
pub(crate) fn truncated_moments_1d(mean: f64, var: f64, lo: f64, hi: f64) -> (f64, f64, f64) {
    let sigma = var.sqrt();
    if !(sigma > 0.0) {
        let mass = if lo <= mean && mean <= hi { 1.0 } else { 0.0 };
        return (mass, mean, var);
    }
    let a = (lo - mean) / sigma;
    let b = (hi - mean) / sigma;
    // Difference of CDFs through the erfc of whichever tail the interval
    // sits in, so nearby large values never cancel.
    let mass = if a + b > 0.0 {
        0.5 * (libm::erfc(a / std::f64::consts::SQRT_2) - libm::erfc(b / std::f64::consts::SQRT_2))
    } else {
        0.5 * (libm::erfc(-b / std::f64::consts::SQRT_2) - libm::erfc(-a / std::f64::consts::SQRT_2))
    };
    let mass = mass.clamp(0.0, 1.0);
    if mass <= 0.0 {
        return (0.0, mean.clamp(lo, hi), var);
    }
    let pa = normal_pdf(a);
    let pb = normal_pdf(b);
    // z·φ(z) with the underflowed density treated as an exact zero.
    let apa = if pa == 0.0 { 0.0 } else { a * pa };
    let bpb = if pb == 0.0 { 0.0 } else { b * pb };
    let d = (pa - pb) / mass;
    let t_mean = mean + sigma * d;
    let t_var = (var * (1.0 + (apa - bpb) / mass - d * d)).clamp(0.0, var);
    (mass, t_mean.clamp(lo, hi), t_var)
}

/// Empirical mean and covariance (1/n normalisation) of a set of points.
pub(crate) fn sample_moments(points: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = points.len();
    assert!(n > 0, "sample_moments needs at least one point");
    let dim = points[0].len();
    let mut mean = DVector::zeros(dim);
    for p in points {
        mean += p;
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for p in points {
        let d = p - &mean;
        cov += &d * d.transpose();
    }
    cov /= n as f64;
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn psd_accepts_identity_rejects_indefinite() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert!(is_psd(&id, 1e-12));
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(!is_psd(&neg, 1e-12));
    }

    #[test]
    fn logpdf_matches_scalar_formula() {
        let x = DVector::from_vec(vec![1.5]);
        let mean = DVector::from_vec(vec![0.5]);
        let cov = DMatrix::from_element(1, 1, 4.0);
        let expected = -0.5 * ((1.0f64 / 4.0) + 4.0f64.ln() + (2.0 * std::f64::consts::PI).ln());
        assert_relative_eq!(
            gaussian_logpdf(&x, &mean, &cov).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn fd_jacobian_matches_linear_map() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 3.0]);
        let af = a.clone();
        let jac = jacobian_fd(move |x| &af * x, &DVector::from_vec(vec![0.3, -0.7]), 1e-6);
        assert_relative_eq!(jac, a, epsilon = 1e-8);
    }

    #[test]
    fn normal_cdf_matches_tabulated_values() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(normal_cdf(1.96), 0.975_002_104_9, epsilon = 1e-9);
        assert_relative_eq!(normal_cdf(-1.0), 0.158_655_253_9, epsilon = 1e-9);
    }

    #[test]
    fn truncation_to_half_line_matches_closed_form() {
        // N(0,1) on [0, ∞): mass 1/2, mean √(2/π), var 1 − 2/π.
        let (mass, mean, var) = truncated_moments_1d(0.0, 1.0, 0.0, 1e6);
        assert_relative_eq!(mass, 0.5, epsilon = 1e-12);
        assert_relative_eq!(mean, (2.0 / std::f64::consts::PI).sqrt(), epsilon = 1e-10);
        assert_relative_eq!(var, 1.0 - 2.0 / std::f64::consts::PI, epsilon = 1e-10);
    }

    #[test]
    fn truncation_to_symmetric_interval_keeps_mean() {
        let (mass, mean, var) = truncated_moments_1d(0.0, 1.0, -1.0, 1.0);
        assert_relative_eq!(mass, 0.682_689_492_1, epsilon = 1e-9);
        assert_relative_eq!(mean, 0.0, epsilon = 1e-12);
        assert_relative_eq!(var, 0.291_125_094_8, epsilon = 1e-9);
    }

    #[test]
    fn truncation_to_wide_interval_is_identity() {
        let (mass, mean, var) = truncated_moments_1d(2.0, 4.0, -100.0, 100.0);
        assert_relative_eq!(mass, 1.0, epsilon = 1e-12);
        assert_relative_eq!(mean, 2.0, epsilon = 1e-12);
        assert_relative_eq!(var, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn moments_of_constant_points_are_degenerate() {
        let pts = vec![DVector::from_vec(vec![2.0, -1.0]); 10];
        let (mean, cov) = sample_moments(&pts);
        assert_relative_eq!(mean[0], 2.0);
        assert_relative_eq!(cov.norm(), 0.0);
    }
}
