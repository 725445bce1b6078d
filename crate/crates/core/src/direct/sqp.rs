//! Dense equality-constrained SQP with simple bound handling.
//!
//! Designed for the belief-space transcription problems in this crate: tens of
//! variables, equality constraints from segment dynamics, box bounds on the
//! control entries only. Quasi-Newton (damped BFGS) Hessian, full-space KKT
//! solve for the step, l1 merit line search.
//!
//! Bound handling is deliberately minimal: degenerate bounds (lo == hi) pin
//! the variable, other bounds cap the line-search step. The KKT residual is
//! reported over *all* variables with least-squares equality multipliers and
//! no bound multipliers, so a problem whose pull on a pinned or clamped
//! control never vanishes honestly reports `converged = false`.

use nalgebra::{DMatrix, DVector};

pub(crate) struct NlpFunctions<'a> {
    pub objective: Box<dyn Fn(&DVector<f64>) -> f64 + 'a>,
    pub gradient: Box<dyn Fn(&DVector<f64>) -> DVector<f64> + 'a>,
    /// Exact constant objective Hessian (Gauss-Newton mode). When present the
    /// QP uses it directly instead of a BFGS estimate — the right choice for
    /// objectives that are quadratic in the decision variables.
    pub objective_hessian: Option<DMatrix<f64>>,
    pub constraints: Box<dyn Fn(&DVector<f64>) -> DVector<f64> + 'a>,
    pub constraint_jac: Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + 'a>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct SqpSettings {
    pub max_iterations: usize,
    pub kkt_tol: f64,
    pub feas_tol: f64,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 120,
            kkt_tol: 1e-4,
            feas_tol: 1e-6,
        }
    }
}

/// Largest per-variable move accepted in one iteration (problem units).
const STEP_TRUST_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StopReason {
    Converged,
    MaxIterations,
    LineSearchFailure,
    SingularKkt,
}

#[derive(Debug, Clone)]
pub(crate) struct SqpSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub kkt_norm: f64,
    pub constraint_residual: f64,
    pub reason: StopReason,
}

impl SqpSolution {
    pub fn converged(&self) -> bool {
        self.reason == StopReason::Converged
    }
}

pub(crate) fn solve(
    nlp: &NlpFunctions,
    x0: &DVector<f64>,
    settings: &SqpSettings,
) -> Result<SqpSolution, &'static str> {
    let nv = x0.len();
    let mut x = clamp(x0, &nlp.lower, &nlp.upper);
    let free: Vec<bool> = (0..nv).map(|i| nlp.lower[i] < nlp.upper[i]).collect();
    let free_idx: Vec<usize> = (0..nv).filter(|&i| free[i]).collect();
    let nf = free_idx.len();

    let f0 = (nlp.objective)(&x);
    if !f0.is_finite() {
        return Err("objective not finite at the initial point");
    }
    // The terminal-covariance weight puts raw objectives at ~1e7; optimality
    // tolerances are enforced on a normalised objective instead. The scale
    // tracks the CURRENT objective: a warm start can sit orders of magnitude
    // above the optimum, and a scale frozen there would turn the relative
    // tolerance into a giant absolute one.
    let mut scale = 1.0 / f0.abs().max(1.0);

    // Gauss-Newton curvature when the exact objective Hessian is available;
    // the tiny ridge keeps the free block positive definite even where the
    // objective ignores a variable (its curvature then comes from the
    // constraints through the KKT system).
    let gauss_newton = nlp.objective_hessian.is_some();
    let mut b = match &nlp.objective_hessian {
        Some(h) => {
            select_submatrix(h, &free_idx) * scale + 1e-8 * DMatrix::<f64>::identity(nf, nf)
        }
        None => DMatrix::<f64>::identity(nf, nf),
    };
    let mut rho = 1.0_f64;
    let mut f = f0;
    let mut g_raw = (nlp.gradient)(&x);
    let mut g = &g_raw * scale;
    let mut c = (nlp.constraints)(&x);
    let mut jac = (nlp.constraint_jac)(&x);
    let nc = c.len();
    let mut iterations = 0;
    let mut reason = StopReason::MaxIterations;
    let mut kkt_norm = f64::INFINITY;
    let mut feas = if nc > 0 { c.amax() } else { 0.0 };

    for iter in 0..settings.max_iterations {
        iterations = iter;
        // Refresh the normalisation; B lives in the scaled metric and follows
        // it (rho is kept in problem units and scaled at use).
        let new_scale = 1.0 / f.abs().max(1.0);
        if new_scale != scale {
            let ratio = new_scale / scale;
            b *= ratio;
            scale = new_scale;
            g = &g_raw * scale;
        }
        // Least-squares multipliers over the free columns.
        let jf = select_columns(&jac, &free_idx);
        let gf = select_entries(&g, &free_idx);
        let lambda = ls_multipliers(&jf, &gf);
        let lag_grad = &g + jac.transpose() * &lambda;
        kkt_norm = lag_grad.amax();
        feas = if nc > 0 { c.amax() } else { 0.0 };
        if kkt_norm <= settings.kkt_tol && feas <= settings.feas_tol {
            reason = StopReason::Converged;
            break;
        }
        if nf == 0 {
            // Every variable is pinned; nothing can move.
            reason = StopReason::LineSearchFailure;
            break;
        }

        // KKT step over free variables (regularised saddle system).
        let mut step = match kkt_step(&b, &jf, &gf, &c) {
            Some(p) => p,
            None => {
                reason = StopReason::SingularKkt;
                break;
            }
        };
        // Remove components that push a clamped variable outward.
        for (k, &i) in free_idx.iter().enumerate() {
            let at_lo = x[i] <= nlp.lower[i] + 1e-12 && step.p[k] < 0.0;
            let at_hi = x[i] >= nlp.upper[i] - 1e-12 && step.p[k] > 0.0;
            if at_lo || at_hi {
                step.p[k] = 0.0;
            }
        }
        let mut p_full = DVector::zeros(nv);
        for (k, &i) in free_idx.iter().enumerate() {
            p_full[i] = step.p[k];
        }
        if p_full.amax() <= 1e-11 * (1.0 + x.amax()) {
            reason = StopReason::LineSearchFailure;
            break;
        }

        // Cap the step at the control box, and at a trust radius: the
        // constraint Jacobian is finite-differenced, so a full restoration
        // step through strongly curved belief dynamics overshoots badly.
        let mut alpha_max = 1.0_f64;
        for &i in &free_idx {
            if p_full[i] > 0.0 && nlp.upper[i].is_finite() {
                alpha_max = alpha_max.min((nlp.upper[i] - x[i]) / p_full[i]);
            } else if p_full[i] < 0.0 && nlp.lower[i].is_finite() {
                alpha_max = alpha_max.min((nlp.lower[i] - x[i]) / p_full[i]);
            }
        }
        alpha_max = alpha_max.min(STEP_TRUST_RADIUS / p_full.amax());
        alpha_max = alpha_max.clamp(0.0, 1.0);
        if alpha_max <= 1e-14 {
            reason = StopReason::LineSearchFailure;
            break;
        }

        // l1 penalty weight in problem units, tracking the physical
        // multiplier estimates (QP multipliers are in the scaled metric).
        if nc > 0 {
            rho = rho.max(1.1 * step.lambda_qp.amax() / scale + 1e-4);
        }
        if std::env::var_os("HYB_SQP_TRACE").is_some() {
            eprintln!(
                "it {iter:3} f {f:14.2} |c| {:9.3e} kkt {kkt_norm:9.3e} rho {rho:9.3e} |p| {:9.3e} |lqp| {:9.3e}",
                feas,
                step.p.amax(),
                step.lambda_qp.amax()
            );
        }
        let merit0 = scale * (f + rho * c.lp_norm(1));
        let descent = g.dot(&p_full) - scale * rho * c.lp_norm(1);
        let mut alpha = alpha_max;
        let mut accepted = false;
        while alpha > 1e-12 * alpha_max.max(1.0) {
            let xt = clamp(&(&x + alpha * &p_full), &nlp.lower, &nlp.upper);
            let ft = (nlp.objective)(&xt);
            let ct = (nlp.constraints)(&xt);
            let merit_t = scale * (ft + rho * ct.lp_norm(1));
            if merit_t.is_finite() && merit_t <= merit0 + 1e-4 * alpha * descent.min(0.0) {
                // BFGS update with the QP multipliers held fixed.
                let g_raw_new = (nlp.gradient)(&xt);
                let g_new = &g_raw_new * scale;
                let jac_new = (nlp.constraint_jac)(&xt);
                if !gauss_newton {
                    let lag_old =
                        select_entries(&(&g + jac.transpose() * &step.lambda_qp), &free_idx);
                    let lag_new =
                        select_entries(&(&g_new + jac_new.transpose() * &step.lambda_qp), &free_idx);
                    let s = select_entries(&(&xt - &x), &free_idx);
                    let y = lag_new - lag_old;
                    bfgs_update(&mut b, &s, &y);
                }
                x = xt;
                f = ft;
                g_raw = g_raw_new;
                g = g_new;
                c = ct;
                jac = jac_new;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            reason = StopReason::LineSearchFailure;
            break;
        }
    }

    if reason == StopReason::MaxIterations || reason == StopReason::LineSearchFailure {
        // Recompute the certificates at the final point.
        let g_final = &g_raw * (1.0 / f.abs().max(1.0));
        let jf = select_columns(&jac, &free_idx);
        let gf = select_entries(&g_final, &free_idx);
        let lambda = ls_multipliers(&jf, &gf);
        kkt_norm = (&g_final + jac.transpose() * &lambda).amax();
        feas = if nc > 0 { c.amax() } else { 0.0 };
        if kkt_norm <= settings.kkt_tol && feas <= settings.feas_tol {
            reason = StopReason::Converged;
        }
    }

    Ok(SqpSolution {
        x,
        iterations,
        kkt_norm,
        constraint_residual: feas,
        reason,
    })
}

struct QpStep {
    p: DVector<f64>,
    lambda_qp: DVector<f64>,
}

/// Solve the regularised KKT system [B J^T; J -dI] [p; l] = [-g; -c].
fn kkt_step(b: &DMatrix<f64>, j: &DMatrix<f64>, g: &DVector<f64>, c: &DVector<f64>) -> Option<QpStep> {
    let nf = b.nrows();
    let nc = j.nrows();
    let n = nf + nc;
    let mut kkt = DMatrix::zeros(n, n);
    kkt.view_mut((0, 0), (nf, nf)).copy_from(b);
    kkt.view_mut((0, nf), (nf, nc)).copy_from(&j.transpose());
    kkt.view_mut((nf, 0), (nc, nf)).copy_from(j);
    for k in 0..nc {
        kkt[(nf + k, nf + k)] = -1e-10;
    }
    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(0, nf).copy_from(&(-g));
    rhs.rows_mut(nf, nc).copy_from(&(-c));
    let sol = kkt.lu().solve(&rhs)?;
    let p = sol.rows(0, nf).into_owned();
    let lambda_qp = sol.rows(nf, nc).into_owned();
    if !p.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(QpStep { p, lambda_qp })
}

fn ls_multipliers(jf: &DMatrix<f64>, gf: &DVector<f64>) -> DVector<f64> {
    let nc = jf.nrows();
    if nc == 0 {
        return DVector::zeros(0);
    }
    let a = jf * jf.transpose() + 1e-12 * DMatrix::<f64>::identity(nc, nc);
    let rhs = -(jf * gf);
    a.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(nc))
}

/// Damped BFGS (Powell's rule) keeping B positive definite.
fn bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let sts = s.dot(s);
    if sts < 1e-16 {
        return;
    }
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    let sy = s.dot(y);
    let theta = if sy >= 0.2 * sbs {
        1.0
    } else {
        (0.8 * sbs) / (sbs - sy)
    };
    let r = theta * y + (1.0 - theta) * &bs;
    let sr = s.dot(&r);
    if sr <= 1e-14 || sbs <= 1e-14 {
        return;
    }
    *b += &r * r.transpose() / sr - &bs * bs.transpose() / sbs;
}

fn clamp(x: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        x.iter()
            .enumerate()
            .map(|(i, v)| v.max(lo[i]).min(hi[i])),
    )
}

fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), idx.len());
    for (k, &i) in idx.iter().enumerate() {
        out.set_column(k, &m.column(i));
    }
    out
}

fn select_submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(idx.len(), idx.len());
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            out[(r, c)] = m[(i, j)];
        }
    }
    out
}

fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unconstrained_quadratic() -> (NlpFunctions<'static>, DVector<f64>) {
        // min (x0-1)^2 + 2 (x1+0.5)^2
        let nlp = NlpFunctions {
            objective: Box::new(|x: &DVector<f64>| {
                (x[0] - 1.0).powi(2) + 2.0 * (x[1] + 0.5).powi(2)
            }),
            gradient: Box::new(|x: &DVector<f64>| {
                DVector::from_vec(vec![2.0 * (x[0] - 1.0), 4.0 * (x[1] + 0.5)])
            }),
            objective_hessian: None,
            constraints: Box::new(|_| DVector::zeros(0)),
            constraint_jac: Box::new(|_| DMatrix::zeros(0, 2)),
            lower: DVector::from_vec(vec![f64::NEG_INFINITY; 2]),
            upper: DVector::from_vec(vec![f64::INFINITY; 2]),
        };
        (nlp, DVector::from_vec(vec![4.0, 4.0]))
    }

    #[test]
    fn quadratic_minimum_found() {
        let (nlp, x0) = unconstrained_quadratic();
        let sol = solve(&nlp, &x0, &SqpSettings::default()).unwrap();
        assert!(sol.converged(), "{:?}", sol.reason);
        // The kkt tolerance is relative to the initial objective (~50), so
        // positions are only guaranteed to a few 1e-3.
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 5e-3);
        assert_relative_eq!(sol.x[1], -0.5, epsilon = 5e-3);
    }

    #[test]
    fn equality_constraint_respected() {
        // min x0^2 + x1^2  s.t. x0 + x1 = 2  -> (1, 1)
        let nlp = NlpFunctions {
            objective: Box::new(|x: &DVector<f64>| x[0] * x[0] + x[1] * x[1]),
            gradient: Box::new(|x: &DVector<f64>| 2.0 * x),
            objective_hessian: None,
            constraints: Box::new(|x: &DVector<f64>| {
                DVector::from_vec(vec![x[0] + x[1] - 2.0])
            }),
            constraint_jac: Box::new(|_| DMatrix::from_row_slice(1, 2, &[1.0, 1.0])),
            lower: DVector::from_vec(vec![f64::NEG_INFINITY; 2]),
            upper: DVector::from_vec(vec![f64::INFINITY; 2]),
        };
        let sol = solve(&nlp, &DVector::from_vec(vec![5.0, -3.0]), &SqpSettings::default()).unwrap();
        assert!(sol.converged());
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 5e-3);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 5e-3);
        assert!(sol.constraint_residual <= 1e-6);
    }

    #[test]
    fn pinned_variable_reports_unconverged_when_pulled() {
        // min (x0-1)^2 with x0 pinned at 0: gradient never vanishes.
        let nlp = NlpFunctions {
            objective: Box::new(|x: &DVector<f64>| (x[0] - 1.0).powi(2)),
            gradient: Box::new(|x: &DVector<f64>| DVector::from_vec(vec![2.0 * (x[0] - 1.0)])),
            objective_hessian: None,
            constraints: Box::new(|_| DVector::zeros(0)),
            constraint_jac: Box::new(|_| DMatrix::zeros(0, 1)),
            lower: DVector::from_vec(vec![0.0]),
            upper: DVector::from_vec(vec![0.0]),
        };
        let sol = solve(&nlp, &DVector::from_vec(vec![0.7]), &SqpSettings::default()).unwrap();
        assert!(!sol.converged());
        assert_relative_eq!(sol.x[0], 0.0);
        assert!(sol.kkt_norm > 1e-4);
    }

    #[test]
    fn bounds_cap_the_iterates()
    {
        // min (x0-3)^2 subject to x0 <= 1: lands on the bound.
        let nlp = NlpFunctions {
            objective: Box::new(|x: &DVector<f64>| (x[0] - 3.0).powi(2)),
            gradient: Box::new(|x: &DVector<f64>| DVector::from_vec(vec![2.0 * (x[0] - 3.0)])),
            objective_hessian: None,
            constraints: Box::new(|_| DVector::zeros(0)),
            constraint_jac: Box::new(|_| DMatrix::zeros(0, 1)),
            lower: DVector::from_vec(vec![-1.0]),
            upper: DVector::from_vec(vec![1.0]),
        };
        let sol = solve(&nlp, &DVector::from_vec(vec![0.0]), &SqpSettings::default()).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-12);
        assert!(!sol.converged());
    }
}
