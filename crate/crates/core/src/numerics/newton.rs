use nalgebra::{DMatrix, DVector};

use super::NumericsError;

/// Step halvings allowed per Newton iteration.
pub const MAX_HALVINGS: usize = 20;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    pub final_residual_norm: f64,
    pub converged: bool,
    /// ‖F(x_k)‖∞ for k = 0..=iterations.
    pub residual_history: Vec<f64>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| if x.is_finite() { m.max(x.abs()) } else { f64::INFINITY })
}

/// Damped Newton iteration until `‖residual(x)‖∞ ≤ tol`.
///
/// Each full step is halved (at most [`MAX_HALVINGS`] times) until the
/// residual norm decreases. Works in whatever variables the caller chooses.
pub fn newton_solve<R, J>(
    mut residual: R,
    mut jacobian: J,
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, NewtonReport), NumericsError>
where
    R: FnMut(&[f64]) -> Vec<f64>,
    J: FnMut(&[f64]) -> DMatrix<f64>,
{
    if !(tol > 0.0) {
        return Err(NumericsError::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut f = residual(&x);
    if f.len() != n {
        return Err(NumericsError::InvalidInput(format!("residual has {} rows for {n} unknowns", f.len())));
    }
    let mut f_norm = inf_norm(&f);
    let mut report = NewtonReport {
        residual_history: vec![f_norm],
        ..Default::default()
    };
    let fail = |mut report: NewtonReport, f_norm: f64, reason: &str| {
        report.final_residual_norm = f_norm;
        report.converged = false;
        Err(NumericsError::NewtonFailure {
            report,
            reason: reason.to_string(),
        })
    };

    while f_norm > tol {
        if report.iterations >= max_iter {
            return fail(report, f_norm, "iteration limit reached");
        }
        let jac = jacobian(&x);
        if jac.nrows() != n || jac.ncols() != n {
            return Err(NumericsError::InvalidInput(format!(
                "jacobian is {}x{}, expected {n}x{n}",
                jac.nrows(),
                jac.ncols()
            )));
        }
        let rhs = DVector::from_iterator(n, f.iter().map(|v| -v));
        let Some(step) = jac.lu().solve(&rhs) else {
            return fail(report, f_norm, "singular jacobian");
        };
        if step.iter().any(|s| !s.is_finite()) {
            return fail(report, f_norm, "non-finite newton step");
        }

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, si)| xi + scale * si).collect();
            let f_trial = residual(&trial);
            let n_trial = inf_norm(&f_trial);
            if n_trial < f_norm {
                accepted = Some((trial, f_trial, n_trial));
                break;
            }
            scale *= 0.5;
        }
        let Some((x_new, f_new, n_new)) = accepted else {
            return fail(report, f_norm, "step damping exhausted");
        };
        x = x_new;
        f = f_new;
        f_norm = n_new;
        report.iterations += 1;
        report.residual_history.push(f_norm);
    }
    report.final_residual_norm = f_norm;
    report.converged = true;
    Ok((x, report))
}

/// Central finite-difference Jacobian, used to cross-check analytic ones.
pub fn finite_difference_jacobian<R>(mut residual: R, x: &[f64], rel_step: f64) -> DMatrix<f64>
where
    R: FnMut(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let m = residual(x).len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = rel_step * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let fp = residual(&xp);
        xp[j] = x[j] - h;
        let fm = residual(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}
