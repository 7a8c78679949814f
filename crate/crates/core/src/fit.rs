//! Levenberg–Marquardt least squares with a finite-difference Jacobian.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::qcore::{ComplexMatrix, LuDecomposition};
use crate::{Error, Result, C64};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 200;
/// Relative finite-difference step per parameter.
pub const JACOBIAN_STEP: f64 = 1e-6;
/// Largest scaled gradient `‖Jᵀr‖ / (‖J‖_F ‖r‖)` accepted at convergence.
pub const GRADIENT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub params: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// `‖y − f(p)‖₂` at the reported parameters.
    pub residual_norm: f64,
    /// Scaled gradient `‖Jᵀr‖ / (‖J‖_F ‖r‖)` (0 for an exact fit).
    pub gradient_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn residuals(model: &impl Fn(f64, &[f64]) -> f64, x: &[f64], y: &[f64], p: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(&xi, &yi)| yi - model(xi, p)).collect()
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Column-major Jacobian of the model (not the residual) by central differences.
fn jacobian(model: &impl Fn(f64, &[f64]) -> f64, x: &[f64], p: &[f64]) -> Vec<Vec<f64>> {
    let mut q = p.to_vec();
    (0..p.len())
        .map(|k| {
            let h = JACOBIAN_STEP * p[k].abs().max(JACOBIAN_STEP);
            q[k] = p[k] + h;
            let up: Vec<f64> = x.iter().map(|&xi| model(xi, &q)).collect();
            q[k] = p[k] - h;
            let down: Vec<f64> = x.iter().map(|&xi| model(xi, &q)).collect();
            q[k] = p[k];
            up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        })
        .collect()
}

fn real_lu(a: &[Vec<f64>]) -> Result<LuDecomposition> {
    let n = a.len();
    LuDecomposition::new(&ComplexMatrix::from_fn(n, n, |i, j| C64::new(a[i][j], 0.0)))
}

struct Normal {
    jtj: Vec<Vec<f64>>,
    grad: Vec<f64>,
    diag: Vec<f64>,
    scaled_gradient: f64,
}

fn normal_equations(jac: &[Vec<f64>], r: &[f64]) -> Normal {
    let n = jac.len();
    let mut jtj = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            jtj[a][b] = jac[a].iter().zip(&jac[b]).map(|(u, v)| u * v).sum();
        }
    }
    let grad: Vec<f64> = jac.iter().map(|c| c.iter().zip(r).map(|(u, v)| u * v).sum()).collect();
    let max_diag = (0..n).map(|k| jtj[k][k]).fold(0.0, f64::max);
    let floor = (1e-12 * max_diag).max(1e-300);
    let diag = (0..n).map(|k| jtj[k][k].max(floor)).collect();
    let jnorm = (0..n).map(|k| jtj[k][k]).sum::<f64>().sqrt();
    let rnorm = sum_sq(r).sqrt();
    let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let scaled_gradient = if jnorm > 0.0 && rnorm > 0.0 { gnorm / (jnorm * rnorm) } else { 0.0 };
    Normal { jtj, grad, diag, scaled_gradient }
}

fn damped(n: &Normal, lambda: f64) -> Vec<Vec<f64>> {
    let mut a = n.jtj.clone();
    for k in 0..a.len() {
        a[k][k] += lambda * n.diag[k];
    }
    a
}

/// Fits `y ≈ model(x, p)` starting from `p0`.
///
/// Iterates until an accepted step changes the residual sum of squares by a
/// relative amount below `tol`, or for at most [`MAX_ITERATIONS`]. Standard
/// errors come from the damped normal-equations inverse scaled by the
/// residual variance.
pub fn fit_least_squares(
    model: impl Fn(f64, &[f64]) -> f64,
    x: &[f64],
    y: &[f64],
    p0: &[f64],
    tol: f64,
) -> Result<FitReport> {
    let n = p0.len();
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: (x.len(), 1), found: (y.len(), 1) });
    }
    if x.len() < n + 1 || n == 0 {
        return Err(Error::InvalidParameter {
            name: "data",
            reason: alloc::format!("need at least {} points for {} parameters", n + 1, n),
        });
    }
    if x.iter().chain(y).chain(p0).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let y_scale = sum_sq(y).sqrt().max(1e-300);
    let exact = (1e-14 * y_scale) * (1e-14 * y_scale);

    let mut p = p0.to_vec();
    let mut r = residuals(&model, x, y, &p);
    let mut rss = sum_sq(&r);
    if !rss.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut normal = normal_equations(&jacobian(&model, x, &p), &r);
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        if rss <= exact {
            converged = true;
            break;
        }
        let mut accepted = None;
        while lambda < 1e20 {
            let step = real_lu(&damped(&normal, lambda)).and_then(|lu| {
                lu.solve(&normal.grad.iter().map(|g| C64::new(*g, 0.0)).collect::<Vec<_>>())
            });
            if let Ok(step) = step {
                let trial: Vec<f64> = p.iter().zip(&step).map(|(a, d)| a + d.re).collect();
                let tr = residuals(&model, x, y, &trial);
                let trss = sum_sq(&tr);
                if trss.is_finite() && trss <= rss {
                    accepted = Some((trial, tr, trss));
                    lambda = (lambda / 10.0).max(1e-12);
                    break;
                }
            }
            lambda *= 10.0;
        }
        let Some((trial, tr, trss)) = accepted else {
            // no downhill step exists: a stationary point
            converged = normal.scaled_gradient <= GRADIENT_TOLERANCE;
            break;
        };
        let change = (rss - trss) / rss;
        p = trial;
        r = tr;
        rss = trss;
        normal = normal_equations(&jacobian(&model, x, &p), &r);
        if change < tol && normal.scaled_gradient <= GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
    }
    if rss <= exact {
        converged = true;
    }
    let dof = (x.len() - n) as f64;
    let sigma2 = (rss / dof).max(exact / dof).max(1e-300);
    // a small ridge keeps unidentifiable parameters finite but inflated
    let mut cov = damped(&normal, lambda.max(1e-12));
    let ridge = 1e-10 * (0..n).map(|k| normal.jtj[k][k]).fold(0.0, f64::max);
    for k in 0..n {
        cov[k][k] += ridge.max(1e-300);
    }
    let std_errors = match real_lu(&cov) {
        Ok(lu) => (0..n)
            .map(|k| {
                let mut e = vec![C64::new(0.0, 0.0); n];
                e[k] = C64::new(1.0, 0.0);
                lu.solve(&e).map(|v| (sigma2 * v[k].re.abs()).sqrt()).unwrap_or(f64::INFINITY)
            })
            .collect(),
        Err(_) => vec![f64::INFINITY; n],
    };
    Ok(FitReport {
        params: p,
        std_errors,
        residual_norm: rss.sqrt(),
        gradient_norm: normal.scaled_gradient,
        converged,
        iterations,
    })
}
