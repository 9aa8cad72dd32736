//! Levenberg-Marquardt nonlinear least squares with a central-difference
//! Jacobian.
//!
//! Used for correlation-family matching and minimum-contrast fitting. Callers
//! optimize over unconstrained coordinates; a residual closure returning
//! `None` marks an invalid point and the step is rejected.

use nalgebra::{DMatrix, DVector};

use crate::error::{LgcpError, Result};

#[derive(Debug, Clone, Copy)]
pub struct LsqOptions {
    pub max_iterations: usize,
    /// Relative SSE decrease below which an accepted step counts as converged.
    pub ftol: f64,
    /// Relative step length below which the iteration stops.
    pub xtol: f64,
    /// Infinity norm of `J^T r` below which the iteration stops.
    pub gtol: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        LsqOptions {
            max_iterations: 500,
            ftol: 1e-15,
            xtol: 1e-13,
            gtol: 1e-14,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqResult {
    pub params: Vec<f64>,
    pub sse: f64,
    pub initial_sse: f64,
    pub iterations: usize,
}

fn sse(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn jacobian<F>(f: &F, x: &[f64], r0: &[f64], step: f64) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = step * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let plus = f(&xp);
        xp[j] = x[j] - h;
        let minus = f(&xp);
        xp[j] = x[j];
        match (plus, minus) {
            (Some(p), Some(m)) => {
                for i in 0..r0.len() {
                    jac[(i, j)] = (p[i] - m[i]) / (2.0 * h);
                }
            }
            // one-sided at the edge of the valid region
            (Some(p), None) => {
                for i in 0..r0.len() {
                    jac[(i, j)] = (p[i] - r0[i]) / h;
                }
            }
            (None, Some(m)) => {
                for i in 0..r0.len() {
                    jac[(i, j)] = (r0[i] - m[i]) / h;
                }
            }
            (None, None) => return None,
        }
    }
    Some(jac)
}

pub fn levenberg_marquardt<F>(residuals: F, x0: &[f64], opts: &LsqOptions) -> Result<LsqResult>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut x = x0.to_vec();
    let mut r = residuals(&x)
        .ok_or_else(|| LgcpError::invalid("least squares: initial point is not valid"))?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(LgcpError::NonFinite("least squares initial residuals".into()));
    }
    let initial_sse = sse(&r);
    let mut cost = initial_sse;
    let mut lambda = 1e-3;

    for iteration in 1..=opts.max_iterations {
        if cost == 0.0 {
            return Ok(LsqResult { params: x, sse: cost, initial_sse, iterations: iteration });
        }
        let jac = jacobian(&residuals, &x, &r, opts.fd_step).ok_or_else(|| {
            LgcpError::NoConvergence { iterations: iteration, best: x.clone(), objective: cost }
        })?;
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * rv;
        if g.amax() <= opts.gtol {
            return Ok(LsqResult { params: x, sse: cost, initial_sse, iterations: iteration });
        }

        let mut accepted = false;
        while lambda < 1e20 {
            let mut a = jtj.clone();
            for j in 0..x.len() {
                a[(j, j)] += lambda * jtj[(j, j)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let trial_r = residuals(&trial).filter(|v| v.iter().all(|e| e.is_finite()));
            let trial_cost = trial_r.as_deref().map(sse).unwrap_or(f64::INFINITY);
            if trial_cost < cost {
                let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let small_step = step.norm() <= opts.xtol * (xnorm + opts.xtol);
                let small_gain = cost - trial_cost <= opts.ftol * cost;
                x = trial;
                r = trial_r.expect("finite trial residuals");
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                if small_step || small_gain {
                    return Ok(LsqResult { params: x, sse: cost, initial_sse, iterations: iteration });
                }
                accepted = true;
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // no descent direction left at any damping level
            return Ok(LsqResult { params: x, sse: cost, initial_sse, iterations: iteration });
        }
    }
    Err(LgcpError::NoConvergence {
        iterations: opts.max_iterations,
        best: x,
        objective: cost,
    })
}
