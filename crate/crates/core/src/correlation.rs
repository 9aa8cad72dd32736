//! Isotropic correlation functions of the latent field.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{LgcpError, Result};
use crate::lsq::{levenberg_marquardt, LsqOptions};
use crate::special::{bessel_k_int_scaled, bessel_k_scaled};

/// Below `d < MATERN_ORIGIN * range` the Matérn correlation is taken as 1.
const MATERN_ORIGIN: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CorrelationModel {
    /// `exp(-decay * d^exponent)`, `decay > 0`, `exponent in (0, 2]`.
    PowerExponential { decay: f64, exponent: f64 },
    /// `(Gamma(shape) 2^(shape-1))^-1 (d/range)^shape K_shape(d/range)`.
    Matern { range: f64, shape: f64 },
}

impl CorrelationModel {
    pub fn power_exponential(decay: f64, exponent: f64) -> Result<Self> {
        let m = CorrelationModel::PowerExponential { decay, exponent };
        m.validate()?;
        Ok(m)
    }

    pub fn matern(range: f64, shape: f64) -> Result<Self> {
        let m = CorrelationModel::Matern { range, shape };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CorrelationModel::PowerExponential { decay, exponent } => {
                if !(decay > 0.0 && decay.is_finite()) {
                    return Err(LgcpError::invalid(format!("decay must be positive, got {decay}")));
                }
                if !(exponent > 0.0 && exponent <= 2.0) {
                    return Err(LgcpError::invalid(format!(
                        "power exponent must lie in (0, 2], got {exponent}"
                    )));
                }
            }
            CorrelationModel::Matern { range, shape } => {
                if !(range > 0.0 && range.is_finite()) {
                    return Err(LgcpError::invalid(format!("Matérn range must be positive, got {range}")));
                }
                if !(shape > 0.0 && shape.is_finite()) {
                    return Err(LgcpError::invalid(format!("Matérn shape must be positive, got {shape}")));
                }
            }
        }
        Ok(())
    }

    /// Correlation at distance `d >= 0`.
    pub fn corr(&self, d: f64) -> Result<f64> {
        if !(d >= 0.0) || !d.is_finite() {
            return Err(LgcpError::invalid(format!("distance must be finite and >= 0, got {d}")));
        }
        Ok(self.eval(d))
    }

    /// Unchecked evaluation; `d` is assumed finite and nonnegative.
    pub fn eval(&self, d: f64) -> f64 {
        match *self {
            CorrelationModel::PowerExponential { decay, exponent } => {
                if d == 0.0 {
                    1.0
                } else {
                    (-decay * d.powf(exponent)).exp()
                }
            }
            CorrelationModel::Matern { range, shape } => matern(d / range, shape),
        }
    }

    /// Distance at which the correlation drops to 0.5.
    pub fn d_half(&self) -> f64 {
        match *self {
            CorrelationModel::PowerExponential { decay, exponent } => {
                (std::f64::consts::LN_2 / decay).powf(1.0 / exponent)
            }
            CorrelationModel::Matern { range, .. } => {
                let mut hi = range;
                while self.eval(hi) > 0.5 {
                    hi *= 2.0;
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if self.eval(mid) > 0.5 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

fn matern_prefactor_ln(shape: f64) -> f64 {
    -(ln_gamma(shape) + (shape - 1.0) * std::f64::consts::LN_2)
}

/// Matérn correlation at scaled distance `x = d / range`.
///
/// Integer shapes go through the `K_0`/`K_1` recurrence, others through the
/// general-order routine.
pub fn matern(x: f64, shape: f64) -> f64 {
    if x < MATERN_ORIGIN {
        return 1.0;
    }
    let scaled_k = if shape.fract() == 0.0 && shape <= 64.0 {
        bessel_k_int_scaled(shape as u32, x)
    } else {
        bessel_k_scaled(shape, x)
    };
    matern_from_scaled_k(x, shape, scaled_k)
}

/// Matérn correlation forced through the general-order Bessel routine.
pub fn matern_general(x: f64, shape: f64) -> f64 {
    if x < MATERN_ORIGIN {
        return 1.0;
    }
    matern_from_scaled_k(x, shape, bessel_k_scaled(shape, x))
}

fn matern_from_scaled_k(x: f64, shape: f64, scaled_k: f64) -> f64 {
    let ln_r = matern_prefactor_ln(shape) + shape * x.ln() + scaled_k.ln() - x;
    ln_r.exp().clamp(0.0, 1.0)
}

/// 100 equally spaced distances on `(0, 0.5]`.
pub fn default_match_grid() -> Vec<f64> {
    (1..=100).map(|k| 0.005 * k as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerMatch {
    pub decay: f64,
    pub exponent: f64,
    pub sse: f64,
    pub initial_sse: f64,
    pub iterations: usize,
}

fn exponent_from(z: f64) -> f64 {
    2.0 / (1.0 + (-z).exp())
}

fn exponent_to(delta: f64) -> f64 {
    let p = (delta / 2.0).clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Least-squares fit of a power-exponential correlation to `target` on `dgrid`.
///
/// Minimizes `sum_k (exp(-decay d_k^exponent) - target(d_k))^2` by
/// Levenberg-Marquardt on `(ln decay, logit(exponent / 2))`, started from
/// `exponent = 1` with the decay that reproduces the target's `d_half`.
pub fn match_power_to(target: &CorrelationModel, dgrid: &[f64]) -> Result<PowerMatch> {
    target.validate()?;
    if dgrid.is_empty() {
        return Err(LgcpError::invalid("matching grid is empty"));
    }
    if dgrid.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
        return Err(LgcpError::invalid("matching grid distances must be positive"));
    }
    let values: Vec<f64> = dgrid.iter().map(|&d| target.eval(d)).collect();
    let start_exponent = 1.0;
    let start_decay = std::f64::consts::LN_2 / target.d_half().powf(start_exponent);
    let residuals = |p: &[f64]| {
        let decay = p[0].exp();
        let exponent = exponent_from(p[1]);
        Some(
            dgrid
                .iter()
                .zip(&values)
                .map(|(&d, &t)| (-decay * d.powf(exponent)).exp() - t)
                .collect::<Vec<f64>>(),
        )
    };
    let fit = levenberg_marquardt(
        residuals,
        &[start_decay.ln(), exponent_to(start_exponent)],
        &LsqOptions::default(),
    )?;
    Ok(PowerMatch {
        decay: fit.params[0].exp(),
        exponent: exponent_from(fit.params[1]),
        sse: fit.sse,
        initial_sse: fit.initial_sse,
        iterations: fit.iterations,
    })
}

/// Match a power-exponential correlation to a Matérn correlation.
pub fn match_power_to_matern(range: f64, shape: f64, dgrid: &[f64]) -> Result<PowerMatch> {
    match_power_to(&CorrelationModel::matern(range, shape)?, dgrid)
}
