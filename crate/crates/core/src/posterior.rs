//! Log-posterior of the discretized model in whitened coordinates.
//!
//! The extended field is `y = mu 1 + sigma E^{1/2} gamma` with `gamma` iid
//! standard normal a priori, so the prior on the field reduces to
//! `-gamma^T gamma / 2` and no determinant appears. The sampler works on
//! `q = (gamma, mu, log sigma^2, log rho)`; [`Posterior::log_density`]
//! includes the Jacobian of the two log transforms.
//!
//! The intensity term is summed over the window cells only by default
//! (`mask_likelihood = true`). With the mask off it runs over every torus
//! cell, which charges intensity to cells that can never hold a point.

use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationModel;
use crate::error::{LgcpError, Result};
use crate::geometry::{CellCounts, SpectralPower, TorusEmbedding};

/// Log-intensities above this are treated as overflow.
pub const MAX_LOG_INTENSITY: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub mu: f64,
    pub sigma2: f64,
    /// Power-exponential decay; the exponent is held fixed.
    pub rho: f64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(LgcpError::invalid(format!("mu must be finite, got {}", self.mu)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(LgcpError::invalid(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(LgcpError::invalid(format!("rho must be positive, got {}", self.rho)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MuPrior {
    Flat,
    Normal { mean: f64, variance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sigma2Prior {
    /// Flat on `(0, inf)`.
    Flat,
    /// Density proportional to `x^-(shape+1) exp(-scale / x)`.
    InverseGamma { shape: f64, scale: f64 },
}

/// Priors on `(mu, sigma^2, rho)`.
///
/// `rho` gets a flat prior on `(0, rho_upper]`. Without an upper bound the
/// posterior is improper: as `rho` grows the field decorrelates and the
/// likelihood levels off at a positive value, so a sampler drifts off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub mu: MuPrior,
    pub sigma2: Sigma2Prior,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_upper: Option<f64>,
}

/// Decay at which neighbouring cells correlate at 0.001, a natural upper
/// bound for `rho` on a grid.
pub fn default_rho_upper(grid: &crate::geometry::GridSpec, exponent: f64) -> f64 {
    let (hx, hy) = grid.spacing();
    1000f64.ln() / hx.min(hy).powf(exponent)
}

impl PriorSpec {
    pub fn flat() -> Self {
        PriorSpec {
            mu: MuPrior::Flat,
            sigma2: Sigma2Prior::Flat,
            rho_upper: None,
        }
    }

    /// `mu ~ N(0, 625)`, `sigma^2 ~ IG(1, 1)`.
    pub fn conjugate_default() -> Self {
        PriorSpec {
            mu: MuPrior::Normal {
                mean: 0.0,
                variance: 625.0,
            },
            sigma2: Sigma2Prior::InverseGamma {
                shape: 1.0,
                scale: 1.0,
            },
            rho_upper: None,
        }
    }

    pub fn with_rho_upper(mut self, upper: f64) -> Self {
        self.rho_upper = Some(upper);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let MuPrior::Normal { mean, variance } = self.mu {
            if !mean.is_finite() || !(variance > 0.0 && variance.is_finite()) {
                return Err(LgcpError::invalid("mu prior needs finite mean and positive variance"));
            }
        }
        if let Sigma2Prior::InverseGamma { shape, scale } = self.sigma2 {
            if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
                return Err(LgcpError::invalid("inverse-gamma prior needs positive shape and scale"));
            }
        }
        if let Some(u) = self.rho_upper {
            if !(u > 0.0 && u.is_finite()) {
                return Err(LgcpError::invalid("rho upper bound must be positive"));
            }
        }
        Ok(())
    }

    fn check_support(&self, theta: &HyperParams) -> Result<()> {
        match self.rho_upper {
            Some(u) if theta.rho > u => Err(LgcpError::invalid(format!(
                "rho = {} lies above the prior bound {u}",
                theta.rho
            ))),
            _ => Ok(()),
        }
    }

    /// `log pi(mu) + log pi(sigma^2)` up to constants, on the original scale.
    pub fn log_density(&self, theta: &HyperParams) -> f64 {
        self.log_mu(theta.mu) + self.log_sigma2(theta.sigma2.ln())
    }

    fn log_mu(&self, mu: f64) -> f64 {
        match self.mu {
            MuPrior::Flat => 0.0,
            MuPrior::Normal { mean, variance } => -0.5 * (mu - mean).powi(2) / variance,
        }
    }

    fn d_log_mu(&self, mu: f64) -> f64 {
        match self.mu {
            MuPrior::Flat => 0.0,
            MuPrior::Normal { mean, variance } => -(mu - mean) / variance,
        }
    }

    /// In terms of `s = log sigma^2`, without the Jacobian.
    fn log_sigma2(&self, s: f64) -> f64 {
        match self.sigma2 {
            Sigma2Prior::Flat => 0.0,
            Sigma2Prior::InverseGamma { shape, scale } => -(shape + 1.0) * s - scale * (-s).exp(),
        }
    }

    fn d_log_sigma2(&self, s: f64) -> f64 {
        match self.sigma2 {
            Sigma2Prior::Flat => 0.0,
            Sigma2Prior::InverseGamma { shape, scale } => -(shape + 1.0) + scale * (-s).exp(),
        }
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self::flat()
    }
}

/// Whitened latent vector, length `m^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGamma(pub Vec<f64>);

/// Offsets of the hyperparameter coordinates after the `m^2` latent block.
pub const MU: usize = 0;
pub const LOG_SIGMA2: usize = 1;
pub const LOG_RHO: usize = 2;

/// Sampler coordinates `(gamma, mu, log sigma^2, log rho)`.
pub fn pack(gamma: &[f64], theta: &HyperParams) -> Vec<f64> {
    let mut q = Vec::with_capacity(gamma.len() + 3);
    q.extend_from_slice(gamma);
    q.extend([theta.mu, theta.sigma2.ln(), theta.rho.ln()]);
    q
}

pub fn unpack(q: &[f64]) -> (&[f64], HyperParams) {
    let k = q.len() - 3;
    (
        &q[..k],
        HyperParams {
            mu: q[k + MU],
            sigma2: q[k + LOG_SIGMA2].exp(),
            rho: q[k + LOG_RHO].exp(),
        },
    )
}

/// Data, embedding and priors for one fit.
#[derive(Debug, Clone)]
pub struct Posterior {
    counts: Vec<f64>,
    weights: Vec<f64>,
    emb: TorusEmbedding,
    exponent: f64,
    priors: PriorSpec,
    area: f64,
    mask_likelihood: bool,
}

impl Posterior {
    /// `emb` must use the power-exponential family; its exponent stays fixed
    /// and its decay is replaced by `rho` at every evaluation.
    pub fn new(
        counts: &CellCounts,
        emb: &TorusEmbedding,
        priors: PriorSpec,
        mask_likelihood: bool,
    ) -> Result<Self> {
        priors.validate()?;
        let exponent = match *emb.correlation() {
            CorrelationModel::PowerExponential { exponent, .. } => exponent,
            CorrelationModel::Matern { .. } => {
                return Err(LgcpError::UnsupportedOperator("decay gradient for the Matérn family"))
            }
        };
        if counts.n() != emb.n() || counts.m() != emb.m() {
            return Err(LgcpError::LengthMismatch {
                expected: emb.len(),
                got: counts.counts().len(),
            });
        }
        let weights = if mask_likelihood {
            emb.window_mask().iter().map(|&w| if w { 1.0 } else { 0.0 }).collect()
        } else {
            vec![1.0; emb.len()]
        };
        Ok(Posterior {
            counts: counts.as_f64(),
            weights,
            emb: emb.clone(),
            exponent,
            priors,
            area: emb.grid().cell_area(),
            mask_likelihood,
        })
    }

    /// Number of sampler coordinates, `m^2 + 3`.
    pub fn dim(&self) -> usize {
        self.emb.len() + 3
    }

    pub fn latent_len(&self) -> usize {
        self.emb.len()
    }

    pub fn embedding(&self) -> &TorusEmbedding {
        &self.emb
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn priors(&self) -> &PriorSpec {
        &self.priors
    }

    pub fn mask_likelihood(&self) -> bool {
        self.mask_likelihood
    }

    fn embedding_for(&self, rho: f64) -> Result<TorusEmbedding> {
        self.emb.with_correlation(&CorrelationModel::PowerExponential {
            decay: rho,
            exponent: self.exponent,
        })
    }

    fn check(&self, gamma: &[f64], theta: &HyperParams) -> Result<()> {
        theta.validate()?;
        self.priors.check_support(theta)?;
        if gamma.len() != self.emb.len() {
            return Err(LgcpError::LengthMismatch {
                expected: self.emb.len(),
                got: gamma.len(),
            });
        }
        Ok(())
    }

    /// Extended field `mu + sigma E^{1/2} gamma` for decay `theta.rho`.
    pub fn field(&self, gamma: &[f64], theta: &HyperParams) -> Result<Vec<f64>> {
        self.check(gamma, theta)?;
        let emb = self.embedding_for(theta.rho)?;
        let sigma = theta.sigma2.sqrt();
        Ok(emb
            .spectral_matvec(gamma, SpectralPower::Half)?
            .into_iter()
            .map(|v| theta.mu + sigma * v)
            .collect())
    }

    /// `sum_i (y_i m_i - A w_i e^{y_i})` and the residual `m - A w e^y`.
    fn likelihood(&self, y: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut total = 0.0;
        let mut resid = Vec::with_capacity(y.len());
        for (i, &yi) in y.iter().enumerate() {
            let w = self.weights[i];
            if w > 0.0 && yi > MAX_LOG_INTENSITY {
                return Err(LgcpError::IntensityOverflow {
                    cell: i,
                    log_intensity: yi,
                });
            }
            let intensity = if w > 0.0 { self.area * w * yi.exp() } else { 0.0 };
            total += yi * self.counts[i] - intensity;
            resid.push(self.counts[i] - intensity);
        }
        Ok((total, resid))
    }

    /// Log-posterior on the original hyperparameter scale (no Jacobian),
    /// additive constants dropped.
    pub fn log_posterior(&self, gamma: &[f64], theta: &HyperParams) -> Result<f64> {
        let y = self.field(gamma, theta)?;
        let (lik, _) = self.likelihood(&y)?;
        let gg: f64 = gamma.iter().map(|g| g * g).sum();
        Ok(lik - 0.5 * gg + self.priors.log_density(theta))
    }

    /// Log density of the sampler coordinates `q`.
    pub fn log_density(&self, q: &[f64]) -> Result<f64> {
        self.check_q(q)?;
        let (gamma, theta) = unpack(q);
        let k = gamma.len();
        Ok(self.log_posterior(gamma, &theta)? + q[k + LOG_SIGMA2] + q[k + LOG_RHO])
    }

    fn check_q(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dim() {
            return Err(LgcpError::LengthMismatch {
                expected: self.dim(),
                got: q.len(),
            });
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(LgcpError::NonFinite("sampler coordinates".into()));
        }
        Ok(())
    }

    /// Log density of `q` and its gradient with respect to `q`.
    ///
    /// The decay derivative uses `d E^{1/2} / d rho = -E^{-1/2} E* / 2`,
    /// where `E*` is the circulant matrix with base `d^delta e`. Both
    /// matrices share the DFT basis, so `r^T E^{-1/2} E* gamma` is read off
    /// the spectra of `r` and `gamma` without further transforms.
    pub fn log_density_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.check_q(q)?;
        if grad.len() != q.len() {
            return Err(LgcpError::LengthMismatch {
                expected: q.len(),
                got: grad.len(),
            });
        }
        let (gamma, theta) = unpack(q);
        let k = gamma.len();
        theta.validate()?;
        self.priors.check_support(&theta)?;
        let emb = self.embedding_for(theta.rho)?;
        let sigma = theta.sigma2.sqrt();
        let sqrt_l = emb.spectrum(SpectralPower::Half)?;
        let inv_sqrt_l = emb.spectrum(SpectralPower::NegHalf)?;
        let star = emb.spectrum(SpectralPower::Star)?;

        let g_hat = emb.transform(gamma);
        let v = emb.synthesize(g_hat.clone(), &sqrt_l);
        let y: Vec<f64> = v.iter().map(|vi| theta.mu + sigma * vi).collect();
        let (lik, resid) = self.likelihood(&y)?;
        let r_hat = emb.transform(&resid);

        let er = emb.synthesize(r_hat.clone(), &sqrt_l);
        for i in 0..k {
            grad[i] = sigma * er[i] - gamma[i];
        }

        let s = q[k + LOG_SIGMA2];
        let d_mu: f64 = resid.iter().sum();
        let r_dot_v: f64 = resid.iter().zip(&v).map(|(a, b)| a * b).sum();
        let cross: f64 = r_hat
            .iter()
            .zip(&g_hat)
            .enumerate()
            .map(|(j, (rh, gh))| (rh.conj() * gh).re * star[j] * inv_sqrt_l[j])
            .sum::<f64>()
            / k as f64;
        let d_rho = -0.5 * sigma * cross;

        grad[k + MU] = d_mu + self.priors.d_log_mu(theta.mu);
        grad[k + LOG_SIGMA2] = 0.5 * sigma * r_dot_v + self.priors.d_log_sigma2(s) + 1.0;
        grad[k + LOG_RHO] = theta.rho * d_rho + 1.0;

        let gg: f64 = gamma.iter().map(|g| g * g).sum();
        Ok(lik - 0.5 * gg + self.priors.log_density(&theta) + s + q[k + LOG_RHO])
    }
}
