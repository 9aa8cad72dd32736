//! Mean-field variational Bayes with Laplace field updates.
//!
//! The approximation factorizes as `q(y) q(mu) q(sigma^2)` with
//! `q(y) = prod_i N(mu_y_i, var_y_i)`, `q(mu)` normal and `q(sigma^2)`
//! inverse gamma. The `mu` and `sigma^2` factors have closed-form updates;
//! each field cell is updated by Newton's method on the derivative of the
//! expected log joint, and its variance is taken from the curvature at the
//! root. The correlation is fixed, so `C^{-1}` is computed once from a dense
//! Cholesky factorization of the window correlation matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::correlation::CorrelationModel;
use crate::error::{LgcpError, Result};
use crate::geometry::{window_correlation, CellCounts, GridSpec};
use crate::posterior::{MuPrior, PriorSpec, Sigma2Prior};
use crate::stats::Moments;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VbConfig {
    pub max_iterations: usize,
    /// Stop when the relative increase of the lower bound falls below this.
    pub tolerance: f64,
    pub newton_tolerance: f64,
    pub newton_max_iterations: usize,
    /// Largest tolerated decrease of the lower bound between iterations.
    pub decrease_tolerance: f64,
    /// Also require every variational parameter to move by less than this
    /// (relative) in the last sweep.
    pub parameter_tolerance: f64,
    /// Largest grid side accepted without override.
    pub max_side: usize,
}

impl Default for VbConfig {
    fn default() -> Self {
        VbConfig {
            max_iterations: 1000,
            tolerance: 1e-8,
            newton_tolerance: 1e-10,
            newton_max_iterations: 50,
            decrease_tolerance: 1e-6,
            parameter_tolerance: 1e-8,
            max_side: 64,
        }
    }
}

impl VbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.newton_max_iterations == 0 {
            return Err(LgcpError::invalid("vb: iteration limits must be positive"));
        }
        if !(self.tolerance > 0.0
            && self.newton_tolerance > 0.0
            && self.parameter_tolerance > 0.0
            && self.decrease_tolerance >= 0.0) {
            return Err(LgcpError::invalid("vb: tolerances must be positive"));
        }
        Ok(())
    }
}

/// Quantities of the fixed correlation matrix reused by every update.
#[derive(Debug, Clone)]
pub struct PrecisionCache {
    pub c_inv: DMatrix<f64>,
    pub log_det: f64,
    pub diag: Vec<f64>,
    /// `C^{-1} 1`
    pub row_sums: Vec<f64>,
    /// `1^T C^{-1} 1`
    pub total: f64,
}

impl PrecisionCache {
    pub fn new(c: DMatrix<f64>) -> Result<Self> {
        let chol = c.cholesky().ok_or_else(|| LgcpError::NotPositiveDefinite {
            what: "window correlation matrix".into(),
        })?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let mut c_inv = chol.inverse();
        // symmetrize rounding
        let k = c_inv.nrows();
        for i in 0..k {
            for j in 0..i {
                let v = 0.5 * (c_inv[(i, j)] + c_inv[(j, i)]);
                c_inv[(i, j)] = v;
                c_inv[(j, i)] = v;
            }
        }
        let diag: Vec<f64> = c_inv.diagonal().iter().copied().collect();
        if diag.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(LgcpError::NotPositiveDefinite {
                what: "window correlation matrix (inverse)".into(),
            });
        }
        let row_sums: Vec<f64> = c_inv.row_iter().map(|r| r.sum()).collect();
        let total = row_sums.iter().sum();
        Ok(PrecisionCache {
            c_inv,
            log_det,
            diag,
            row_sums,
            total,
        })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `v^T C^{-1} v`
    pub fn quad(&self, v: &[f64]) -> f64 {
        let v = DVector::from_column_slice(v);
        v.dot(&(&self.c_inv * &v))
    }
}

/// Hyperparameters of the conjugate priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugatePriors {
    pub mu_mean: f64,
    pub mu_variance: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ConjugatePriors {
    pub fn from_spec(spec: &PriorSpec) -> Result<Self> {
        spec.validate()?;
        match (spec.mu, spec.sigma2) {
            (MuPrior::Normal { mean, variance }, Sigma2Prior::InverseGamma { shape, scale }) => Ok(ConjugatePriors {
                mu_mean: mean,
                mu_variance: variance,
                alpha: shape,
                beta: scale,
            }),
            _ => Err(LgcpError::invalid(
                "variational fit needs a normal prior on mu and an inverse-gamma prior on sigma2",
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VbState {
    pub mu_y: Vec<f64>,
    pub var_y: Vec<f64>,
    pub mu_mu: f64,
    pub sigma2_mu: f64,
    pub alpha_q: f64,
    pub beta_q: f64,
    /// `E(sigma^-2) = alpha_q / beta_q`
    pub e_prec: f64,
    pub correlation: CorrelationModel,
    pub priors: ConjugatePriors,
    pub counts: Vec<f64>,
    pub cell_area: f64,
    pub cache: PrecisionCache,
    /// Final `|f|` of the last Newton solve per cell.
    pub newton_residuals: Vec<f64>,
}

/// Initial state: `mu_y = log((n_i + 0.5) / A)`, unit variances, `q(mu)`
/// centred on the mean of `mu_y` with the prior variance, `beta_q = beta`.
pub fn vb_init(
    counts: &CellCounts,
    grid: &GridSpec,
    corr: &CorrelationModel,
    priors: &PriorSpec,
    config: &VbConfig,
) -> Result<VbState> {
    config.validate()?;
    corr.validate()?;
    if grid.n() > config.max_side {
        return Err(LgcpError::invalid(format!(
            "grid side {} exceeds the variational limit {}; raise max_side to override",
            grid.n(),
            config.max_side
        )));
    }
    if counts.n() != grid.n() {
        return Err(LgcpError::LengthMismatch {
            expected: grid.cells(),
            got: counts.n() * counts.n(),
        });
    }
    let priors = ConjugatePriors::from_spec(priors)?;
    let cache = PrecisionCache::new(window_correlation(grid, corr))?;
    let area = grid.cell_area();
    let window: Vec<f64> = counts.window().iter().map(|&c| c as f64).collect();
    let mu_y: Vec<f64> = window.iter().map(|n| ((n + 0.5) / area).ln()).collect();
    let cells = window.len();
    let alpha_q = priors.alpha + cells as f64 / 2.0;
    let mu_mu = crate::stats::mean(&mu_y);
    Ok(VbState {
        var_y: vec![1.0; cells],
        mu_y,
        mu_mu,
        sigma2_mu: priors.mu_variance,
        alpha_q,
        beta_q: priors.beta,
        e_prec: alpha_q / priors.beta,
        correlation: *corr,
        priors,
        counts: window,
        cell_area: area,
        cache,
        newton_residuals: vec![f64::NAN; cells],
    })
}

/// Root of `f(y) = n - A e^y - c (y - m) - b`, which is strictly decreasing
/// and concave. Returns `(root, |f(root)|, iterations)`.
pub fn newton_cell(
    n: f64,
    area: f64,
    c: f64,
    m: f64,
    b: f64,
    fallback: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64, usize) {
    let f = |y: f64| n - area * y.exp() - c * (y - m) - b;
    // drop the linear term and solve exactly
    let numerator = n + c * m - b;
    let mut y = if numerator > 0.0 { (numerator / area).ln() } else { fallback };
    let mut fy = f(y);
    let mut iterations = 0;
    while fy.abs() > tol && iterations < max_iter {
        iterations += 1;
        let slope = -area * y.exp() - c;
        let mut step = -fy / slope;
        // halve until |f| decreases
        let mut accepted = false;
        for _ in 0..60 {
            let trial = y + step;
            let ft = f(trial);
            if ft.is_finite() && ft.abs() < fy.abs() {
                y = trial;
                fy = ft;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (y, fy.abs(), iterations)
}

impl VbState {
    pub fn cells(&self) -> usize {
        self.mu_y.len()
    }

    fn coupling(&self, i: usize, e_mu: f64) -> f64 {
        let row = self.cache.c_inv.row(i);
        let mut b = 0.0;
        for (j, (&cij, &mj)) in row.iter().zip(&self.mu_y).enumerate() {
            if j != i {
                b += cij * (mj - e_mu);
            }
        }
        self.e_prec * b
    }

    /// One Gauss-Seidel sweep over the cells in row-major order.
    pub fn update_field(&mut self, config: &VbConfig) -> Result<()> {
        let e_mu = self.mu_mu;
        for i in 0..self.cells() {
            let c = self.e_prec * self.cache.diag[i];
            let b = self.coupling(i, e_mu);
            let (root, residual, iterations) = newton_cell(
                self.counts[i],
                self.cell_area,
                c,
                e_mu,
                b,
                self.mu_y[i],
                config.newton_tolerance,
                config.newton_max_iterations,
            );
            if !(residual <= config.newton_tolerance) || !root.is_finite() {
                return Err(LgcpError::NewtonDivergence {
                    cell: i,
                    residual,
                    iterations,
                });
            }
            self.mu_y[i] = root;
            self.var_y[i] = 1.0 / (self.cell_area * root.exp() + c);
            self.newton_residuals[i] = residual;
        }
        Ok(())
    }

    pub fn update_mu(&mut self) {
        let p = &self.priors;
        let precision = self.e_prec * self.cache.total + 1.0 / p.mu_variance;
        self.sigma2_mu = 1.0 / precision;
        let proj: f64 = self.mu_y.iter().zip(&self.cache.row_sums).map(|(a, b)| a * b).sum();
        self.mu_mu = (self.e_prec * proj + p.mu_mean / p.mu_variance) * self.sigma2_mu;
    }

    /// `E_q[(y - mu 1)^T C^{-1} (y - mu 1)]`
    pub fn expected_quadratic(&self) -> f64 {
        let centred: Vec<f64> = self.mu_y.iter().map(|m| m - self.mu_mu).collect();
        let trace: f64 = self.cache.diag.iter().zip(&self.var_y).map(|(d, v)| d * v).sum();
        self.cache.quad(&centred) + self.sigma2_mu * self.cache.total + trace
    }

    pub fn update_sigma2(&mut self) {
        self.beta_q = self.priors.beta + 0.5 * self.expected_quadratic();
        self.e_prec = self.alpha_q / self.beta_q;
    }

    /// Field, `mu` and `sigma^2` updates in that order.
    pub fn sweep(&mut self, config: &VbConfig) -> Result<()> {
        self.update_field(config)?;
        self.update_mu();
        self.update_sigma2();
        Ok(())
    }

    /// `E_q[log sigma^2]`
    pub fn expected_log_sigma2(&self) -> f64 {
        self.beta_q.ln() - digamma(self.alpha_q)
    }

    /// Full evidence lower bound `E_q[log p(n, y, mu, sigma^2)] - E_q[log q]`.
    pub fn elbo(&self) -> f64 {
        use std::f64::consts::PI;
        let p = &self.priors;
        let k = self.cells() as f64;
        let a = self.cell_area;
        let lik: f64 = self
            .mu_y
            .iter()
            .zip(&self.var_y)
            .zip(&self.counts)
            .map(|((m, v), n)| m * n - a * (m + 0.5 * v).exp() - ln_gamma(n + 1.0))
            .sum();
        let e_log_s2 = self.expected_log_sigma2();
        let field_prior = -0.5 * k * (2.0 * PI).ln() - 0.5 * self.cache.log_det - 0.5 * k * e_log_s2
            - 0.5 * self.e_prec * self.expected_quadratic();
        let mu_prior = -0.5 * (2.0 * PI * p.mu_variance).ln()
            - 0.5 * ((self.mu_mu - p.mu_mean).powi(2) + self.sigma2_mu) / p.mu_variance;
        let s2_prior = p.alpha * p.beta.ln() - ln_gamma(p.alpha) - (p.alpha + 1.0) * e_log_s2 - p.beta * self.e_prec;
        let field_entropy: f64 = self.var_y.iter().map(|v| 0.5 * (2.0 * PI * std::f64::consts::E * v).ln()).sum();
        let mu_entropy = 0.5 * (2.0 * PI * std::f64::consts::E * self.sigma2_mu).ln();
        let s2_entropy = self.alpha_q + self.beta_q.ln() + ln_gamma(self.alpha_q)
            - (1.0 + self.alpha_q) * digamma(self.alpha_q);
        lik + field_prior + mu_prior + s2_prior + field_entropy + mu_entropy + s2_entropy
    }

    /// The shorter bound printed with the original algorithm, which leaves
    /// out the `sigma^2` terms and constants. Reported for comparison only.
    pub fn printed_bound(&self) -> f64 {
        let p = &self.priors;
        let a = self.cell_area;
        let lik: f64 = self
            .mu_y
            .iter()
            .zip(&self.var_y)
            .zip(&self.counts)
            .map(|((m, v), n)| m * n - a * (m + 0.5 * v).exp())
            .sum();
        lik - 0.5 * self.cache.log_det - 0.5 * ((self.mu_mu - p.mu_mean).powi(2) + self.sigma2_mu) / p.mu_variance
            + 0.5 * self.var_y.iter().map(|v| v.ln()).sum::<f64>()
            + 0.5 * self.sigma2_mu.ln()
    }

    /// All variational parameters as one vector, for fixed-point checks.
    pub fn parameters(&self) -> Vec<f64> {
        let mut v = self.mu_y.clone();
        v.extend(&self.var_y);
        v.extend([self.mu_mu, self.sigma2_mu, self.beta_q, self.e_prec]);
        v
    }

    pub fn variational(&self) -> VariationalParams {
        VariationalParams {
            mu_y: self.mu_y.clone(),
            var_y: self.var_y.clone(),
            mu_mu: self.mu_mu,
            sigma2_mu: self.sigma2_mu,
            alpha_q: self.alpha_q,
            beta_q: self.beta_q,
        }
    }

    pub fn summaries(&self) -> VbSummary {
        let a = self.cell_area;
        let expected_n: f64 = self.mu_y.iter().zip(&self.var_y).map(|(m, v)| a * (m + 0.5 * v).exp()).sum();
        let var_n: f64 = self
            .mu_y
            .iter()
            .zip(&self.var_y)
            .map(|(m, v)| a * a * (2.0 * m + v).exp() * v.exp_m1())
            .sum();
        let (aq, bq) = (self.alpha_q, self.beta_q);
        let sigma2 = Moments {
            mean: if aq > 1.0 { bq / (aq - 1.0) } else { f64::INFINITY },
            variance: if aq > 2.0 { bq * bq / ((aq - 1.0).powi(2) * (aq - 2.0)) } else { f64::INFINITY },
        };
        VbSummary {
            mu: Moments {
                mean: self.mu_mu,
                variance: self.sigma2_mu,
            },
            sigma2,
            precision: Moments {
                mean: aq / bq,
                variance: aq / (bq * bq),
            },
            d_half: Moments::point(self.correlation.d_half()),
            expected_n: Moments {
                mean: expected_n,
                variance: var_n,
            },
            field_mean: self.mu_y.clone(),
            field_variance: self.var_y.clone(),
        }
    }
}

/// The parameters of `q`, without the cached matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub mu_y: Vec<f64>,
    pub var_y: Vec<f64>,
    pub mu_mu: f64,
    pub sigma2_mu: f64,
    pub alpha_q: f64,
    pub beta_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbSummary {
    pub mu: Moments,
    pub sigma2: Moments,
    pub precision: Moments,
    /// Fixed at the supplied correlation, so the variance is zero.
    pub d_half: Moments,
    pub expected_n: Moments,
    pub field_mean: Vec<f64>,
    pub field_variance: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct VbFit {
    pub state: VbState,
    pub elbo_trace: Vec<f64>,
    pub printed_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterate sweeps until the relative increase of the lower bound drops
/// below `config.tolerance` and the parameters have settled.
pub fn run_vb(
    counts: &CellCounts,
    grid: &GridSpec,
    corr: &CorrelationModel,
    priors: &PriorSpec,
    config: &VbConfig,
) -> Result<VbFit> {
    let state = vb_init(counts, grid, corr, priors, config)?;
    iterate(state, config)
}

/// Run the update loop from a given state.
pub fn iterate(mut state: VbState, config: &VbConfig) -> Result<VbFit> {
    let mut elbo_trace = Vec::new();
    let mut printed_trace = Vec::new();
    let mut previous = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for iteration in 1..=config.max_iterations {
        iterations = iteration;
        let before = state.parameters();
        state.sweep(config)?;
        let moved = before
            .iter()
            .zip(state.parameters())
            .map(|(a, b)| (a - b).abs() / a.abs().max(1e-12))
            .fold(0.0, f64::max);
        let value = state.elbo();
        if !value.is_finite() {
            return Err(LgcpError::NonFinite(format!("lower bound at iteration {iteration}")));
        }
        elbo_trace.push(value);
        printed_trace.push(state.printed_bound());
        if value < previous - config.decrease_tolerance {
            return Err(LgcpError::ElboDecrease {
                iteration,
                drop: previous - value,
            });
        }
        if previous.is_finite()
            && (value - previous) <= config.tolerance * value.abs()
            && moved <= config.parameter_tolerance
        {
            converged = true;
            break;
        }
        previous = value;
    }
    Ok(VbFit {
        state,
        elbo_trace,
        printed_trace,
        iterations,
        converged,
    })
}
