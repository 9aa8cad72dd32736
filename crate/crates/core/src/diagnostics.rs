//! Posterior predictive L-function checks and replicate study tables.
//!
//! A check compares the observed pattern with patterns simulated from
//! posterior draws of the intensity through
//! `Delta(r) = L_obs(r) - L_rep(r)`. Intervals use type-7 quantiles.
//!
//! Study tables use the sample variance (divisor `R - 1`) and the mean
//! squared error with divisor `R`, so `MSE = bias^2 + (R - 1) / R * variance`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LgcpError, Result};
use crate::geometry::GridSpec;
use crate::hmc::ChainSamples;
use crate::rng::{replicate_stream, Purpose};
use crate::simulate::{sample_pattern, LatentField, PointPattern};
use crate::stats::{mean, quantile_sorted, sample_variance};
use crate::vb::VariationalParams;

/// One posterior draw of the window log-intensity with its `(mu, sigma^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraw {
    pub window: Vec<f64>,
    pub mu: f64,
    pub sigma2: f64,
}

/// Every `thin`-th stored draw of a chain.
pub fn hmc_draws(samples: &ChainSamples, thin: usize) -> Vec<PosteriorDraw> {
    let thin = thin.max(1);
    (0..samples.len())
        .step_by(thin)
        .map(|d| PosteriorDraw {
            window: samples.field(d).to_vec(),
            mu: samples.theta[d].mu,
            sigma2: samples.theta[d].sigma2,
        })
        .collect()
}

/// Independent draws from the factorized variational distribution.
pub fn vb_draws<R: Rng + ?Sized>(state: &VariationalParams, count: usize, rng: &mut R) -> Result<Vec<PosteriorDraw>> {
    let q_mu = Normal::new(state.mu_mu, state.sigma2_mu.sqrt())
        .map_err(|e| LgcpError::invalid(format!("q(mu): {e}")))?;
    let q_prec = Gamma::new(state.alpha_q, 1.0 / state.beta_q)
        .map_err(|e| LgcpError::invalid(format!("q(sigma2): {e}")))?;
    let mut draws = Vec::with_capacity(count);
    for _ in 0..count {
        let window = state
            .mu_y
            .iter()
            .zip(&state.var_y)
            .map(|(&m, &v)| m + v.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        draws.push(PosteriorDraw {
            window,
            mu: q_mu.sample(rng),
            sigma2: 1.0 / q_prec.sample(rng),
        });
    }
    Ok(draws)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcResult {
    pub r: Vec<f64>,
    /// One row per draw; `None` where the replicate had fewer than 2 points.
    pub delta: Vec<Option<Vec<f64>>>,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
    pub mean: Vec<f64>,
    /// Rows that entered the quantiles.
    pub replicates: usize,
    pub missing: usize,
}

impl PpcResult {
    /// Distances whose 95% interval contains zero.
    pub fn covered(&self) -> usize {
        self.lower
            .iter()
            .zip(&self.upper)
            .filter(|(lo, hi)| **lo <= 0.0 && 0.0 <= **hi)
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,lower,median,upper,mean\n");
        for k in 0..self.r.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.r[k], self.lower[k], self.median[k], self.upper[k], self.mean[k]
            );
        }
        out
    }
}

/// Aggregate precomputed replicate patterns against the observed one.
pub fn ppc_from_replicates(
    observed: &PointPattern,
    replicates: &[PointPattern],
    rgrid: &[f64],
) -> Result<PpcResult> {
    let domain = observed.domain();
    let l_obs = crate::estimation::l_hat(observed, rgrid, domain)?.values;
    let delta: Vec<Option<Vec<f64>>> = replicates
        .par_iter()
        .map(|rep| delta_row(&l_obs, rep, rgrid))
        .collect::<Result<_>>()?;
    aggregate(rgrid, delta)
}

/// Simulate one replicate pattern per draw and aggregate `Delta(r)`.
///
/// Draw `i` uses the stream `(seed, i, Ppc)`, so the result does not depend
/// on how draws are spread over threads.
pub fn ppc_run(
    draws: &[PosteriorDraw],
    observed: &PointPattern,
    grid: &GridSpec,
    rgrid: &[f64],
    seed: u64,
) -> Result<PpcResult> {
    if draws.is_empty() {
        return Err(LgcpError::invalid("posterior predictive check needs at least one draw"));
    }
    let domain = grid.domain();
    let l_obs = crate::estimation::l_hat(observed, rgrid, domain)?.values;
    let delta: Vec<Option<Vec<f64>>> = draws
        .par_iter()
        .enumerate()
        .map(|(i, draw)| {
            let field = LatentField::from_window(grid.n(), grid.n(), &draw.window, 0.0)?;
            let mut rng = replicate_stream(seed, i as u64, Purpose::Ppc);
            let rep = sample_pattern(&field, grid, &mut rng)?;
            delta_row(&l_obs, &rep, rgrid)
        })
        .collect::<Result<_>>()?;
    aggregate(rgrid, delta)
}

fn delta_row(l_obs: &[f64], rep: &PointPattern, rgrid: &[f64]) -> Result<Option<Vec<f64>>> {
    if rep.len() < 2 {
        return Ok(None);
    }
    let l_rep = crate::estimation::l_hat(rep, rgrid, rep.domain())?.values;
    Ok(Some(l_obs.iter().zip(&l_rep).map(|(o, r)| o - r).collect()))
}

fn aggregate(rgrid: &[f64], delta: Vec<Option<Vec<f64>>>) -> Result<PpcResult> {
    let rows: Vec<&Vec<f64>> = delta.iter().flatten().collect();
    if rows.is_empty() {
        return Err(LgcpError::TooFewPoints { needed: 2, got: 0 });
    }
    let k = rgrid.len();
    let (mut lower, mut median, mut upper, mut means) = (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    for j in 0..k {
        let mut col: Vec<f64> = rows.iter().map(|row| row[j]).collect();
        means[j] = mean(&col);
        col.sort_by(f64::total_cmp);
        lower[j] = quantile_sorted(&col, 0.025);
        median[j] = quantile_sorted(&col, 0.5);
        upper[j] = quantile_sorted(&col, 0.975);
    }
    let replicates = rows.len();
    let missing = delta.len() - replicates;
    Ok(PpcResult {
        r: rgrid.to_vec(),
        delta,
        lower,
        median,
        upper,
        mean: means,
        replicates,
        missing,
    })
}

/// Per-replicate posterior means and marginal variances for one method.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MethodEstimates {
    pub method: String,
    /// Parameter name to one estimate per replicate.
    pub estimates: BTreeMap<String, Vec<f64>>,
    /// Parameter name to one posterior variance per replicate.
    pub marginal_variances: BTreeMap<String, Vec<f64>>,
}

impl MethodEstimates {
    pub fn new(method: impl Into<String>) -> Self {
        MethodEstimates {
            method: method.into(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, parameter: &str, estimate: f64, variance: f64) {
        self.estimates.entry(parameter.into()).or_default().push(estimate);
        self.marginal_variances.entry(parameter.into()).or_default().push(variance);
    }

    fn replicates(&self) -> Option<usize> {
        let mut counts = self.estimates.values().chain(self.marginal_variances.values()).map(Vec::len);
        let first = counts.next()?;
        counts.all(|c| c == first).then_some(first)
    }
}

/// Measures of one method divided by the baseline's.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Relative {
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub marginal_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub parameter: String,
    pub method: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub marginal_variance: f64,
    pub relative: Option<Relative>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub replicates: usize,
    pub baseline: Option<String>,
    pub rows: Vec<StudyRow>,
}

/// Bias, variance and MSE of each method's estimates for every parameter in
/// `truth`. Methods lacking a parameter get no row for it.
pub fn study_aggregate(
    methods: &[MethodEstimates],
    truth: &BTreeMap<String, f64>,
    baseline: Option<&str>,
) -> Result<StudyTable> {
    let first = methods
        .first()
        .ok_or_else(|| LgcpError::invalid("study needs at least one method"))?;
    let replicates = first.replicates().ok_or_else(|| LgcpError::ReplicateMismatch {
        method: first.method.clone(),
        expected: first.estimates.values().next().map_or(0, Vec::len),
        got: 0,
    })?;
    for m in methods {
        match m.replicates() {
            Some(r) if r == replicates => {}
            got => {
                return Err(LgcpError::ReplicateMismatch {
                    method: m.method.clone(),
                    expected: replicates,
                    got: got.unwrap_or(0),
                })
            }
        }
    }
    if replicates == 0 {
        return Err(LgcpError::invalid("study has no replicates"));
    }
    if let Some(b) = baseline {
        if !methods.iter().any(|m| m.method == b) {
            return Err(LgcpError::invalid(format!("baseline method {b} not among the methods")));
        }
    }

    let mut rows = Vec::new();
    for (parameter, &t) in truth {
        let mut block: Vec<StudyRow> = methods
            .iter()
            .filter_map(|m| {
                let est = m.estimates.get(parameter)?;
                let var = m.marginal_variances.get(parameter)?;
                let bias = mean(est) - t;
                Some(StudyRow {
                    parameter: parameter.clone(),
                    method: m.method.clone(),
                    truth: t,
                    mean: mean(est),
                    bias,
                    variance: sample_variance(est),
                    mse: est.iter().map(|e| (e - t).powi(2)).sum::<f64>() / est.len() as f64,
                    marginal_variance: mean(var),
                    relative: None,
                })
            })
            .collect();
        if let Some(base) = baseline.and_then(|b| block.iter().find(|r| r.method == b).cloned()) {
            for row in &mut block {
                row.relative = Some(if row.method == base.method {
                    Relative {
                        bias: 1.0,
                        variance: 1.0,
                        mse: 1.0,
                        marginal_variance: 1.0,
                    }
                } else {
                    Relative {
                        bias: row.bias / base.bias,
                        variance: row.variance / base.variance,
                        mse: row.mse / base.mse,
                        marginal_variance: row.marginal_variance / base.marginal_variance,
                    }
                });
            }
        }
        rows.extend(block);
    }
    Ok(StudyTable {
        replicates,
        baseline: baseline.map(str::to_owned),
        rows,
    })
}

const COLUMNS: [&str; 12] = [
    "parameter",
    "method",
    "truth",
    "mean",
    "bias",
    "variance",
    "mse",
    "marginal_variance",
    "rel_bias",
    "rel_variance",
    "rel_mse",
    "rel_marginal_variance",
];

impl StudyTable {
    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let rel = |f: fn(&Relative) -> f64| r.relative.as_ref().map_or(String::new(), |x| fmt(f(x)));
                vec![
                    r.parameter.clone(),
                    r.method.clone(),
                    fmt(r.truth),
                    fmt(r.mean),
                    fmt(r.bias),
                    fmt(r.variance),
                    fmt(r.mse),
                    fmt(r.marginal_variance),
                    rel(|x| x.bias),
                    rel(|x| x.variance),
                    rel(|x| x.mse),
                    rel(|x| x.marginal_variance),
                ]
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = COLUMNS.join(",");
        out.push('\n');
        for row in self.cells() {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Space-aligned text rendering.
    pub fn to_text(&self) -> String {
        let cells = self.cells();
        let widths: Vec<usize> = (0..COLUMNS.len())
            .map(|j| cells.iter().map(|r| r[j].len()).chain([COLUMNS[j].len()]).max().unwrap_or(0))
            .collect();
        let line = |row: &[String]| -> String {
            let parts: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            parts.join("  ").trim_end().to_string() + "\n"
        };
        let header: Vec<String> = COLUMNS.iter().map(|s| s.to_string()).collect();
        let mut out = line(&header);
        for row in &cells {
            out.push_str(&line(row));
        }
        out
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.6e}")
}

/// Per-cell `(true y, log(MSE_method / MSE_baseline))` from per-replicate
/// field estimates (`estimates[r][i]`).
pub fn log_relative_mse(truth: &[f64], method: &[Vec<f64>], baseline: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    if method.len() != baseline.len() || method.is_empty() {
        return Err(LgcpError::ReplicateMismatch {
            method: "field".into(),
            expected: baseline.len(),
            got: method.len(),
        });
    }
    for est in method.iter().chain(baseline) {
        if est.len() != truth.len() {
            return Err(LgcpError::LengthMismatch {
                expected: truth.len(),
                got: est.len(),
            });
        }
    }
    let mse = |ests: &[Vec<f64>], i: usize| ests.iter().map(|e| (e[i] - truth[i]).powi(2)).sum::<f64>() / ests.len() as f64;
    Ok((0..truth.len())
        .map(|i| (truth[i], (mse(method, i) / mse(baseline, i)).ln()))
        .collect())
}

pub fn cell_map_csv(map: &[(f64, f64)]) -> String {
    let mut out = String::from("cell,true_y,log_relative_mse\n");
    for (i, (y, l)) in map.iter().enumerate() {
        let _ = writeln!(out, "{i},{y},{l}");
    }
    out
}
