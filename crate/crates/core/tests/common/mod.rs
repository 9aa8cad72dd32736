//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the spectral code paths: matrices are built
//! entry by entry from the correlation function and manipulated densely.
#![allow(dead_code)]

use lgcp::correlation::CorrelationModel;
use lgcp::hmc::Target;
use lgcp::{LgcpError, Result};
use lgcp::vb::{ConjugatePriors, PrecisionCache, VbState};
use nalgebra::{DMatrix, DVector};

/// Dense torus correlation matrix on an `m x m` extended grid with
/// spacing `(hx, hy)`, rows ordered row-major with rows along y.
pub fn dense_torus(m: usize, hx: f64, hy: f64, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let len = m * m;
    let wrap = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        d.min(m - d) as f64
    };
    DMatrix::from_fn(len, len, |i, j| {
        let (r1, c1) = (i / m, i % m);
        let (r2, c2) = (j / m, j % m);
        let d = (wrap(c1, c2) * hx).hypot(wrap(r1, r2) * hy);
        f(d)
    })
}

pub fn dense_correlation(m: usize, hx: f64, hy: f64, corr: &CorrelationModel) -> DMatrix<f64> {
    dense_torus(m, hx, hy, |d| corr.eval(d))
}

/// `d^delta exp(-rho d^delta)` entries.
pub fn dense_star(m: usize, hx: f64, hy: f64, decay: f64, exponent: f64) -> DMatrix<f64> {
    dense_torus(m, hx, hy, |d| {
        if d == 0.0 {
            0.0
        } else {
            let dp = d.powf(exponent);
            dp * (-decay * dp).exp()
        }
    })
}

/// `A^p` for a symmetric matrix through its eigendecomposition; negative
/// eigenvalues are set to zero and negative powers of zero give zero.
pub fn sym_power(a: &DMatrix<f64>, p: f64) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let lam = eig.eigenvalues.map(|l| {
        let l = l.max(0.0);
        if l == 0.0 {
            0.0
        } else {
            l.powf(p)
        }
    });
    &eig.eigenvectors * DMatrix::from_diagonal(&lam) * eig.eigenvectors.transpose()
}

pub fn matvec(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (a * DVector::from_column_slice(v)).as_slice().to_vec()
}

pub fn rel_l2(got: &[f64], want: &[f64]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = want.iter().map(|b| b * b).sum();
    (num / den.max(1e-300)).sqrt()
}

/// Probabilists' Gauss-Hermite rule: `E[f(Z)] = sum w_k f(x_k)` for
/// `Z ~ N(0, 1)`, exact for polynomials of degree `< 2k`.
pub fn gauss_hermite(k: usize) -> (Vec<f64>, Vec<f64>) {
    // Golub-Welsch on the Jacobi matrix of the He_n recurrence
    let mut j = DMatrix::<f64>::zeros(k, k);
    for i in 1..k {
        let b = (i as f64).sqrt();
        j[(i, i - 1)] = b;
        j[(i - 1, i)] = b;
    }
    let eig = j.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..k)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Composite Simpson rule with `intervals` (rounded up to even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, q: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; q.len()];
    let mut x = q.to_vec();
    for j in 0..q.len() {
        let step = h * q[j].abs().max(1.0);
        x[j] = q[j] + step;
        let fp = f(&x);
        x[j] = q[j] - step;
        let fm = f(&x);
        x[j] = q[j];
        g[j] = (fp - fm) / (2.0 * step);
    }
    g
}

/// Two-cell field `y = mu + sigma L gamma` with `L L^T = [[1, c], [c, 1]]`
/// and Poisson counts, as a log density in `gamma` with `mu`, `sigma2`
/// and `c` held fixed.
#[derive(Debug, Clone, Copy)]
pub struct TwoCell {
    pub counts: [f64; 2],
    pub area: f64,
    pub mu: f64,
    pub sigma2: f64,
    pub c: f64,
}

impl TwoCell {
    pub fn field(&self, g: &[f64]) -> [f64; 2] {
        let s = self.sigma2.sqrt();
        let l21 = self.c;
        let l22 = (1.0 - self.c * self.c).sqrt();
        [self.mu + s * g[0], self.mu + s * (l21 * g[0] + l22 * g[1])]
    }

    pub fn log_density(&self, g: &[f64]) -> f64 {
        let y = self.field(g);
        (0..2)
            .map(|i| self.counts[i] * y[i] - self.area * y[i].exp())
            .sum::<f64>()
            - 0.5 * (g[0] * g[0] + g[1] * g[1])
    }
}

impl Target for TwoCell {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> Result<f64> {
        if q.len() != 2 || grad.len() != 2 {
            return Err(LgcpError::LengthMismatch { expected: 2, got: q.len() });
        }
        let s = self.sigma2.sqrt();
        let y = self.field(q);
        let r: Vec<f64> = (0..2).map(|i| self.counts[i] - self.area * y[i].exp()).collect();
        let l22 = (1.0 - self.c * self.c).sqrt();
        grad[0] = s * (r[0] + self.c * r[1]) - q[0];
        grad[1] = s * l22 * r[1] - q[1];
        Ok(self.log_density(q))
    }
}

/// Marginal density of coordinate `axis` of a 2-D log density on a
/// `k x k` grid over `[lo, hi]^2`, returned as `(nodes, density)`.
pub fn grid_marginal(log_density: impl Fn(&[f64]) -> f64, lo: f64, hi: f64, k: usize, axis: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (hi - lo) / (k - 1) as f64;
    let nodes: Vec<f64> = (0..k).map(|i| lo + i as f64 * h).collect();
    let mut logs = vec![0.0; k * k];
    let mut max = f64::NEG_INFINITY;
    for (i, &a) in nodes.iter().enumerate() {
        for (j, &b) in nodes.iter().enumerate() {
            let v = log_density(&[a, b]);
            logs[i * k + j] = v;
            max = max.max(v);
        }
    }
    let mut marg = vec![0.0; k];
    for i in 0..k {
        for j in 0..k {
            let idx = if axis == 0 { i } else { j };
            marg[idx] += (logs[i * k + j] - max).exp();
        }
    }
    let total: f64 = marg.iter().sum::<f64>() * h;
    (nodes, marg.into_iter().map(|p| p / total).collect())
}

/// Total variation between samples and a gridded density, on `bins`
/// intervals that carry equal mass under the density.
pub fn total_variation(samples: &[f64], nodes: &[f64], density: &[f64], bins: usize) -> f64 {
    let h = nodes[1] - nodes[0];
    // cumulative mass at node midpoints
    let mut cdf = Vec::with_capacity(nodes.len());
    let mut acc = 0.0;
    for p in density {
        acc += p * h;
        cdf.push(acc);
    }
    let total = acc;
    let mut edges = Vec::with_capacity(bins - 1);
    let mut k = 0;
    for b in 1..bins {
        let target = total * b as f64 / bins as f64;
        while cdf[k] < target {
            k += 1;
        }
        edges.push(nodes[k] + 0.5 * h);
    }
    let mut want = vec![0.0; bins];
    for (x, p) in nodes.iter().zip(density) {
        want[edges.partition_point(|e| e <= x)] += p * h / total;
    }
    let mut got = vec![0.0; bins];
    for x in samples {
        got[edges.partition_point(|e| e <= x)] += 1.0 / samples.len() as f64;
    }
    0.5 * got.iter().zip(&want).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Two-cell variational state with hand-written oracles for the `mu` and
/// `sigma^2` updates.
pub struct VbToy {
    pub counts: [f64; 2],
    pub c: f64,
    pub mu_y: [f64; 2],
    pub var_y: [f64; 2],
    pub mu_mu: f64,
    pub sigma2_mu: f64,
    pub alpha_q: f64,
    pub beta_q: f64,
    pub priors: ConjugatePriors,
}

impl VbToy {
    pub fn state(&self) -> VbState {
        let cmat = DMatrix::from_row_slice(2, 2, &[1.0, self.c, self.c, 1.0]);
        VbState {
            mu_y: self.mu_y.to_vec(),
            var_y: self.var_y.to_vec(),
            mu_mu: self.mu_mu,
            sigma2_mu: self.sigma2_mu,
            alpha_q: self.alpha_q,
            beta_q: self.beta_q,
            e_prec: self.alpha_q / self.beta_q,
            correlation: CorrelationModel::power_exponential(1.0, 1.0).unwrap(),
            priors: self.priors,
            counts: self.counts.to_vec(),
            cell_area: 0.5,
            cache: PrecisionCache::new(cmat).unwrap(),
            newton_residuals: vec![f64::NAN; 2],
        }
    }

    /// `(y - mu 1)^T C^{-1} (y - mu 1)` written out for the 2x2 case.
    fn quad(&self, y: [f64; 2], mu: f64) -> f64 {
        let (a, b) = (y[0] - mu, y[1] - mu);
        (a * a - 2.0 * self.c * a * b + b * b) / (1.0 - self.c * self.c)
    }

    /// `E_{q(y)}[quad]` by a product Gauss-Hermite rule.
    fn expected_quad_over_y(&self, mu: f64) -> f64 {
        let (x, w) = gauss_hermite(12);
        let mut total = 0.0;
        for (x1, w1) in x.iter().zip(&w) {
            for (x2, w2) in x.iter().zip(&w) {
                let y = [
                    self.mu_y[0] + self.var_y[0].sqrt() * x1,
                    self.mu_y[1] + self.var_y[1].sqrt() * x2,
                ];
                total += w1 * w2 * self.quad(y, mu);
            }
        }
        total
    }

    /// Moments `E[tau]`, `E[log tau]` of a density `exp(log_f(tau))` on
    /// `(0, inf)`, integrated on the log scale.
    fn tau_moments(log_f: impl Fn(f64) -> f64) -> (f64, f64) {
        let (lo, hi) = (-40.0, 15.0);
        let peak = (0..=2000)
            .map(|i| {
                let s = lo + (hi - lo) * i as f64 / 2000.0;
                log_f(s.exp()) + s
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let dens = |s: f64| (log_f(s.exp()) + s - peak).exp();
        let z = simpson(dens, lo, hi, 40_000);
        let m1 = simpson(|s| dens(s) * s.exp(), lo, hi, 40_000) / z;
        let ml = simpson(|s| dens(s) * s, lo, hi, 40_000) / z;
        (m1, ml)
    }

    /// Optimal `q(mu)` from the expected log joint, normalized numerically.
    pub fn mu_oracle(&self) -> (f64, f64) {
        let p = &self.priors;
        let e_tau = Self::tau_moments(|t| (self.alpha_q - 1.0) * t.ln() - self.beta_q * t).0;
        let log_q = |mu: f64| -0.5 * e_tau * self.expected_quad_over_y(mu) - 0.5 * (mu - p.mu_mean).powi(2) / p.mu_variance;
        // bracket the mode coarsely, then integrate around it
        let centre = (-2000..=2000)
            .map(|i| i as f64 * 0.05)
            .max_by(|a, b| log_q(*a).total_cmp(&log_q(*b)))
            .unwrap();
        let peak = log_q(centre);
        let (lo, hi) = (centre - 30.0, centre + 30.0);
        let dens = |mu: f64| (log_q(mu) - peak).exp();
        let z = simpson(dens, lo, hi, 20_000);
        let mean = simpson(|m| dens(m) * m, lo, hi, 20_000) / z;
        let var = simpson(|m| dens(m) * (m - mean).powi(2), lo, hi, 20_000) / z;
        (mean, var)
    }

    /// Optimal `q(tau)`, `tau = sigma^-2`: returns `E[tau]` and `E[log tau]`.
    pub fn tau_oracle(&self) -> (f64, f64) {
        let p = &self.priors;
        let (x, w) = gauss_hermite(12);
        let mut eq = 0.0;
        for (xm, wm) in x.iter().zip(&w) {
            eq += wm * self.expected_quad_over_y(self.mu_mu + self.sigma2_mu.sqrt() * xm);
        }
        // N(y; mu, tau^-1 C) contributes tau^(k/2) exp(-tau Q / 2); the
        // inverse-gamma prior on sigma^2 is a gamma(alpha, beta) prior on tau
        Self::tau_moments(|t| (1.0 + p.alpha - 1.0) * t.ln() - 0.5 * t * eq - p.beta * t)
    }
}

pub fn toy_two_cell_vb(counts: [f64; 2], c: f64, shift: f64) -> VbToy {
    VbToy {
        counts,
        c,
        mu_y: [1.2 + shift, 0.4 - shift],
        var_y: [0.3, 0.7],
        mu_mu: 0.5,
        sigma2_mu: 0.4,
        alpha_q: 2.0,
        beta_q: 1.5,
        priors: ConjugatePriors {
            mu_mean: 0.3,
            mu_variance: 4.0,
            alpha: 1.0,
            beta: 1.0,
        },
    }
}

/// Share of window covariance entries within 4 Monte Carlo standard errors.
pub fn covariance_coverage(n: usize, draws: usize, sigma2: f64, corr: &CorrelationModel, seed: u64) -> f64 {
    let grid = lgcp::geometry::GridSpec::new(n).unwrap();
    let emb = lgcp::geometry::TorusEmbedding::build(&grid, corr).unwrap();
    let c = lgcp::geometry::window_correlation(&grid, corr);
    let k = grid.cells();
    let mut rng = lgcp::rng::stream(seed, 0);
    let mut sum = vec![0.0; k];
    let mut cross = vec![0.0; k * k];
    for _ in 0..draws {
        let w = lgcp::simulate::sample_grf(&emb, 1.0, sigma2, &mut rng).unwrap().window();
        for i in 0..k {
            sum[i] += w[i];
            for j in 0..k {
                cross[i * k + j] += w[i] * w[j];
            }
        }
    }
    let d = draws as f64;
    let mut inside = 0;
    let mut total = 0;
    for i in 0..k {
        for j in i..k {
            let cov = (cross[i * k + j] - sum[i] * sum[j] / d) / (d - 1.0);
            let want = sigma2 * c[(i, j)];
            let se = (sigma2 * sigma2 * (c[(i, i)] * c[(j, j)] + c[(i, j)].powi(2)) / d).sqrt();
            total += 1;
            if (cov - want).abs() <= 4.0 * se {
                inside += 1;
            }
        }
    }
    inside as f64 / total as f64
}

/// One line per criterion, collected and checked at the end.
#[derive(Default)]
pub struct Report {
    lines: Vec<(String, bool, String)>,
}

impl Report {
    pub fn record(&mut self, id: &str, pass: bool, detail: impl Into<String>) {
        let detail = detail.into();
        println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((id.to_string(), pass, detail));
    }

    pub fn failures(&self) -> Vec<String> {
        self.lines.iter().filter(|l| !l.1).map(|l| format!("{}: {}", l.0, l.2)).collect()
    }
}

/// Run the `lgcp` binary; returns `(success, stdout, stderr)`.
pub fn lgcp_cli(args: &[&str], threads: Option<usize>) -> (bool, String, String) {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_lgcp"));
    cmd.args(args).env_remove("LGCP_THREADS");
    if let Some(t) = threads {
        cmd.env("LGCP_THREADS", t.to_string());
    }
    let out = cmd.output().expect("binary runs");
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Files of `a` that differ from `b` (or are missing there). The timing
/// block of a manifest is wall-clock dependent and left out.
pub fn differing_files(a: &std::path::Path, b: &std::path::Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let strip = |bytes: Vec<u8>, name: &str| -> Vec<u8> {
        if name != "manifest.json" {
            return bytes;
        }
        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v.as_object_mut().unwrap().remove("timing");
        serde_json::to_vec(&v).unwrap()
    };
    let mut differ = Vec::new();
    for name in names {
        let left = strip(std::fs::read(a.join(&name)).unwrap(), &name);
        let right = std::fs::read(b.join(&name)).ok().map(|r| strip(r, &name));
        if right.as_ref() != Some(&left) {
            differ.push(name);
        }
    }
    let count = |d: &std::path::Path| std::fs::read_dir(d).unwrap().count();
    if count(a) != count(b) {
        differ.push(format!("file count {} vs {}", count(a), count(b)));
    }
    differ
}

/// Small settings shared by the CLI tests.
pub const SMALL: [&str; 14] = [
    "--set", "grid.n=8",
    "--set", "hmc.iterations=120",
    "--set", "hmc.burn_in=60",
    "--set", "hmc.l_mean=10",
    "--set", "ppc.vb_draws=40",
    "--set", "study.replicates=2",
    "--set", "truth.patterns=2",
];

/// Run every subcommand once into `root`; returns `(name, out dir)` pairs.
pub fn run_all_subcommands(root: &std::path::Path) -> Vec<(String, std::path::PathBuf)> {
    let dir = |n: &str| root.join(n);
    let s = |p: std::path::PathBuf| p.to_string_lossy().into_owned();
    let pattern = s(dir("sim").join("pattern_000.csv"));
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("sim", vec!["simulate".into()]),
        ("hmc", vec!["fit-hmc".into(), "--pattern".into(), pattern.clone()]),
        ("vb", vec!["fit-vb".into(), "--pattern".into(), pattern.clone()]),
        ("mc", vec!["mincontrast".into(), "--pattern".into(), pattern.clone()]),
        ("ppc_hmc", vec!["ppc".into(), "--bundle".into(), s(dir("hmc")), "--pattern".into(), pattern.clone()]),
        ("ppc_vb", vec!["ppc".into(), "--bundle".into(), s(dir("vb")), "--pattern".into(), pattern.clone()]),
        ("study", vec!["study".into()]),
        ("summary", vec!["summarize".into(), "--input".into(), s(dir("study"))]),
        ("summary_hmc", vec!["summarize".into(), "--input".into(), s(dir("hmc"))]),
    ];
    let mut done = Vec::new();
    for (name, mut args) in runs {
        let out = dir(name);
        args.extend(["--seed".into(), "11".into(), "--out".into(), s(out.clone())]);
        args.extend(SMALL.iter().map(|a| a.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let (ok, _, err) = lgcp_cli(&refs, Some(1));
        assert!(ok, "{name} failed: {err}");
        done.push((args[0].clone(), out));
    }
    done
}

/// Re-run each recorded run from its manifest into `<dir>_replay` with
/// `threads` workers and list the outputs that changed.
pub fn replay_differences(runs: &[(String, std::path::PathBuf)], threads: usize) -> Vec<String> {
    let mut problems = Vec::new();
    for (sub, out) in runs {
        let replay = out.with_file_name(format!("{}_replay", out.file_name().unwrap().to_string_lossy()));
        let manifest = out.join("manifest.json");
        let args = [
            sub.as_str(),
            "--config",
            manifest.to_str().unwrap(),
            "--out",
            replay.to_str().unwrap(),
        ];
        let (ok, _, err) = lgcp_cli(&args, Some(threads));
        if !ok {
            problems.push(format!("{sub}: replay failed: {err}"));
            continue;
        }
        for f in differing_files(out, &replay) {
            problems.push(format!("{sub}: {f}"));
        }
    }
    problems
}
