//! The subcommands and the manifest written by each run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist, Normal as NormalDist};

use crate::correlation::CorrelationModel;
use crate::diagnostics::{
    cell_map_csv, log_relative_mse, ppc_run, study_aggregate, vb_draws, MethodEstimates, PosteriorDraw,
    StudyTable,
};
use crate::error::{LgcpError, Result};
use crate::estimation::{k_hat, k_theory_lgcp, linear_grid, min_contrast, ContrastFit};
use crate::geometry::{bin_points, GridSpec, TorusEmbedding};
use crate::hmc::{quantiles, run_chain, ChainSamples, PosteriorSummary};
use crate::posterior::{HyperParams, Posterior, PriorSpec};
use crate::rng::{replicate_stream, stream_id, Purpose, GENERATOR_ID};
use crate::simulate::{expected_total_points, sample_grf, sample_pattern, LatentField, PointPattern, Provenance};
use crate::stats::Moments;
use crate::vb::{run_vb, VariationalParams, VbFit, VbSummary};

use super::config::{DecaySource, RunConfig};
use super::io::{read_array, read_json, read_points, write_array, write_json, write_points, write_text, At, FileError, IoResult};
use super::{Cause, Common};

pub const MANIFEST: &str = "manifest.json";

/// Record of one run. Everything except `timing` is a deterministic
/// function of the configuration, seed and inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, PathBuf>,
    pub config: RunConfig,
    pub outputs: Vec<String>,
    pub results: Value,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub threads: usize,
    #[serde(default)]
    pub stages: BTreeMap<String, f64>,
}

pub struct Context {
    pub subcommand: &'static str,
    pub config: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub inputs: BTreeMap<String, PathBuf>,
}

impl Context {
    pub fn load(subcommand: &'static str, common: &Common, cli_inputs: Vec<(String, PathBuf)>) -> IoResult<Self> {
        let mut inputs = BTreeMap::new();
        let mut seed = None;
        let config = match &common.config {
            Some(path) if path.extension().is_some_and(|e| e == "json") => {
                let m: Manifest = read_json(path)?;
                if m.subcommand != subcommand {
                    return Err(Cause::Usage(format!(
                        "manifest records a {} run, not {subcommand}",
                        m.subcommand
                    )))
                    .at(path);
                }
                seed = Some(m.seed);
                inputs = m.inputs;
                m.config.with_overrides(&common.set).map_err(Cause::Parse).at(path)?
            }
            Some(path) => {
                let text = fs::read_to_string(path).at(path)?;
                RunConfig::from_toml(&text, &common.set).map_err(Cause::Parse).at(path)?
            }
            None => RunConfig::from_toml("", &common.set).map_err(Cause::Parse)?,
        };
        let validated = config.validate();
        match &common.config {
            Some(path) => validated.at(path)?,
            None => validated?,
        }
        inputs.extend(cli_inputs);
        Ok(Context {
            subcommand,
            config,
            seed: common.seed.or(seed).unwrap_or(0),
            out: common.out.clone(),
            inputs,
        })
    }

    fn input(&self, role: &str) -> IoResult<&Path> {
        self.inputs
            .get(role)
            .map(PathBuf::as_path)
            .ok_or_else(|| Cause::Usage(format!("--{role} is required")).into())
    }
}

/// Files written into the output directory, in order.
struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Outputs<'_> {
    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> IoResult<()> {
        write_json(&self.dir.join(name), value)?;
        self.files.push(name.into());
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> IoResult<()> {
        write_text(&self.dir.join(name), text)?;
        self.files.push(name.into());
        Ok(())
    }

    fn array(&mut self, name: &str, shape: &[usize], data: &[f64], description: &str) -> IoResult<()> {
        self.files.extend(write_array(self.dir, name, shape, data, description)?);
        Ok(())
    }

    fn points(&mut self, name: &str, pattern: &PointPattern) -> IoResult<()> {
        write_points(&self.dir.join(name), pattern)?;
        self.files.push(name.into());
        Ok(())
    }
}

struct RunOutput {
    results: Value,
    stages: BTreeMap<String, f64>,
}

impl RunOutput {
    fn new(results: Value) -> Self {
        RunOutput {
            results,
            stages: BTreeMap::new(),
        }
    }
}

pub fn dispatch(ctx: &Context) -> IoResult<()> {
    let start = Instant::now();
    fs::create_dir_all(&ctx.out).at(&ctx.out)?;
    guard_inputs(ctx)?;
    let mut out = Outputs {
        dir: &ctx.out,
        files: Vec::new(),
    };
    let run = match ctx.subcommand {
        "simulate" => simulate(ctx, &mut out)?,
        "fit-hmc" => fit_hmc(ctx, &mut out)?,
        "fit-vb" => fit_vb(ctx, &mut out)?,
        "mincontrast" => mincontrast(ctx, &mut out)?,
        "ppc" => ppc(ctx, &mut out)?,
        "study" => study(ctx, &mut out)?,
        "summarize" => summarize(ctx, &mut out)?,
        other => return Err(Cause::Usage(format!("unknown subcommand {other}")).into()),
    };
    let manifest = Manifest {
        tool: "lgcp".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: ctx.subcommand.into(),
        seed: ctx.seed,
        inputs: ctx.inputs.clone(),
        config: ctx.config.clone(),
        outputs: out.files,
        results: run.results,
        timing: Timing {
            wall_seconds: start.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
            stages: run.stages,
        },
    };
    write_json(&ctx.out.join(MANIFEST), &manifest)
}

/// Refuse to write into a directory that holds an input.
fn guard_inputs(ctx: &Context) -> IoResult<()> {
    let out = fs::canonicalize(&ctx.out).at(&ctx.out)?;
    for path in ctx.inputs.values() {
        let Ok(p) = fs::canonicalize(path) else { continue };
        let dir = if p.is_dir() { p.clone() } else { p.parent().map(Path::to_path_buf).unwrap_or_default() };
        if dir == out {
            return Err(Cause::Usage("output directory must differ from the directory holding this input".into()))
                .at(path);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- simulate

fn simulate(ctx: &Context, out: &mut Outputs) -> IoResult<RunOutput> {
    let cfg = &ctx.config;
    let t = &cfg.truth;
    let grid = cfg.grid()?;
    let emb = TorusEmbedding::build(&grid, &t.correlation)?;
    let n_fields = if t.fixed_field { 1 } else { t.patterns };
    let fields: Vec<LatentField> = (0..n_fields as u64)
        .into_par_iter()
        .map(|r| sample_grf(&emb, t.mu, t.sigma2, &mut replicate_stream(ctx.seed, r, Purpose::Field)))
        .collect::<Result<_>>()?;
    let patterns: Vec<PointPattern> = (0..t.patterns)
        .into_par_iter()
        .map(|r| {
            let field = &fields[if t.fixed_field { 0 } else { r }];
            let r = r as u64;
            let p = sample_pattern(field, &grid, &mut replicate_stream(ctx.seed, r, Purpose::Pattern))?;
            Ok(p.with_provenance(Provenance {
                seed: ctx.seed,
                stream: stream_id(r, Purpose::Pattern),
                generator: GENERATOR_ID.into(),
            }))
        })
        .collect::<Result<_>>()?;

    let n = grid.n();
    let expected: Vec<f64> = fields.iter().map(|f| expected_total_points(f, &grid)).collect();
    for (i, f) in fields.iter().enumerate() {
        let name = if t.fixed_field { "field".to_string() } else { format!("field_{i:03}") };
        out.array(&name, &[n, n], &f.window(), "window log-intensity, row-major with rows along y")?;
    }
    for (r, p) in patterns.iter().enumerate() {
        out.points(&format!("pattern_{r:03}.csv"), p)?;
    }
    let truth = json!({
        "mu": t.mu,
        "sigma2": t.sigma2,
        "correlation": t.correlation,
        "d_half": t.correlation.d_half(),
        "fit_correlation": cfg.fit_correlation()?,
        "expected_n": expected,
    });
    out.json("truth.json", &truth)?;
    Ok(RunOutput::new(json!({
        "points": patterns.iter().map(PointPattern::len).collect::<Vec<_>>(),
        "expected_n": expected,
        "clamped_eigenvalues": emb.clamp_report(),
    })))
}

// ---------------------------------------------------------------- fits

fn decay_of(corr: &CorrelationModel) -> Result<(f64, f64)> {
    match *corr {
        CorrelationModel::PowerExponential { decay, exponent } => Ok((decay, exponent)),
        CorrelationModel::Matern { .. } => Err(LgcpError::invalid("fitting needs a power-exponential model")),
    }
}

/// Chain for one pattern with the configured model and priors.
pub fn hmc_for_pattern(cfg: &RunConfig, grid: &GridSpec, pattern: &PointPattern, seed: u64, replicate: u64) -> Result<(ChainSamples, PriorSpec)> {
    let corr = cfg.fit_correlation()?;
    let (decay, exponent) = decay_of(&corr)?;
    let emb = TorusEmbedding::build(grid, &corr)?;
    let counts = bin_points(pattern, grid, &emb)?;
    let prior = cfg.hmc_prior_for(grid, exponent);
    let posterior = Posterior::new(&counts, &emb, prior, cfg.fit.mask_likelihood)?;
    let s0 = cfg.fit.sigma2_start;
    let init = HyperParams {
        mu: ((counts.total().max(1)) as f64 / grid.domain().area()).ln() - 0.5 * s0,
        sigma2: s0,
        rho: decay,
    };
    let mut rng = replicate_stream(seed, replicate, Purpose::Hmc);
    Ok((run_chain(&posterior, &init, &cfg.hmc, &mut rng)?, prior))
}

/// Decay from minimum contrast (if configured), then VB with it fixed.
pub fn vb_for_pattern(cfg: &RunConfig, grid: &GridSpec, pattern: &PointPattern) -> Result<(VbFit, Option<ContrastFit>)> {
    let start = cfg.fit_correlation()?;
    let contrast = match cfg.fit.vb_decay {
        DecaySource::Mincontrast => Some(min_contrast(pattern, grid.domain(), &start, cfg.fit.sigma2_start, &cfg.mincontrast)?),
        DecaySource::Fixed => None,
    };
    let corr = contrast.as_ref().map_or(start, |c| c.model);
    let emb = TorusEmbedding::build(grid, &corr)?;
    let counts = bin_points(pattern, grid, &emb)?;
    let fit = run_vb(&counts, grid, &corr, &cfg.vb_prior, &cfg.vb)?;
    Ok((fit, contrast))
}

fn fit_hmc(ctx: &Context, out: &mut Outputs) -> IoResult<RunOutput> {
    let cfg = &ctx.config;
    let grid = cfg.grid()?;
    let path = ctx.input("pattern")?;
    let pattern = read_points(path, grid.domain())?;
    let t0 = Instant::now();
    let (chain, prior) = hmc_for_pattern(cfg, &grid, &pattern, ctx.seed, 0)?;
    let sampling = t0.elapsed().as_secs_f64();
    let summary = chain.summarize()?;
    let n = grid.n();
    let theta: Vec<f64> = chain.theta.iter().flat_map(|t| [t.mu, t.sigma2, t.rho]).collect();
    out.array("theta", &[chain.len(), 3], &theta, "per draw: mu, sigma2, rho")?;
    out.array("field", &[chain.len(), n, n], &chain.y, "per draw window log-intensity, row-major with rows along y")?;
    out.json("summary.json", &summary)?;
    let mut trace = String::from("draw,accepted,delta_h,mu,sigma2,rho\n");
    for (d, t) in chain.theta.iter().enumerate() {
        let _ = writeln!(trace, "{d},{},{},{},{},{}", chain.accepted[d] as u8, chain.delta_h[d], t.mu, t.sigma2, t.rho);
    }
    out.text("trace.csv", &trace)?;
    let k = chain.mass.len() - 3;
    let mut run = RunOutput::new(json!({
        "points": pattern.len(),
        "draws": chain.len(),
        "acceptance_rate": chain.acceptance_rate(),
        "burn_in_acceptance": chain.burn_in_acceptance,
        "step_size": chain.step_size,
        "mean_leapfrog_steps": chain.mean_steps,
        "mass_hyper": &chain.mass[k..],
        "prior": prior,
        "exponent": chain.exponent,
    }));
    run.stages.insert("sampling".into(), sampling);
    Ok(run)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VbBundle {
    params: VariationalParams,
    correlation: CorrelationModel,
    mincontrast: Option<ContrastFit>,
    elbo_trace: Vec<f64>,
    printed_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn fit_vb(ctx: &Context, out: &mut Outputs) -> IoResult<RunOutput> {
    let cfg = &ctx.config;
    let grid = cfg.grid()?;
    let path = ctx.input("pattern")?;
    let pattern = read_points(path, grid.domain())?;
    let t0 = Instant::now();
    let (fit, contrast) = vb_for_pattern(cfg, &grid, &pattern)?;
    let elapsed = t0.elapsed().as_secs_f64();
    let n = grid.n();
    let summary = fit.state.summaries();
    out.array("mu_y", &[n, n], &fit.state.mu_y, "variational field means, row-major with rows along y")?;
    out.array("var_y", &[n, n], &fit.state.var_y, "variational field variances")?;
    out.json("summary.json", &summary)?;
    let bundle = VbBundle {
        params: fit.state.variational(),
        correlation: fit.state.correlation,
        mincontrast: contrast,
        elbo_trace: fit.elbo_trace.clone(),
        printed_trace: fit.printed_trace.clone(),
        iterations: fit.iterations,
        converged: fit.converged,
    };
    out.json("vb.json", &bundle)?;
    let mut run = RunOutput::new(json!({
        "points": pattern.len(),
        "iterations": fit.iterations,
        "converged": fit.converged,
        "elbo": fit.elbo_trace.last(),
        "elbo_trace": fit.elbo_trace,
        "correlation": fit.state.correlation,
    }));
    run.stages.insert("fit".into(), elapsed);
    Ok(run)
}

fn mincontrast(ctx: &Context, out: &mut Outputs) -> IoResult<RunOutput> {
    let cfg = &ctx.config;
    let grid = cfg.grid()?;
    let path = ctx.input("pattern")?;
    let pattern = read_points(path, grid.domain())?;
    let start = cfg.fit_correlation()?;
    let fit = min_contrast(&pattern, grid.domain(), &start, cfg.fit.sigma2_start, &cfg.mincontrast)?;
    let (r, _) = cfg.mincontrast.grid();
    let empirical = k_hat(&pattern, &r, grid.domain())?;
    let fitted = k_theory_lgcp(&fit.model, fit.sigma2, &r)?;
    let mut csv = String::from("r,k_hat,k_fit\n");
    for i in 0..r.len() {
        let _ = writeln!(csv, "{},{},{}", r[i], empirical.values[i], fitted.values[i]);
    }
    out.text("k_curves.csv", &csv)?;
    let result = json!({ "fit": fit, "d_half": fit.model.d_half() });
    out.json("mincontrast.json", &result)?;
    Ok(RunOutput::new(result))
}

// ---------------------------------------------------------------- ppc

fn ppc(ctx: &Context, out: &mut Outputs) -> IoResult<RunOutput> {
    let cfg = &ctx.config;
    let bundle = ctx.input("bundle")?;
    let manifest_path = bundle.join(MANIFEST);
    let fit: Manifest = read_json(&manifest_path)?;
    let grid = fit.config.grid().at(&manifest_path)?;
    let pattern_path = match ctx.inputs.get("pattern") {
        Some(p) => p.clone(),
        None => fit
            .inputs
            .get("pattern")
            .cloned()
            .ok_or_else(|| FileError::from(Cause::Usage("--pattern is required".into())))?,
    };
    let observed = read_points(&pattern_path, grid.domain())?;
    let draws: Vec<PosteriorDraw> = match fit.subcommand.as_str() {
        "fit-hmc" => {
            let (shape, theta) = read_array(bundle, "theta")?;
            let (_, field) = read_array(bundle, "field")?;
            let cells = grid.cells();
            (0..shape[0])
                .step_by(cfg.ppc.thin)
                .map(|d| PosteriorDraw {
                    window: field[d * cells..(d + 1) * cells].to_vec(),
                    mu: theta[3 * d],
                    sigma2: theta[3 * d + 1],
                })
                .collect()
        }
        "fit-vb" => {
            let vb: VbBundle = read_json(&bundle.join("vb.json"))?;
            let mut rng = replicate_stream(ctx.seed, 0, Purpose::Misc);
            vb_draws(&vb.params, cfg.ppc.vb_draws, &mut rng)?
        }
        other => {
            return Err(Cause::Usage(format!("{other} output is not a fit bundle"))).at(&manifest_path);
        }
    };
    let rgrid = linear_grid(cfg.ppc.r_max, cfg.ppc.distances);
    let result = ppc_run(&draws, &observed, &grid, &rgrid, ctx.seed)?;
    out.text("ppc.csv", &result.to_csv())?;
    out.json("ppc.json", &result)?;
    Ok(RunOutput::new(json!({
        "method": fit.subcommand,
        "draws": draws.len(),
        "replicates": result.replicates,
        "missing": result.missing,
        "distances_covering_zero": result.covered(),
    })))
}

// ---------------------------------------------------------------- study

struct ReplicateResult {
    points: usize,
    hmc: Option<(PosteriorSummary, f64, f64)>,
    vb: Option<(VbSummary, usize, CorrelationModel)>,
    hmc_seconds: f64,
    vb_seconds: f64,
}

/// Per-method estimates keyed by parameter, with the posterior variance.
fn hmc_estimates(s: &PosteriorSummary) -> [(&'static str, Moments); 6] {
    [
        ("mu", s.mu),
        ("sigma2", s.sigma2),
        ("precision", s.precision),
        ("rho", s.rho),
        ("d_half", s.d_half),
        ("expected_n", s.expected_n),
    ]
}

fn vb_estimates(s: &VbSummary, corr: &CorrelationModel) -> Vec<(&'static str, Moments)> {
    let mut v = vec![
        ("mu", s.mu),
        ("sigma2", s.sigma2),
        ("precision", s.precision),
        ("d_half", s.d_half),
        ("expected_n", s.expected_n),
    ];
    if let CorrelationModel::PowerExponential { decay, .. } = corr {
        v.push(("rho", Moments::point(*decay)));
    }
    v
}

fn study(ctx: &Context, out: &mut Outputs) -> IoResult<RunOutput> {
    let cfg = &ctx.config;
    let t = &cfg.truth;
    let s = &cfg.study;
    let grid = cfg.grid()?;
    let emb = TorusEmbedding::build(&grid, &t.correlation)?;
    let fixed = if t.fixed_field {
        Some(sample_grf(&emb, t.mu, t.sigma2, &mut replicate_stream(ctx.seed, 0, Purpose::Field))?)
    } else {
        None
    };
    let run_hmc = s.methods.iter().any(|m| m == "hmc");
    let run_vb = s.methods.iter().any(|m| m == "vb");

    let results: Vec<ReplicateResult> = (0..s.replicates as u64)
        .into_par_iter()
        .map(|r| -> Result<ReplicateResult> {
            let field = match &fixed {
                Some(f) => f.clone(),
                None => sample_grf(&emb, t.mu, t.sigma2, &mut replicate_stream(ctx.seed, r, Purpose::Field))?,
            };
            let pattern = sample_pattern(&field, &grid, &mut replicate_stream(ctx.seed, r, Purpose::Pattern))?;
            let tag = |e: LgcpError| LgcpError::invalid(format!("replicate {r}: {e}"));
            let t0 = Instant::now();
            let hmc = if run_hmc {
                let (chain, _) = hmc_for_pattern(cfg, &grid, &pattern, ctx.seed, r).map_err(tag)?;
                Some((chain.summarize()?, chain.acceptance_rate(), chain.step_size))
            } else {
                None
            };
            let hmc_seconds = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let vb = if run_vb {
                let (fit, _) = vb_for_pattern(cfg, &grid, &pattern).map_err(tag)?;
                Some((fit.state.summaries(), fit.iterations, fit.state.correlation))
            } else {
                None
            };
            Ok(ReplicateResult {
                points: pattern.len(),
                hmc,
                vb,
                hmc_seconds,
                vb_seconds: t1.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<_>>()?;

    let mut hmc_est = MethodEstimates::new("hmc");
    let mut vb_est = MethodEstimates::new("vb");
    for res in &results {
        if let Some((summary, _, _)) = &res.hmc {
            for (name, m) in hmc_estimates(summary) {
                hmc_est.push(name, m.mean, m.variance);
            }
        }
        if let Some((summary, _, corr)) = &res.vb {
            for (name, m) in vb_estimates(summary, corr) {
                vb_est.push(name, m.mean, m.variance);
            }
        }
    }
    let methods: Vec<MethodEstimates> = s
        .methods
        .iter()
        .map(|m| if m == "hmc" { hmc_est.clone() } else { vb_est.clone() })
        .collect();

    let mut truth = BTreeMap::new();
    truth.insert("mu".to_string(), t.mu);
    truth.insert("sigma2".to_string(), t.sigma2);
    truth.insert("precision".to_string(), 1.0 / t.sigma2);
    truth.insert("d_half".to_string(), t.correlation.d_half());
    if let CorrelationModel::PowerExponential { decay, .. } = t.correlation {
        truth.insert("rho".to_string(), decay);
    }
    let expected_n = match &fixed {
        Some(f) => expected_total_points(f, &grid),
        None => grid.domain().area() * (t.mu + 0.5 * t.sigma2).exp(),
    };
    truth.insert("expected_n".to_string(), expected_n);

    let table: StudyTable = study_aggregate(&methods, &truth, Some(&s.baseline))?;
    out.json("study.json", &table)?;
    out.text("study.csv", &table.to_csv())?;
    out.text("study.txt", &table.to_text())?;
    out.json("estimates.json", &methods)?;
    out.json("truth.json", &truth)?;

    let mut reps = String::from("replicate,points,hmc_acceptance,hmc_step_size,vb_iterations,vb_d_half\n");
    for (r, res) in results.iter().enumerate() {
        let (acc, step) = res.hmc.as_ref().map_or((f64::NAN, f64::NAN), |h| (h.1, h.2));
        let (iters, dh) = res.vb.as_ref().map_or((0, f64::NAN), |v| (v.1, v.2.d_half()));
        let _ = writeln!(reps, "{r},{},{acc},{step},{iters},{dh}", res.points);
    }
    out.text("replicates.csv", &reps)?;

    if let (Some(field), true, true) = (&fixed, run_hmc, run_vb) {
        let means = |pick: &dyn Fn(&ReplicateResult) -> Vec<f64>| results.iter().map(pick).collect::<Vec<_>>();
        let hmc_fields = means(&|r| r.hmc.as_ref().map(|h| h.0.field_mean.clone()).unwrap_or_default());
        let vb_fields = means(&|r| r.vb.as_ref().map(|v| v.0.field_mean.clone()).unwrap_or_default());
        let (method, baseline) = if s.baseline == "hmc" { (&vb_fields, &hmc_fields) } else { (&hmc_fields, &vb_fields) };
        let other = if s.baseline == "hmc" { "vb" } else { "hmc" };
        let map = log_relative_mse(&field.window(), method, baseline)?;
        out.text(&format!("field_mse_{other}.csv"), &cell_map_csv(&map))?;
    }

    let mut run = RunOutput::new(json!({
        "replicates": s.replicates,
        "expected_n": expected_n,
        "points": results.iter().map(|r| r.points).collect::<Vec<_>>(),
        "hmc_acceptance": results.iter().filter_map(|r| r.hmc.as_ref().map(|h| h.1)).collect::<Vec<_>>(),
        "vb_iterations": results.iter().filter_map(|r| r.vb.as_ref().map(|v| v.1)).collect::<Vec<_>>(),
    }));
    run.stages.insert("hmc_total".into(), results.iter().map(|r| r.hmc_seconds).sum());
    run.stages.insert("vb_total".into(), results.iter().map(|r| r.vb_seconds).sum());
    Ok(run)
}

// ---------------------------------------------------------------- summarize

struct FitRow {
    parameter: &'static str,
    moments: Moments,
    interval: Option<[f64; 3]>,
}

fn render_fit(rows: &[FitRow]) -> (String, String) {
    let header = ["parameter", "mean", "variance", "q2.5", "q50", "q97.5"];
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.parameter.to_string(), format!("{:.6e}", r.moments.mean), format!("{:.6e}", r.moments.variance)];
            match r.interval {
                Some(q) => v.extend(q.iter().map(|x| format!("{x:.6e}"))),
                None => v.extend(std::iter::repeat_n(String::new(), 3)),
            }
            v
        })
        .collect();
    let mut csv = header.join(",") + "\n";
    for row in &cells {
        csv += &(row.join(",") + "\n");
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|j| cells.iter().map(|r| r[j].len()).chain([header[j].len()]).max().unwrap_or(0))
        .collect();
    let line = |row: Vec<&str>| -> String {
        let parts: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut text = line(header.to_vec());
    for row in &cells {
        text += &line(row.iter().map(String::as_str).collect());
    }
    (csv, text)
}

fn hmc_rows(dir: &Path, manifest: &Manifest) -> IoResult<Vec<FitRow>> {
    let (shape, theta) = read_array(dir, "theta")?;
    let (_, field) = read_array(dir, "field")?;
    let grid = manifest.config.grid()?;
    let draws = shape[0];
    let cells = grid.cells();
    let exponent = manifest.results.get("exponent").and_then(Value::as_f64).unwrap_or(1.0);
    let area = grid.cell_area();
    let col = |j: usize| (0..draws).map(|d| theta[3 * d + j]).collect::<Vec<f64>>();
    let (mu, sigma2, rho) = (col(0), col(1), col(2));
    let precision: Vec<f64> = sigma2.iter().map(|s| 1.0 / s).collect();
    let d_half = rho
        .iter()
        .map(|&r| CorrelationModel::power_exponential(r, exponent).map(|c| c.d_half()))
        .collect::<Result<Vec<f64>>>()?;
    let expected_n: Vec<f64> = (0..draws)
        .map(|d| field[d * cells..(d + 1) * cells].iter().map(|y| area * y.exp()).sum())
        .collect();
    let row = |parameter, xs: &[f64]| {
        let q = quantiles(xs, &[0.025, 0.5, 0.975]);
        FitRow {
            parameter,
            moments: Moments::of(xs),
            interval: Some([q[0], q[1], q[2]]),
        }
    };
    Ok(vec![
        row("mu", &mu),
        row("sigma2", &sigma2),
        row("precision", &precision),
        row("rho", &rho),
        row("d_half", &d_half),
        row("expected_n", &expected_n),
    ])
}

fn vb_rows(dir: &Path) -> IoResult<Vec<FitRow>> {
    let summary: VbSummary = read_json(&dir.join("summary.json"))?;
    let vb: VbBundle = read_json(&dir.join("vb.json"))?;
    let p = &vb.params;
    let probs = [0.025, 0.5, 0.975];
    let normal = NormalDist::new(p.mu_mu, p.sigma2_mu.sqrt()).map_err(|e| Cause::Parse(e.to_string()))?;
    let gamma = GammaDist::new(p.alpha_q, p.beta_q).map_err(|e| Cause::Parse(e.to_string()))?;
    let q = |f: &dyn Fn(f64) -> f64| Some(probs.map(f));
    Ok(vec![
        FitRow {
            parameter: "mu",
            moments: summary.mu,
            interval: q(&|x| normal.inverse_cdf(x)),
        },
        FitRow {
            parameter: "sigma2",
            moments: summary.sigma2,
            // sigma^2 = 1 / precision, so its p quantile is 1 / the (1 - p) one
            interval: q(&|x| 1.0 / gamma.inverse_cdf(1.0 - x)),
        },
        FitRow {
            parameter: "precision",
            moments: summary.precision,
            interval: q(&|x| gamma.inverse_cdf(x)),
        },
        FitRow {
            parameter: "d_half",
            moments: summary.d_half,
            interval: None,
        },
        FitRow {
            parameter: "expected_n",
            moments: summary.expected_n,
            interval: None,
        },
    ])
}

fn summarize(ctx: &Context, out: &mut Outputs) -> IoResult<RunOutput> {
    let input = ctx.input("input")?;
    let (kind, csv, text) = if input.is_dir() {
        let manifest_path = input.join(MANIFEST);
        let manifest: Manifest = read_json(&manifest_path)?;
        match manifest.subcommand.as_str() {
            "study" => {
                let table: StudyTable = read_json(&input.join("study.json"))?;
                ("study", table.to_csv(), table.to_text())
            }
            "fit-hmc" => {
                let (csv, text) = render_fit(&hmc_rows(input, &manifest)?);
                ("fit-hmc", csv, text)
            }
            "fit-vb" => {
                let (csv, text) = render_fit(&vb_rows(input)?);
                ("fit-vb", csv, text)
            }
            other => return Err(Cause::Usage(format!("nothing to summarize in a {other} run"))).at(&manifest_path),
        }
    } else {
        let table: StudyTable = read_json(input)?;
        ("study", table.to_csv(), table.to_text())
    };
    out.text("summary.csv", &csv)?;
    out.text("summary.txt", &text)?;
    print!("{text}");
    Ok(RunOutput::new(json!({ "kind": kind })))
}
