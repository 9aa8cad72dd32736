//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the test harness so the lines always show. Pass criterion
//! numbers as arguments to run a subset, e.g.
//! `cargo test -p lgcp-core --test acceptance -- 5 6`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{
    covariance_coverage, dense_correlation, dense_star, fd_gradient, grid_marginal, matvec, rel_l2, replay_differences,
    run_all_subcommands, sym_power, toy_two_cell_vb, total_variation, Report, TwoCell,
};
use lgcp::cli::commands::{hmc_for_pattern, vb_for_pattern};
use lgcp::cli::config::RunConfig;
use lgcp::correlation::{default_match_grid, match_power_to_matern, CorrelationModel};
use lgcp::diagnostics::{hmc_draws, ppc_run};
use lgcp::estimation::{default_rgrid, k_theory_lgcp, l_hat, linear_grid};
use lgcp::geometry::{bin_points, CellCounts, GridSpec, Rect, SpectralPower, TorusEmbedding};
use lgcp::hmc::{sample, HmcConfig, PosteriorSummary};
use lgcp::posterior::{default_rho_upper, pack, HyperParams, Posterior, PriorSpec};
use lgcp::rng::{replicate_stream, stream, Purpose};
use lgcp::simulate::{expected_total_points, sample_grf, sample_pattern, PointPattern};
use lgcp::vb::{run_vb, VbConfig, VbFit};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

const SEED: u64 = 1;

fn normal_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, 0);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn matched() -> CorrelationModel {
    let m = match_power_to_matern(0.02, 1.0, &default_match_grid()).unwrap();
    CorrelationModel::power_exponential(m.decay, m.exponent).unwrap()
}

fn simulated(n: usize, mu: f64, sigma2: f64, corr: &CorrelationModel, seed: u64) -> (CellCounts, GridSpec, PointPattern) {
    let grid = GridSpec::new(n).unwrap();
    let emb = TorusEmbedding::build(&grid, corr).unwrap();
    let field = sample_grf(&emb, mu, sigma2, &mut replicate_stream(seed, 0, Purpose::Field)).unwrap();
    let pattern = sample_pattern(&field, &grid, &mut replicate_stream(seed, 0, Purpose::Pattern)).unwrap();
    (bin_points(&pattern, &grid, &emb).unwrap(), grid, pattern)
}

fn caught<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into())
    })
}

// ---------------------------------------------------------------- 1

fn spectral(report: &mut Report) {
    let models = [
        CorrelationModel::power_exponential(5.0, 1.0).unwrap(),
        matched(),
        CorrelationModel::matern(0.1, 1.0).unwrap(),
        CorrelationModel::matern(0.05, 3.0).unwrap(),
    ];
    let mut worst: f64 = 0.0;
    for n in [4usize, 8] {
        let grid = GridSpec::new(n).unwrap();
        let (hx, hy) = grid.spacing();
        for (k, corr) in models.iter().enumerate() {
            let emb = TorusEmbedding::build(&grid, corr).unwrap();
            let m = emb.m();
            let e = dense_correlation(m, hx, hy, corr);
            let v = normal_vec(m * m, k as u64);
            for (power, p) in [(SpectralPower::One, 1.0), (SpectralPower::Half, 0.5), (SpectralPower::NegHalf, -0.5)] {
                let got = emb.spectral_matvec(&v, power).unwrap();
                worst = worst.max(rel_l2(&got, &matvec(&sym_power(&e, p), &v)));
            }
            if let CorrelationModel::PowerExponential { decay, exponent } = *corr {
                let got = emb.spectral_matvec(&v, SpectralPower::Star).unwrap();
                worst = worst.max(rel_l2(&got, &matvec(&dense_star(m, hx, hy, decay, exponent), &v)));
            }
        }
    }
    report.record("1a spectral vs dense", worst <= 1e-10, format!("worst relative L2 error {worst:.2e} (limit 1e-10)"));

    // time per matvec against m^2 log m^2 on m = 8..64
    let corr = matched();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut lines = Vec::new();
    for m in [8usize, 16, 32, 64] {
        let grid = GridSpec::new(m / 2 + 1).unwrap();
        let emb = TorusEmbedding::build(&grid, &corr).unwrap();
        assert_eq!(emb.m(), m);
        let v = normal_vec(m * m, 3);
        let reps = (400_000 / (m * m)).max(20);
        let mut best = f64::INFINITY;
        for _ in 0..5 {
            let t = Instant::now();
            for _ in 0..reps {
                std::hint::black_box(emb.spectral_matvec(std::hint::black_box(&v), SpectralPower::One).unwrap());
            }
            best = best.min(t.elapsed().as_secs_f64() / reps as f64);
        }
        let work = (m * m) as f64 * ((m * m) as f64).ln();
        xs.push(work.ln());
        ys.push(best.ln());
        lines.push(format!("m={m}: {:.1}us", best * 1e6));
    }
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    report.record(
        "1b spectral scaling",
        (0.5..=1.5).contains(&slope),
        format!("log-log slope against m^2 log m^2 = {slope:.2} (accept 0.5..1.5; dense would be ~2); {}", lines.join(", ")),
    );
}

// ---------------------------------------------------------------- 2

fn gradient(report: &mut Report) {
    let corr = CorrelationModel::power_exponential(20.0, 1.312).unwrap();
    let (counts, grid, _) = simulated(4, 4.0, 1.0, &corr, 5);
    let emb = TorusEmbedding::build(&grid, &corr).unwrap();
    let mut rng = stream(SEED, 2);
    for mask in [true, false] {
        let mut worst: f64 = 0.0;
        let mut worst_plain: f64 = 0.0;
        for draw in 0..50 {
            let prior = if draw % 2 == 0 {
                PriorSpec::flat().with_rho_upper(default_rho_upper(&grid, 1.312))
            } else {
                PriorSpec::conjugate_default()
            };
            let post = Posterior::new(&counts, &emb, prior, mask).unwrap();
            let gamma: Vec<f64> = (0..post.latent_len()).map(|_| rng.sample(StandardNormal)).collect();
            let theta = HyperParams {
                mu: rng.random_range(2.0..6.0),
                sigma2: rng.random_range(0.3f64..4.0),
                rho: rng.random_range(3.0..30.0),
            };
            let q = pack(&gamma, &theta);
            let mut g = vec![0.0; q.len()];
            post.log_density_and_gradient(&q, &mut g).unwrap();
            let fd = fd_gradient(|x| post.log_density(x).unwrap(), &q, 1e-5);
            for (a, b) in g.iter().zip(&fd) {
                worst = worst.max((a - b).abs() / b.abs().max(1.0));
                if b.abs() > 1e-3 {
                    worst_plain = worst_plain.max((a - b).abs() / b.abs());
                }
            }
        }
        report.record(
            &format!("2{} gradient, mask={mask}", if mask { "a" } else { "b" }),
            worst <= 1e-5,
            format!(
                "50 draws, worst |g - fd| / max(|fd|, 1) = {worst:.2e} (limit 1e-5); pure relative on |fd| > 1e-3: {worst_plain:.2e}"
            ),
        );
    }
}

// ---------------------------------------------------------------- 3, 4, 7a, 8

struct Replicate {
    points: usize,
    hmc: Result<(PosteriorSummary, f64, usize), String>,
    vb: Result<VbFit, String>,
}

struct Study {
    truth_n: f64,
    truth_mu: f64,
    reps: Vec<Replicate>,
    vb_config: VbConfig,
}

fn study() -> Study {
    let cfg = RunConfig::default();
    let grid = cfg.grid().unwrap();
    let t = &cfg.truth;
    let emb = TorusEmbedding::build(&grid, &t.correlation).unwrap();
    let field = sample_grf(&emb, t.mu, t.sigma2, &mut replicate_stream(SEED, 0, Purpose::Field)).unwrap();
    let truth_n = expected_total_points(&field, &grid);
    // keep every trace so decreases are measured rather than aborting the fit
    let mut lenient = cfg.clone();
    lenient.vb.decrease_tolerance = f64::INFINITY;
    let started = Instant::now();
    let reps = (0..cfg.study.replicates as u64)
        .map(|r| {
            let pattern = sample_pattern(&field, &grid, &mut replicate_stream(SEED, r, Purpose::Pattern)).unwrap();
            let hmc = hmc_for_pattern(&cfg, &grid, &pattern, SEED, r)
                .and_then(|(chain, _)| Ok((chain.summarize()?, chain.acceptance_rate(), chain.accepted.len())))
                .map_err(|e| e.to_string());
            let vb = vb_for_pattern(&lenient, &grid, &pattern).map(|(fit, _)| fit).map_err(|e| e.to_string());
            eprintln!(
                "study replicate {r}: {} points, {:.0}s elapsed",
                pattern.len(),
                started.elapsed().as_secs_f64()
            );
            Replicate {
                points: pattern.len(),
                hmc,
                vb,
            }
        })
        .collect();
    Study {
        truth_n,
        truth_mu: t.mu,
        reps,
        vb_config: cfg.vb.clone(),
    }
}

fn hmc_calibration(report: &mut Report, study: &Study) {
    let ok: Vec<&(PosteriorSummary, f64, usize)> = study.reps.iter().filter_map(|r| r.hmc.as_ref().ok()).collect();
    let kept: usize = ok.iter().map(|h| h.2).sum();
    let pooled = ok.iter().map(|h| h.1 * h.2 as f64).sum::<f64>() / kept.max(1) as f64;
    let lo = ok.iter().map(|h| h.1).fold(f64::INFINITY, f64::min);
    let hi = ok.iter().map(|h| h.1).fold(f64::NEG_INFINITY, f64::max);
    let failed = study.reps.len() - ok.len();
    report.record(
        "3a HMC acceptance at n=32",
        failed == 0 && (0.55..=0.75).contains(&pooled),
        format!("pooled post-adaptation rate {pooled:.3} over {} chains (per chain {lo:.3}..{hi:.3}); {failed} chains failed", ok.len()),
    );
}

fn hmc_toy(report: &mut Report) {
    let toy = TwoCell {
        counts: [4.0, 0.0],
        area: 0.5,
        mu: 1.0,
        sigma2: 1.5,
        c: 0.6,
    };
    // a trajectory of about 100 steps is sized for the grid posterior; on a
    // two-dimensional target it orbits and inflates autocorrelation, so the
    // verdict uses a shorter one and the default is shown alongside
    let marginal_tv = |config: &HmcConfig| {
        let (raw, draws) = sample(&toy, vec![0.0, 0.0], config, vec![1.0, 1.0], &mut stream(SEED, 3), |q| {
            Ok([q[0], q[1]])
        })
        .unwrap();
        let tvs: Vec<f64> = (0..2)
            .map(|axis| {
                let (nodes, density) = grid_marginal(|g| toy.log_density(g), -7.0, 7.0, 1401, axis);
                let xs: Vec<f64> = draws.iter().map(|d| d[axis]).collect();
                total_variation(&xs, &nodes, &density, 20)
            })
            .collect();
        (tvs[0], tvs[1], raw.acceptance_rate(), draws.len())
    };
    let base = HmcConfig {
        iterations: 50_000 + 1000,
        burn_in: 1000,
        ..HmcConfig::default()
    };
    let (a, b, acc, kept) = marginal_tv(&HmcConfig {
        epsilon0: 0.1,
        l_mean: 20.0,
        ..base.clone()
    });
    let (da, db, dacc, _) = marginal_tv(&base);
    report.record(
        "3b HMC two-cell marginals",
        a.max(b) <= 0.02,
        format!(
            "total variation {a:.4} / {b:.4} over {kept} draws with mean 20 leapfrog steps, 20 equal-mass bins (limit 0.02), \
             acceptance {acc:.3}; default 100 steps gives {da:.4} / {db:.4}, acceptance {dacc:.3}"
        ),
    );
}

fn recovery(report: &mut Report, study: &Study) {
    let within = |m: &lgcp::stats::Moments, truth: f64| (m.mean - truth).abs() <= 3.0 * m.variance.sqrt();
    let (mut mu_ok, mut n_ok) = (0, 0);
    let mut notes = Vec::new();
    for (r, rep) in study.reps.iter().enumerate() {
        match &rep.hmc {
            Ok((s, _, _)) => {
                mu_ok += within(&s.mu, study.truth_mu) as usize;
                n_ok += within(&s.expected_n, study.truth_n) as usize;
            }
            Err(e) => notes.push(format!("replicate {r}: {e}")),
        }
    }
    let total = study.reps.len();
    let points = study.reps.iter().map(|r| r.points).sum::<usize>() as f64 / total as f64;
    report.record(
        "4a recovery of mu",
        mu_ok >= 18,
        format!("{mu_ok}/{total} within 3 posterior sd of {} (need 18){}", study.truth_mu, fmt_notes(&notes)),
    );
    report.record(
        "4b recovery of E(N)",
        n_ok >= 18,
        format!(
            "{n_ok}/{total} within 3 posterior sd of {:.2} (need 18); mean pattern size {points:.0}{}",
            study.truth_n,
            fmt_notes(&notes)
        ),
    );
}

fn fmt_notes(notes: &[String]) -> String {
    if notes.is_empty() {
        String::new()
    } else {
        format!("; errors: {}", notes.join("; "))
    }
}

fn vb_vs_hmc(report: &mut Report, study: &Study) {
    let pairs: Vec<(&PosteriorSummary, &VbFit)> = study
        .reps
        .iter()
        .filter_map(|r| Some((&r.hmc.as_ref().ok()?.0, r.vb.as_ref().ok()?)))
        .collect();
    let k = pairs.len().max(1) as f64;
    let hmc_prec = pairs.iter().map(|p| p.0.precision.variance).sum::<f64>() / k;
    let vb_prec = pairs.iter().map(|p| p.1.state.summaries().precision.variance).sum::<f64>() / k;
    let hmc_dh = pairs.iter().map(|p| p.0.d_half.variance).sum::<f64>() / k;
    let vb_dh = pairs.iter().map(|p| p.1.state.summaries().d_half.variance).sum::<f64>() / k;
    let complete = pairs.len() == study.reps.len();
    report.record(
        "8a VB precision variance below HMC",
        complete && vb_prec < hmc_prec,
        format!("mean marginal variance of 1/sigma^2: VB {vb_prec:.4e}, HMC {hmc_prec:.4e} over {} replicates", pairs.len()),
    );
    report.record(
        "8b VB d_half variance below HMC",
        complete && vb_dh < hmc_dh,
        format!("mean marginal variance of d_half: VB {vb_dh:.3e} (decay fixed by minimum contrast), HMC {hmc_dh:.3e}"),
    );
}

// ---------------------------------------------------------------- 5, 6

fn matching(report: &mut Report) {
    let m = match_power_to_matern(0.02, 1.0, &default_match_grid()).unwrap();
    report.record(
        "5 exponent matched to Matern(0.02, 1)",
        (1.26..=1.36).contains(&m.exponent),
        format!("exponent {:.4}, decay {:.3} (accept 1.26..1.36)", m.exponent, m.decay),
    );
}

fn d_half(report: &mut Report) {
    let a = CorrelationModel::matern(0.02, 1.0).unwrap().d_half();
    let b = CorrelationModel::matern(0.05, 3.0).unwrap().d_half();
    report.record(
        "6 d_half of Matern models",
        (a - 0.025).abs() <= 0.001 && (b - 0.13).abs() <= 0.005,
        format!("Matern(0.02, 1): {a:.5} (0.025 +- 0.001); Matern(0.05, 3): {b:.5} (0.13 +- 0.005)"),
    );
}

// ---------------------------------------------------------------- 7

fn largest_drop(trace: &[f64]) -> f64 {
    trace.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
}

fn vb_checks(report: &mut Report, study: Option<&Study>) {
    // (a) bound traces
    let mut panels = Vec::new();
    let mut worst_all: f64 = 0.0;
    if let Some(study) = study {
        let fits: Vec<&VbFit> = study.reps.iter().filter_map(|r| r.vb.as_ref().ok()).collect();
        let worst = fits.iter().map(|f| largest_drop(&f.elbo_trace)).fold(0.0, f64::max);
        let errors = study.reps.len() - fits.len();
        worst_all = worst_all.max(if errors > 0 { f64::INFINITY } else { worst });
        panels.push(format!("study n=32 mu=5: {} fits, largest drop {worst:.2e}, {errors} errors", fits.len()));
    }
    let corr = CorrelationModel::power_exponential(43.3, 1.312).unwrap();
    let lenient = VbConfig {
        decrease_tolerance: f64::INFINITY,
        ..VbConfig::default()
    };
    for (label, n, mu, sigma2) in [("moderate n=16 mu=5", 16, 5.0, 2.0), ("sparse n=16 mu=2", 16, 2.0, 1.0)] {
        let mut worst: f64 = 0.0;
        let mut rel: f64 = 0.0;
        for seed in 0..5 {
            let (counts, grid, _) = simulated(n, mu, sigma2, &corr, seed);
            let fit = run_vb(&counts, &grid, &corr, &PriorSpec::conjugate_default(), &lenient).unwrap();
            let d = largest_drop(&fit.elbo_trace);
            worst = worst.max(d);
            rel = rel.max(d / fit.elbo_trace.last().unwrap().abs().max(1.0));
        }
        worst_all = worst_all.max(worst);
        panels.push(format!("{label}: 5 fits, largest drop {worst:.2e} (relative {rel:.1e})"));
    }
    report.record("7a VB bound nondecreasing", worst_all <= 1e-8, format!("limit 1e-8; {}", panels.join("; ")));

    // (b) closed-form updates against quadrature
    let mut worst: f64 = 0.0;
    for (k, c) in [0.0, 0.3, -0.6, 0.9].into_iter().enumerate() {
        let t = toy_two_cell_vb([3.0, 0.0], c, 0.2 * k as f64);
        let mut s = t.state();
        s.update_mu();
        let (mean, var) = t.mu_oracle();
        worst = worst.max((s.mu_mu - mean).abs()).max((s.sigma2_mu - var).abs());
        let t = toy_two_cell_vb([1.0, 5.0], c, -0.3 * k as f64);
        let mut s = t.state();
        s.update_sigma2();
        let (e_tau, e_log_tau) = t.tau_oracle();
        worst = worst.max((s.e_prec - e_tau).abs() / e_tau.max(1.0)).max((-s.expected_log_sigma2() - e_log_tau).abs());
    }
    report.record("7b VB updates vs quadrature", worst <= 1e-6, format!("worst deviation {worst:.2e} over 8 two-cell toys (limit 1e-6)"));

    // (c), (d) on converged fits
    let mut fits: Vec<(VbFit, VbConfig)> = Vec::new();
    if let Some(study) = study {
        for rep in &study.reps {
            if let Ok(f) = &rep.vb {
                fits.push((f.clone(), study.vb_config.clone()));
            }
        }
    }
    for seed in 0..5 {
        let (counts, grid, _) = simulated(16, 5.0, 2.0, &corr, seed);
        if let Ok(f) = run_vb(&counts, &grid, &corr, &PriorSpec::conjugate_default(), &VbConfig::default()) {
            fits.push((f, VbConfig::default()));
        }
    }
    let residual = fits
        .iter()
        .flat_map(|(f, _)| f.state.newton_residuals.iter().copied())
        .fold(0.0, f64::max);
    report.record(
        "7c Newton residuals",
        residual <= 1e-10 && !fits.is_empty(),
        format!("largest |f(y)| {residual:.2e} over {} fits (limit 1e-10)", fits.len()),
    );
    let mut moved: f64 = 0.0;
    let mut unconverged = 0;
    for (fit, config) in &fits {
        unconverged += (!fit.converged) as usize;
        let mut again = fit.state.clone();
        again.sweep(config).unwrap();
        let m = fit
            .state
            .parameters()
            .iter()
            .zip(again.parameters())
            .map(|(a, b)| (a - b).abs() / a.abs().max(1e-12))
            .fold(0.0, f64::max);
        moved = moved.max(m);
    }
    report.record(
        "7d converged state is a fixed point",
        moved < 1e-6 && unconverged == 0,
        format!("largest relative change after one more sweep {moved:.2e} (limit 1e-6); {unconverged} of {} fits unconverged", fits.len()),
    );
}

// ---------------------------------------------------------------- 9

fn csr(report: &mut Report) {
    let r = default_rgrid();
    let reps = 200;
    let mut mean = vec![0.0; r.len()];
    for s in 0..reps {
        let mut rng = stream(SEED, 100 + s);
        let n = Poisson::new(500.0).unwrap().sample(&mut rng) as usize;
        let pts = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        let pattern = PointPattern::new(pts, Rect::UNIT).unwrap();
        let l = l_hat(&pattern, &r, Rect::UNIT).unwrap();
        for (m, (v, rk)) in mean.iter_mut().zip(l.values.iter().zip(&r)) {
            *m += (v - rk) / reps as f64;
        }
    }
    let worst = mean.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let k = k_theory_lgcp(&matched(), 0.0, &r).unwrap();
    let exact = k.values.iter().zip(&r).all(|(v, rk)| *v == std::f64::consts::PI * rk * rk);
    report.record(
        "9 CSR summary statistics",
        worst <= 0.01 && exact,
        format!("max |mean L(r) - r| = {worst:.4} over 200 patterns (limit 0.01); K with zero variance is pi r^2 exactly: {exact}"),
    );
}

// ---------------------------------------------------------------- 10

fn ppc(report: &mut Report) {
    let mut cfg = RunConfig::default();
    cfg.grid.n = 16;
    cfg.truth.correlation = matched();
    cfg.hmc.iterations = 1000;
    cfg.hmc.burn_in = 400;
    let grid = cfg.grid().unwrap();
    let emb = TorusEmbedding::build(&grid, &cfg.truth.correlation).unwrap();
    let rgrid = linear_grid(cfg.ppc.r_max, cfg.ppc.distances);
    let trials = 50;
    let mut covered = Vec::new();
    let mut errors = Vec::new();
    let started = Instant::now();
    for trial in 0..trials as u64 {
        let seed = SEED + 1000 * (trial + 1);
        let field = sample_grf(&emb, cfg.truth.mu, cfg.truth.sigma2, &mut replicate_stream(seed, 0, Purpose::Field)).unwrap();
        let pattern = sample_pattern(&field, &grid, &mut replicate_stream(seed, 0, Purpose::Pattern)).unwrap();
        let result = hmc_for_pattern(&cfg, &grid, &pattern, seed, 0)
            .and_then(|(chain, _)| ppc_run(&hmc_draws(&chain, 3), &pattern, &grid, &rgrid, seed));
        match result {
            Ok(p) => covered.push(p.covered()),
            Err(e) => errors.push(format!("trial {trial}: {e}")),
        }
        if trial % 10 == 9 {
            eprintln!("ppc trial {trial}: {:.0}s elapsed", started.elapsed().as_secs_f64());
        }
    }
    let mean = covered.iter().sum::<usize>() as f64 / covered.len().max(1) as f64;
    let least = covered.iter().min().copied().unwrap_or(0);
    report.record(
        "10 PPC calibration",
        errors.is_empty() && mean >= 17.0,
        format!(
            "mean {mean:.2} of 20 distances cover zero over {} trials (need 17; lowest single trial {least}){}",
            covered.len(),
            fmt_notes(&errors)
        ),
    );
}

// ---------------------------------------------------------------- 11, 12

fn grf(report: &mut Report) {
    let share = covariance_coverage(8, 10_000, 3.5, &matched(), SEED);
    report.record(
        "11 GRF window covariance",
        share >= 0.99,
        format!("{:.2}% of 2080 entries within 4 Monte Carlo se on n=8, 10^4 draws (need 99%)", 100.0 * share),
    );
}

fn replay(report: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let outcome = caught(|| {
        let runs = run_all_subcommands(dir.path());
        (runs.len(), replay_differences(&runs, 2))
    });
    match outcome {
        Ok((count, problems)) => report.record(
            "12 replay from manifest",
            problems.is_empty(),
            if problems.is_empty() {
                format!("{count} runs replayed with 2 threads, all outputs byte-identical")
            } else {
                format!("differences: {}", problems.join(", "))
            },
        ),
        Err(e) => report.record("12 replay from manifest", false, format!("a run failed: {e}")),
    }
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |k: u32| wanted.is_empty() || wanted.contains(&k);
    let mut report = Report::default();
    let t0 = Instant::now();
    if on(1) {
        spectral(&mut report);
    }
    if on(2) {
        gradient(&mut report);
    }
    if on(5) {
        matching(&mut report);
    }
    if on(6) {
        d_half(&mut report);
    }
    if on(9) {
        csr(&mut report);
    }
    if on(11) {
        grf(&mut report);
    }
    if on(12) {
        replay(&mut report);
    }
    if on(3) {
        hmc_toy(&mut report);
    }
    let shared = if [3, 4, 7, 8].iter().any(|&k| on(k) && k != 7) { Some(study()) } else { None };
    if on(3) {
        hmc_calibration(&mut report, shared.as_ref().unwrap());
    }
    if on(4) {
        recovery(&mut report, shared.as_ref().unwrap());
    }
    if on(7) {
        vb_checks(&mut report, shared.as_ref());
    }
    if on(8) {
        vb_vs_hmc(&mut report, shared.as_ref().unwrap());
    }
    if on(10) {
        ppc(&mut report);
    }
    let failures = report.failures();
    println!(
        "acceptance: {} failed, {:.0}s",
        failures.len(),
        t0.elapsed().as_secs_f64()
    );
    if !failures.is_empty() {
        std::process::exit(1);
    }
}
