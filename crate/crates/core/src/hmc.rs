//! Hamiltonian Monte Carlo with Poisson trajectory lengths.
//!
//! Each iteration draws a momentum `p ~ N(0, M)` and a path length
//! `L ~ Poisson(l_mean)` (at least 1), integrates with the leapfrog scheme
//! and applies a Metropolis correction on the Hamiltonian. During burn-in
//! the step size is tuned by dual averaging toward `target_accept`; with
//! `tune_mass` on, the diagonal mass is reset once from the sample
//! variances of the middle half of burn-in and the step size adaptation
//! restarts.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationModel;
use crate::error::{LgcpError, Result};
use crate::geometry::TorusEmbedding;
use crate::posterior::{pack, unpack, HyperParams, Posterior};
use crate::stats::{quantile, Moments};

/// A differentiable log density.
pub trait Target {
    fn dim(&self) -> usize;
    /// Writes the gradient into `grad` and returns the log density.
    fn log_density_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> Result<f64>;
}

impl Target for Posterior {
    fn dim(&self) -> usize {
        Posterior::dim(self)
    }

    fn log_density_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> Result<f64> {
        Posterior::log_density_and_gradient(self, q, grad)
    }
}

/// Diagonal mass entries: one value for the whole latent block, one per
/// hyperparameter coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassConfig {
    pub latent: f64,
    pub mu: f64,
    pub log_sigma2: f64,
    pub log_rho: f64,
}

impl Default for MassConfig {
    fn default() -> Self {
        MassConfig {
            latent: 1.0,
            mu: 1.0,
            log_sigma2: 1.0,
            log_rho: 1.0,
        }
    }
}

impl MassConfig {
    pub fn expand(&self, latent_len: usize) -> Vec<f64> {
        let mut m = vec![self.latent; latent_len];
        m.extend([self.mu, self.log_sigma2, self.log_rho]);
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmcConfig {
    pub epsilon0: f64,
    pub target_accept: f64,
    pub l_mean: f64,
    pub mass: MassConfig,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Step-size adaptation during burn-in.
    pub adapt: bool,
    /// Diagonal mass from burn-in sample variances (needs `adapt`).
    pub tune_mass: bool,
    /// Burn-in iterations without any acceptance before giving up.
    pub zero_accept_window: usize,
    /// Sample the decay parameter; when off it stays at its initial value.
    pub sample_rho: bool,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            epsilon0: 0.005,
            target_accept: 0.65,
            l_mean: 100.0,
            mass: MassConfig::default(),
            iterations: 1500,
            burn_in: 500,
            thin: 1,
            adapt: true,
            tune_mass: true,
            zero_accept_window: 100,
            sample_rho: true,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(LgcpError::invalid(format!("hmc: {msg}")));
        if !(self.epsilon0 > 0.0 && self.epsilon0.is_finite()) {
            return bad("epsilon0 must be positive");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target_accept must lie in (0, 1)");
        }
        if !(self.l_mean >= 1.0 && self.l_mean.is_finite()) {
            return bad("l_mean must be at least 1");
        }
        let m = self.mass;
        if [m.latent, m.mu, m.log_sigma2, m.log_rho]
            .iter()
            .any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return bad("masses must be positive");
        }
        if self.iterations <= self.burn_in {
            return bad("iterations must exceed burn_in");
        }
        if self.thin == 0 {
            return bad("thin must be at least 1");
        }
        if self.zero_accept_window == 0 {
            return bad("zero_accept_window must be at least 1");
        }
        Ok(())
    }

    /// Number of stored draws.
    pub fn records(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Position, log density and gradient at that position.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q: Vec<f64>,
    pub log_density: f64,
    pub grad: Vec<f64>,
}

impl State {
    pub fn new<T: Target + ?Sized>(target: &T, q: Vec<f64>) -> Result<Self> {
        let mut grad = vec![0.0; q.len()];
        let log_density = target.log_density_and_gradient(&q, &mut grad)?;
        if !log_density.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(LgcpError::NonFinite("initial state".into()));
        }
        Ok(State { q, log_density, grad })
    }
}

/// `L` leapfrog steps: half kick, then `L` drifts each followed by a full
/// kick except the last, which gets a half kick.
///
/// `None` when the target fails or produces non-finite values on the way.
pub fn leapfrog<T: Target + ?Sized>(
    target: &T,
    start: &State,
    momentum: &[f64],
    epsilon: f64,
    steps: usize,
    inv_mass: &[f64],
) -> Option<(State, Vec<f64>)> {
    let mut q = start.q.clone();
    let mut p = momentum.to_vec();
    let mut grad = start.grad.clone();
    let mut log_density = start.log_density;
    for (pi, gi) in p.iter_mut().zip(&grad) {
        *pi += 0.5 * epsilon * gi;
    }
    for step in 1..=steps {
        for ((qi, pi), mi) in q.iter_mut().zip(&p).zip(inv_mass) {
            *qi += epsilon * mi * pi;
        }
        log_density = target.log_density_and_gradient(&q, &mut grad).ok()?;
        if !log_density.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return None;
        }
        let kick = if step == steps { 0.5 * epsilon } else { epsilon };
        for (pi, gi) in p.iter_mut().zip(&grad) {
            *pi += kick * gi;
        }
    }
    Some((State { q, log_density, grad }, p))
}

pub fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(p, m)| p * p * m).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: State,
    pub accepted: bool,
    /// `H(proposal) - H(current)`, infinite for an aborted trajectory.
    pub delta_h: f64,
    pub accept_prob: f64,
    pub steps: usize,
}

pub fn accept_probability(delta_h: f64) -> f64 {
    if delta_h.is_nan() {
        0.0
    } else {
        (-delta_h).exp().min(1.0)
    }
}

/// Fixed-length transition with a given momentum and uniform draw.
pub fn transition_with<T: Target + ?Sized>(
    target: &T,
    current: &State,
    momentum: &[f64],
    epsilon: f64,
    steps: usize,
    inv_mass: &[f64],
    uniform: f64,
) -> Transition {
    let h0 = -current.log_density + kinetic(momentum, inv_mass);
    match leapfrog(target, current, momentum, epsilon, steps, inv_mass) {
        Some((proposal, p)) => {
            let h1 = -proposal.log_density + kinetic(&p, inv_mass);
            let delta_h = if h1.is_finite() { h1 - h0 } else { f64::INFINITY };
            let accept_prob = accept_probability(delta_h);
            let accepted = uniform < accept_prob;
            Transition {
                state: if accepted { proposal } else { current.clone() },
                accepted,
                delta_h,
                accept_prob,
                steps,
            }
        }
        None => Transition {
            state: current.clone(),
            accepted: false,
            delta_h: f64::INFINITY,
            accept_prob: 0.0,
            steps,
        },
    }
}

/// One iteration: fresh momentum, Poisson path length, Metropolis test.
pub fn hmc_step<T: Target + ?Sized, R: Rng + ?Sized>(
    target: &T,
    current: &State,
    epsilon: f64,
    l_mean: f64,
    mass: &[f64],
    inv_mass: &[f64],
    rng: &mut R,
) -> Transition {
    let momentum: Vec<f64> = mass
        .iter()
        .map(|m| m.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let steps = draw_steps(l_mean, rng);
    let uniform: f64 = rng.random();
    transition_with(target, current, &momentum, epsilon, steps, inv_mass, uniform)
}

fn draw_steps<R: Rng + ?Sized>(l_mean: f64, rng: &mut R) -> usize {
    if l_mean <= 1.0 {
        return 1;
    }
    let l = Poisson::new(l_mean).map(|d| d.sample(rng)).unwrap_or(l_mean);
    (l as usize).max(1)
}

/// Dual-averaging step size controller.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    target: f64,
    mu: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    t: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
}

impl DualAveraging {
    pub fn new(epsilon: f64, target: f64) -> Self {
        DualAveraging {
            target,
            mu: (10.0 * epsilon).ln(),
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            t: 0.0,
            h_bar: 0.0,
            log_eps: epsilon.ln(),
            log_eps_bar: epsilon.ln(),
        }
    }

    pub fn update(&mut self, accept_prob: f64) -> f64 {
        self.t += 1.0;
        let w = 1.0 / (self.t + self.t0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        self.log_eps = self.mu - self.t.sqrt() / self.gamma * self.h_bar;
        let eta = self.t.powf(-self.kappa);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
        self.log_eps.exp()
    }

    pub fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    /// Averaged step size to use after adaptation.
    pub fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Robbins-Monro refinement of `log eps` on realized acceptances.
///
/// Dual averaging settles the geometric mean of its iterates, which sits
/// below the step size whose acceptance rate is the target whenever the
/// acceptance curve drops steeply (leapfrog instability). This stage runs
/// at one step size at a time with a shrinking gain, so it converges to a
/// root of `rate(eps) = target` instead.
#[derive(Debug, Clone)]
pub struct StepRefiner {
    target: f64,
    t: f64,
    log_eps: f64,
}

impl StepRefiner {
    const T0: f64 = 10.0;

    pub fn new(epsilon: f64, target: f64) -> Self {
        StepRefiner {
            target,
            t: 0.0,
            log_eps: epsilon.ln(),
        }
    }

    pub fn update(&mut self, accepted: bool) -> f64 {
        self.t += 1.0;
        let hit = if accepted { 1.0 } else { 0.0 };
        self.log_eps += (hit - self.target) / (self.t + Self::T0);
        self.log_eps.exp()
    }

    pub fn current(&self) -> f64 {
        self.log_eps.exp()
    }
}

/// Output of [`sample`] for a generic target.
#[derive(Debug, Clone, PartialEq)]
pub struct RawChain {
    pub draws: Vec<Vec<f64>>,
    pub accepted: Vec<bool>,
    pub delta_h: Vec<f64>,
    pub steps: Vec<usize>,
    pub step_size: f64,
    pub mass: Vec<f64>,
    pub burn_in_acceptance: f64,
    /// Last state, with log density and gradient.
    pub last: State,
}

impl RawChain {
    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return f64::NAN;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64
    }
}

/// Run a chain on a generic target. `record` maps each kept position to what
/// is stored; `mass` is the initial diagonal mass; coordinates listed in
/// `frozen` are never moved (their mass is irrelevant).
pub fn sample<T, R, F, S>(
    target: &T,
    q0: Vec<f64>,
    config: &HmcConfig,
    mass: Vec<f64>,
    rng: &mut R,
    mut record: F,
) -> Result<(RawChain, Vec<S>)>
where
    T: Target + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> Result<S>,
{
    sample_frozen(target, q0, config, mass, &[], rng, &mut record)
}

fn sample_frozen<T, R, F, S>(
    target: &T,
    q0: Vec<f64>,
    config: &HmcConfig,
    mut mass: Vec<f64>,
    frozen: &[usize],
    rng: &mut R,
    record: &mut F,
) -> Result<(RawChain, Vec<S>)>
where
    T: Target + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> Result<S>,
{
    config.validate()?;
    if q0.len() != target.dim() || mass.len() != target.dim() {
        return Err(LgcpError::LengthMismatch {
            expected: target.dim(),
            got: if q0.len() != target.dim() { q0.len() } else { mass.len() },
        });
    }
    let inverse = |mass: &[f64]| -> Vec<f64> {
        mass.iter()
            .enumerate()
            .map(|(i, m)| if frozen.contains(&i) { 0.0 } else { 1.0 / m })
            .collect()
    };
    let mut inv_mass = inverse(&mass);
    let mut state = State::new(target, q0)?;
    let mut epsilon = config.epsilon0;
    let mut da = DualAveraging::new(epsilon, config.target_accept);
    let mut refiner: Option<StepRefiner> = None;

    let burn = config.burn_in;
    // [0, w0) dual averaging; [w0, w1) also collects variances for the mass;
    // [w1, refine) dual averaging again under the new mass; [refine, burn)
    // Robbins-Monro refinement.
    let window = (burn / 4, burn / 2);
    let refine_from = 3 * burn / 4;
    let tune_mass = config.adapt && config.tune_mass && window.1 - window.0 >= 10;
    let dim = target.dim();
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let mut collected = 0usize;

    let mut burn_accepts = 0usize;
    let mut since_accept = 0usize;
    let mut draws = Vec::with_capacity(config.records());
    let mut kept = Vec::with_capacity(config.records());
    let mut accepted = Vec::with_capacity(config.records());
    let mut delta_h = Vec::with_capacity(config.records());
    let mut steps = Vec::with_capacity(config.records());

    for it in 0..config.iterations {
        let tr = hmc_step(target, &state, epsilon, config.l_mean, &mass, &inv_mass, rng);
        state = tr.state;
        if it < burn {
            if tr.accepted {
                burn_accepts += 1;
                since_accept = 0;
            } else {
                since_accept += 1;
                if since_accept >= config.zero_accept_window {
                    return Err(LgcpError::ZeroAcceptance {
                        start: it + 1 - since_accept,
                        len: since_accept,
                        step_size: epsilon,
                    });
                }
            }
            if config.adapt {
                epsilon = match refiner.as_mut() {
                    Some(r) => r.update(tr.accepted),
                    None => da.update(tr.accept_prob),
                };
            }
            if tune_mass && it >= window.0 && it < window.1 {
                for i in 0..dim {
                    sum[i] += state.q[i];
                    sum_sq[i] += state.q[i] * state.q[i];
                }
                collected += 1;
            }
            if tune_mass && it + 1 == window.1 {
                let n = collected as f64;
                for i in 0..dim {
                    let mean = sum[i] / n;
                    let var = ((sum_sq[i] / n - mean * mean) * n / (n - 1.0)).max(0.0);
                    // shrink toward a small floor as Stan does
                    let reg = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0));
                    mass[i] = 1.0 / reg;
                }
                inv_mass = inverse(&mass);
                da = DualAveraging::new(epsilon, config.target_accept);
            }
            if config.adapt && it + 1 == refine_from && refine_from + 10 <= burn {
                epsilon = da.final_step();
                refiner = Some(StepRefiner::new(epsilon, config.target_accept));
            }
            if config.adapt && it + 1 == burn {
                epsilon = match &refiner {
                    Some(r) => r.current(),
                    None => da.final_step(),
                };
            }
        } else if (it - burn + 1).is_multiple_of(config.thin) {
            draws.push(state.q.clone());
            kept.push(record(&state.q)?);
            accepted.push(tr.accepted);
            delta_h.push(tr.delta_h);
            steps.push(tr.steps);
        }
    }
    let chain = RawChain {
        draws,
        accepted,
        delta_h,
        steps,
        step_size: epsilon,
        mass,
        burn_in_acceptance: if burn == 0 { f64::NAN } else { burn_accepts as f64 / burn as f64 },
        last: state,
    };
    Ok((chain, kept))
}

/// Stored draws of a fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSamples {
    pub n: usize,
    pub exponent: f64,
    pub cell_area: f64,
    pub theta: Vec<HyperParams>,
    /// Window log-intensities, `n^2` per draw, row-major.
    pub y: Vec<f64>,
    pub accepted: Vec<bool>,
    pub delta_h: Vec<f64>,
    pub step_size: f64,
    pub mass: Vec<f64>,
    pub burn_in_acceptance: f64,
    pub mean_steps: f64,
    /// Last whitened latent vector, for warm starts.
    pub last_gamma: Vec<f64>,
}

impl ChainSamples {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn field(&self, draw: usize) -> &[f64] {
        let c = self.n * self.n;
        &self.y[draw * c..(draw + 1) * c]
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return f64::NAN;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64
    }
}

/// Fit the model with HMC starting from `gamma = 0` and `init`.
pub fn run_chain<R: Rng + ?Sized>(
    posterior: &Posterior,
    init: &HyperParams,
    config: &HmcConfig,
    rng: &mut R,
) -> Result<ChainSamples> {
    init.validate()?;
    let k = posterior.latent_len();
    let q0 = pack(&vec![0.0; k], init);
    let mass = config.mass.expand(k);
    let frozen = if config.sample_rho { vec![] } else { vec![k + 2] };
    let emb = posterior.embedding();
    let mut record = |q: &[f64]| -> Result<(HyperParams, Vec<f64>)> {
        let (gamma, theta) = unpack(q);
        let y = posterior.field(gamma, &theta)?;
        Ok((theta, emb.restrict(&y)))
    };
    let (raw, kept) = sample_frozen(posterior, q0, config, mass, &frozen, rng, &mut record)?;
    let mut theta = Vec::with_capacity(kept.len());
    let mut y = Vec::with_capacity(kept.len() * emb.n() * emb.n());
    for (t, f) in kept {
        theta.push(t);
        y.extend(f);
    }
    let mean_steps = raw.steps.iter().sum::<usize>() as f64 / raw.steps.len().max(1) as f64;
    Ok(ChainSamples {
        n: emb.n(),
        exponent: posterior.exponent(),
        cell_area: emb.grid().cell_area(),
        theta,
        y,
        accepted: raw.accepted,
        delta_h: raw.delta_h,
        step_size: raw.step_size,
        mass: raw.mass,
        burn_in_acceptance: raw.burn_in_acceptance,
        mean_steps,
        last_gamma: raw.last.q[..k].to_vec(),
    })
}

/// Per-draw posterior summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mu: Moments,
    pub sigma2: Moments,
    /// `sigma^-2`, transformed per draw.
    pub precision: Moments,
    pub rho: Moments,
    pub d_half: Moments,
    pub expected_n: Moments,
    pub field_mean: Vec<f64>,
    pub field_variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawSeries {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub precision: Vec<f64>,
    pub rho: Vec<f64>,
    pub d_half: Vec<f64>,
    pub expected_n: Vec<f64>,
}

impl ChainSamples {
    /// Scalar quantities per draw.
    pub fn series(&self) -> DrawSeries {
        let d_half = |rho: f64| {
            CorrelationModel::PowerExponential {
                decay: rho,
                exponent: self.exponent,
            }
            .d_half()
        };
        DrawSeries {
            mu: self.theta.iter().map(|t| t.mu).collect(),
            sigma2: self.theta.iter().map(|t| t.sigma2).collect(),
            precision: self.theta.iter().map(|t| 1.0 / t.sigma2).collect(),
            rho: self.theta.iter().map(|t| t.rho).collect(),
            d_half: self.theta.iter().map(|t| d_half(t.rho)).collect(),
            expected_n: (0..self.len())
                .map(|d| self.field(d).iter().map(|y| self.cell_area * y.exp()).sum())
                .collect(),
        }
    }

    pub fn summarize(&self) -> Result<PosteriorSummary> {
        if self.is_empty() {
            return Err(LgcpError::invalid("no draws to summarize"));
        }
        let s = self.series();
        let cells = self.n * self.n;
        let draws = self.len() as f64;
        let mut field_mean = vec![0.0; cells];
        for d in 0..self.len() {
            for (m, y) in field_mean.iter_mut().zip(self.field(d)) {
                *m += y / draws;
            }
        }
        let mut field_variance = vec![0.0; cells];
        if self.len() > 1 {
            for d in 0..self.len() {
                for ((v, y), m) in field_variance.iter_mut().zip(self.field(d)).zip(&field_mean) {
                    *v += (y - m).powi(2) / (draws - 1.0);
                }
            }
        }
        Ok(PosteriorSummary {
            mu: Moments::of(&s.mu),
            sigma2: Moments::of(&s.sigma2),
            precision: Moments::of(&s.precision),
            rho: Moments::of(&s.rho),
            d_half: Moments::of(&s.d_half),
            expected_n: Moments::of(&s.expected_n),
            field_mean,
            field_variance,
        })
    }
}

/// Type-7 quantiles of a per-draw series.
pub fn quantiles(values: &[f64], probs: &[f64]) -> Vec<f64> {
    probs.iter().map(|&p| quantile(values, p)).collect()
}

/// Build the posterior and run a chain in one call.
pub fn fit(
    counts: &crate::geometry::CellCounts,
    emb: &TorusEmbedding,
    priors: crate::posterior::PriorSpec,
    mask_likelihood: bool,
    init: &HyperParams,
    config: &HmcConfig,
    rng: &mut (impl Rng + ?Sized),
) -> Result<ChainSamples> {
    let posterior = Posterior::new(counts, emb, priors, mask_likelihood)?;
    run_chain(&posterior, init, config, rng)
}
