//! C ABI for the `lgcp` library.
//!
//! Objects cross the boundary as opaque handles created by `lgcp_*_new` or
//! `lgcp_fit_*` and released by the matching `lgcp_*_free`. Every fallible
//! function returns an [`LgcpStatus`]; on failure a message is kept per
//! thread and can be copied out with [`lgcp_last_error_message`]. Panics
//! never unwind into C: they are caught and reported as `LGCP_PANIC`.
//!
//! Arrays are passed as pointer plus length. Output arrays are written only
//! when the status is `LGCP_OK`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use lgcp::correlation::{match_power_to_matern, default_match_grid, CorrelationModel};
use lgcp::estimation::{k_hat, l_hat};
use lgcp::geometry::{bin_points, GridSpec, Rect, SpectralPower, TorusEmbedding};
use lgcp::hmc::{run_chain, ChainSamples, HmcConfig};
use lgcp::posterior::{default_rho_upper, HyperParams, Posterior, PriorSpec};
use lgcp::rng::{replicate_stream, Purpose};
use lgcp::simulate::{sample_grf, sample_pattern, PointPattern};
use lgcp::stats::Moments;
use lgcp::vb::{run_vb, VbConfig, VbFit};
use lgcp::LgcpError;

#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LgcpStatus {
    LGCP_OK = 0,
    LGCP_NULL_POINTER = 1,
    LGCP_INVALID_ARGUMENT = 2,
    LGCP_LENGTH_MISMATCH = 3,
    LGCP_NOT_POSITIVE_SEMIDEFINITE = 4,
    LGCP_NUMERICAL_FAILURE = 5,
    LGCP_NO_CONVERGENCE = 6,
    LGCP_TOO_FEW_POINTS = 7,
    LGCP_ZERO_ACCEPTANCE = 8,
    LGCP_BUFFER_TOO_SMALL = 9,
    LGCP_PANIC = 99,
}

#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LgcpFamily {
    /// `exp(-decay d^exponent)`; parameters are decay and exponent.
    LGCP_POWER_EXPONENTIAL = 0,
    /// Parameters are range and shape.
    LGCP_MATERN = 1,
}

#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LgcpPower {
    LGCP_POWER_ONE = 0,
    LGCP_POWER_HALF = 1,
    LGCP_POWER_NEG_HALF = 2,
    LGCP_POWER_STAR = 3,
}

/// Posterior mean and variance of one quantity.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LgcpMoments {
    pub mean: f64,
    pub variance: f64,
}

impl From<Moments> for LgcpMoments {
    fn from(m: Moments) -> Self {
        LgcpMoments {
            mean: m.mean,
            variance: m.variance,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LgcpSummary {
    pub mu: LgcpMoments,
    pub sigma2: LgcpMoments,
    pub precision: LgcpMoments,
    pub d_half: LgcpMoments,
    pub expected_n: LgcpMoments,
}

/// Torus embedding of a correlation model on an `n x n` unit-square grid.
pub struct LgcpEmbedding {
    grid: GridSpec,
    emb: TorusEmbedding,
}

pub struct LgcpPattern(PointPattern);

pub struct LgcpHmcFit(ChainSamples);

pub struct LgcpVbFit(VbFit);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &LgcpError) -> LgcpStatus {
    use LgcpStatus::*;
    match e {
        LgcpError::InvalidParameter(_) | LgcpError::PointOutsideDomain { .. } | LgcpError::UnsupportedOperator(_) => {
            LGCP_INVALID_ARGUMENT
        }
        LgcpError::LengthMismatch { .. } | LgcpError::ReplicateMismatch { .. } => LGCP_LENGTH_MISMATCH,
        LgcpError::NotPositiveSemidefinite { .. } | LgcpError::NotPositiveDefinite { .. } => {
            LGCP_NOT_POSITIVE_SEMIDEFINITE
        }
        LgcpError::NonFinite(_)
        | LgcpError::IntensityOverflow { .. }
        | LgcpError::NewtonDivergence { .. }
        | LgcpError::ElboDecrease { .. } => LGCP_NUMERICAL_FAILURE,
        LgcpError::NoConvergence { .. } => LGCP_NO_CONVERGENCE,
        LgcpError::TooFewPoints { .. } => LGCP_TOO_FEW_POINTS,
        LgcpError::ZeroAcceptance { .. } => LGCP_ZERO_ACCEPTANCE,
    }
}

enum Failure {
    Status(LgcpStatus, String),
    Lgcp(LgcpError),
}

impl From<LgcpError> for Failure {
    fn from(e: LgcpError) -> Self {
        Failure::Lgcp(e)
    }
}

type FfiResult = Result<(), Failure>;

/// Run `f`, translating errors and panics into a status.
fn guard<F: FnOnce() -> FfiResult>(f: F) -> LgcpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LgcpStatus::LGCP_OK,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Lgcp(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            LgcpStatus::LGCP_PANIC
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(LgcpStatus::LGCP_NULL_POINTER, format!("{what} is null"))
}

unsafe fn input<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a>(ptr: *mut f64, len: usize, needed: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len < needed {
        return Err(Failure::Status(
            LgcpStatus::LGCP_BUFFER_TOO_SMALL,
            format!("{what} holds {len} values, {needed} needed"),
        ));
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(ptr, needed))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_value<T>(out: *mut T, value: T) -> FfiResult {
    if out.is_null() {
        return Err(null("output"));
    }
    *out = value;
    Ok(())
}

fn model(family: LgcpFamily, p1: f64, p2: f64) -> lgcp::Result<CorrelationModel> {
    match family {
        LgcpFamily::LGCP_POWER_EXPONENTIAL => CorrelationModel::power_exponential(p1, p2),
        LgcpFamily::LGCP_MATERN => CorrelationModel::matern(p1, p2),
    }
}

/// Length in bytes of the last error message on this thread, excluding the
/// terminating nul; 0 when there is none.
#[no_mangle]
pub extern "C" fn lgcp_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes().len()))
}

/// Copy the last error message (nul-terminated, truncated to fit) into
/// `buf`. Returns the number of bytes written, excluding the nul.
///
/// # Safety
/// `buf` must point to `len` writable bytes or be null.
#[no_mangle]
pub unsafe extern "C" fn lgcp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    if buf.is_null() || len == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |c| c.as_bytes());
        let n = bytes.len().min(len - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
        *buf.add(n) = 0;
        n
    })
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn lgcp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Distance at which the correlation equals 0.5.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lgcp_d_half(family: LgcpFamily, p1: f64, p2: f64, out: *mut f64) -> LgcpStatus {
    guard(|| put_value(out, model(family, p1, p2)?.d_half()))
}

/// Least-squares power-exponential match to a Matérn correlation.
///
/// # Safety
/// `decay` and `exponent` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lgcp_match_power_to_matern(
    range: f64,
    shape: f64,
    decay: *mut f64,
    exponent: *mut f64,
) -> LgcpStatus {
    guard(|| {
        if decay.is_null() || exponent.is_null() {
            return Err(null("output"));
        }
        let m = match_power_to_matern(range, shape, &default_match_grid())?;
        *decay = m.decay;
        *exponent = m.exponent;
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer; the handle is released with
/// [`lgcp_embedding_free`].
#[no_mangle]
pub unsafe extern "C" fn lgcp_embedding_new(
    n: usize,
    family: LgcpFamily,
    p1: f64,
    p2: f64,
    out: *mut *mut LgcpEmbedding,
) -> LgcpStatus {
    guard(|| {
        let grid = GridSpec::new(n)?;
        let emb = TorusEmbedding::build(&grid, &model(family, p1, p2)?)?;
        put(out, LgcpEmbedding { grid, emb })
    })
}

/// # Safety
/// `emb` must come from [`lgcp_embedding_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lgcp_embedding_free(emb: *mut LgcpEmbedding) {
    if !emb.is_null() {
        drop(Box::from_raw(emb));
    }
}

/// Torus side `m`; 0 for a null handle.
///
/// # Safety
/// `emb` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn lgcp_embedding_side(emb: *const LgcpEmbedding) -> usize {
    emb.as_ref().map_or(0, |e| e.emb.m())
}

/// `E^p v` for a vector of length `m^2`.
///
/// # Safety
/// `v` and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn lgcp_embedding_matvec(
    emb: *const LgcpEmbedding,
    power: LgcpPower,
    v: *const f64,
    out: *mut f64,
    len: usize,
) -> LgcpStatus {
    guard(|| {
        let e = handle(emb, "embedding")?;
        let p = match power {
            LgcpPower::LGCP_POWER_ONE => SpectralPower::One,
            LgcpPower::LGCP_POWER_HALF => SpectralPower::Half,
            LgcpPower::LGCP_POWER_NEG_HALF => SpectralPower::NegHalf,
            LgcpPower::LGCP_POWER_STAR => SpectralPower::Star,
        };
        let r = e.emb.spectral_matvec(input(v, len, "v")?, p)?;
        output(out, len, r.len(), "out")?.copy_from_slice(&r);
        Ok(())
    })
}

/// Pattern in the unit square from coordinate arrays.
///
/// # Safety
/// `x` and `y` must hold `len` values; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lgcp_pattern_new(
    x: *const f64,
    y: *const f64,
    len: usize,
    out: *mut *mut LgcpPattern,
) -> LgcpStatus {
    guard(|| {
        let (xs, ys) = (input(x, len, "x")?, input(y, len, "y")?);
        let points = xs.iter().copied().zip(ys.iter().copied()).collect();
        put(out, LgcpPattern(PointPattern::new(points, Rect::UNIT)?))
    })
}

/// # Safety
/// `pattern` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lgcp_pattern_free(pattern: *mut LgcpPattern) {
    if !pattern.is_null() {
        drop(Box::from_raw(pattern));
    }
}

/// # Safety
/// `pattern` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn lgcp_pattern_len(pattern: *const LgcpPattern) -> usize {
    pattern.as_ref().map_or(0, |p| p.0.len())
}

/// Copy the coordinates into `x` and `y`, each of capacity `len`.
///
/// # Safety
/// `x` and `y` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn lgcp_pattern_points(
    pattern: *const LgcpPattern,
    x: *mut f64,
    y: *mut f64,
    len: usize,
) -> LgcpStatus {
    guard(|| {
        let p = handle(pattern, "pattern")?;
        let k = p.0.len();
        let xs = output(x, len, k, "x")?;
        for (dst, (px, _)) in xs.iter_mut().zip(p.0.points()) {
            *dst = *px;
        }
        let ys = output(y, len, k, "y")?;
        for (dst, (_, py)) in ys.iter_mut().zip(p.0.points()) {
            *dst = *py;
        }
        Ok(())
    })
}

/// Draw a field `mu + sigma E^{1/2} gamma` and a pattern from it. The
/// window field (`n^2` values, row-major, rows along y) is written to
/// `field` when it is not null.
///
/// # Safety
/// `field` must hold `field_len` values or be null; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lgcp_simulate(
    emb: *const LgcpEmbedding,
    mu: f64,
    sigma2: f64,
    seed: u64,
    field: *mut f64,
    field_len: usize,
    out: *mut *mut LgcpPattern,
) -> LgcpStatus {
    guard(|| {
        let e = handle(emb, "embedding")?;
        let f = sample_grf(&e.emb, mu, sigma2, &mut replicate_stream(seed, 0, Purpose::Field))?;
        let pattern = sample_pattern(&f, &e.grid, &mut replicate_stream(seed, 0, Purpose::Pattern))?;
        if !field.is_null() {
            let w = f.window();
            output(field, field_len, w.len(), "field")?.copy_from_slice(&w);
        }
        put(out, LgcpPattern(pattern))
    })
}

fn curve(
    pattern: *const LgcpPattern,
    r: *const f64,
    out: *mut f64,
    len: usize,
    l: bool,
) -> LgcpStatus {
    guard(|| unsafe {
        let p = handle(pattern, "pattern")?;
        let rs = input(r, len, "r")?;
        let c = if l { l_hat(&p.0, rs, Rect::UNIT)? } else { k_hat(&p.0, rs, Rect::UNIT)? };
        output(out, len, c.values.len(), "out")?.copy_from_slice(&c.values);
        Ok(())
    })
}

/// Translation-corrected K estimate at the `len` distances in `r`.
///
/// # Safety
/// `r` and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn lgcp_k_hat(pattern: *const LgcpPattern, r: *const f64, out: *mut f64, len: usize) -> LgcpStatus {
    curve(pattern, r, out, len, false)
}

/// `sqrt(K / pi)` from the translation-corrected K.
///
/// # Safety
/// `r` and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn lgcp_l_hat(pattern: *const LgcpPattern, r: *const f64, out: *mut f64, len: usize) -> LgcpStatus {
    curve(pattern, r, out, len, true)
}

/// Settings for [`lgcp_fit_hmc`]; start from [`lgcp_hmc_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LgcpHmcOptions {
    pub iterations: usize,
    pub burn_in: usize,
    pub epsilon0: f64,
    pub target_accept: f64,
    pub l_mean: f64,
    /// Upper bound of the flat decay prior; `<= 0` picks the grid default.
    pub rho_upper: f64,
    pub seed: u64,
}

#[no_mangle]
pub extern "C" fn lgcp_hmc_options_default() -> LgcpHmcOptions {
    let c = HmcConfig::default();
    LgcpHmcOptions {
        iterations: c.iterations,
        burn_in: c.burn_in,
        epsilon0: c.epsilon0,
        target_accept: c.target_accept,
        l_mean: c.l_mean,
        rho_upper: 0.0,
        seed: 0,
    }
}

/// HMC fit of a unit-square pattern on an `n x n` grid with a
/// power-exponential correlation whose exponent is held fixed.
///
/// # Safety
/// `pattern` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lgcp_fit_hmc(
    pattern: *const LgcpPattern,
    n: usize,
    decay: f64,
    exponent: f64,
    options: LgcpHmcOptions,
    out: *mut *mut LgcpHmcFit,
) -> LgcpStatus {
    guard(|| {
        let p = handle(pattern, "pattern")?;
        let grid = GridSpec::new(n)?;
        let corr = CorrelationModel::power_exponential(decay, exponent)?;
        let emb = TorusEmbedding::build(&grid, &corr)?;
        let counts = bin_points(&p.0, &grid, &emb)?;
        let upper = if options.rho_upper > 0.0 { options.rho_upper } else { default_rho_upper(&grid, exponent) };
        let post = Posterior::new(&counts, &emb, PriorSpec::flat().with_rho_upper(upper), true)?;
        let config = HmcConfig {
            iterations: options.iterations,
            burn_in: options.burn_in,
            epsilon0: options.epsilon0,
            target_accept: options.target_accept,
            l_mean: options.l_mean,
            ..HmcConfig::default()
        };
        let init = HyperParams {
            mu: (counts.total().max(1) as f64).ln() - 0.5,
            sigma2: 1.0,
            rho: decay,
        };
        let chain = run_chain(&post, &init, &config, &mut replicate_stream(options.seed, 0, Purpose::Hmc))?;
        put(out, LgcpHmcFit(chain))
    })
}

/// # Safety
/// `fit` must come from [`lgcp_fit_hmc`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lgcp_hmc_free(fit: *mut LgcpHmcFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of stored draws; 0 for a null handle.
///
/// # Safety
/// `fit` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn lgcp_hmc_draws(fit: *const LgcpHmcFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.len())
}

/// Post-burn-in acceptance rate; NaN for a null handle.
///
/// # Safety
/// `fit` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn lgcp_hmc_acceptance(fit: *const LgcpHmcFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.0.acceptance_rate())
}

/// Draws of `(mu, sigma2, rho)`, 3 values per draw.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn lgcp_hmc_theta(fit: *const LgcpHmcFit, out: *mut f64, len: usize) -> LgcpStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        let buf = output(out, len, 3 * f.0.len(), "out")?;
        for (chunk, t) in buf.chunks_exact_mut(3).zip(&f.0.theta) {
            chunk.copy_from_slice(&[t.mu, t.sigma2, t.rho]);
        }
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lgcp_hmc_summary(fit: *const LgcpHmcFit, out: *mut LgcpSummary) -> LgcpStatus {
    guard(|| {
        let s = handle(fit, "fit")?.0.summarize()?;
        put_value(
            out,
            LgcpSummary {
                mu: s.mu.into(),
                sigma2: s.sigma2.into(),
                precision: s.precision.into(),
                d_half: s.d_half.into(),
                expected_n: s.expected_n.into(),
            },
        )
    })
}

/// Mean-field VB fit with the correlation held fixed, priors
/// `mu ~ N(0, 625)` and `sigma^2 ~ IG(1, 1)`.
///
/// # Safety
/// `pattern` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lgcp_fit_vb(
    pattern: *const LgcpPattern,
    n: usize,
    family: LgcpFamily,
    p1: f64,
    p2: f64,
    out: *mut *mut LgcpVbFit,
) -> LgcpStatus {
    guard(|| {
        let p = handle(pattern, "pattern")?;
        let grid = GridSpec::new(n)?;
        let corr = model(family, p1, p2)?;
        let emb = TorusEmbedding::build(&grid, &corr)?;
        let counts = bin_points(&p.0, &grid, &emb)?;
        let fit = run_vb(&counts, &grid, &corr, &PriorSpec::conjugate_default(), &VbConfig::default())?;
        put(out, LgcpVbFit(fit))
    })
}

/// # Safety
/// `fit` must come from [`lgcp_fit_vb`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lgcp_vb_free(fit: *mut LgcpVbFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Sweeps run until convergence; 0 for a null handle.
///
/// # Safety
/// `fit` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn lgcp_vb_iterations(fit: *const LgcpVbFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.iterations)
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lgcp_vb_summary(fit: *const LgcpVbFit, out: *mut LgcpSummary) -> LgcpStatus {
    guard(|| {
        let s = handle(fit, "fit")?.0.state.summaries();
        put_value(
            out,
            LgcpSummary {
                mu: s.mu.into(),
                sigma2: s.sigma2.into(),
                precision: s.precision.into(),
                d_half: s.d_half.into(),
                expected_n: s.expected_n.into(),
            },
        )
    })
}
