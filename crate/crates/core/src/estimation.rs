//! Ripley K / L estimation, the theoretical K function of the model and
//! minimum-contrast fitting of the correlation parameters.

use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationModel;
use crate::error::{LgcpError, Result};
use crate::geometry::Rect;
use crate::lsq::{levenberg_marquardt, LsqOptions};
use crate::simulate::PointPattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    K,
    L,
}

/// A K or L function tabulated on a distance grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KCurve {
    pub kind: CurveKind,
    pub r: Vec<f64>,
    pub values: Vec<f64>,
    /// `"translation"` for estimates, `"lgcp"` for theoretical curves.
    pub method: String,
    /// Intensity estimate `N / |W|` used by an estimate.
    pub intensity: Option<f64>,
}

impl KCurve {
    /// `L = sqrt(K / pi)`; identity on an L curve.
    pub fn to_l(&self) -> KCurve {
        match self.kind {
            CurveKind::L => self.clone(),
            CurveKind::K => KCurve {
                kind: CurveKind::L,
                values: self.values.iter().map(|k| (k / std::f64::consts::PI).sqrt()).collect(),
                ..self.clone()
            },
        }
    }

    pub fn to_k(&self) -> KCurve {
        match self.kind {
            CurveKind::K => self.clone(),
            CurveKind::L => KCurve {
                kind: CurveKind::K,
                values: self.values.iter().map(|l| std::f64::consts::PI * l * l).collect(),
                ..self.clone()
            },
        }
    }
}

/// 20 equally spaced distances `0.0125 k`, `k = 1..20`, on `(0, 0.25]`.
pub fn default_rgrid() -> Vec<f64> {
    linear_grid(0.25, 20)
}

/// `count` equally spaced distances ending at `r_max`.
pub fn linear_grid(r_max: f64, count: usize) -> Vec<f64> {
    (1..=count).map(|k| r_max * k as f64 / count as f64).collect()
}

fn check_rgrid(rgrid: &[f64]) -> Result<()> {
    if rgrid.is_empty() {
        return Err(LgcpError::invalid("distance grid is empty"));
    }
    if rgrid.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
        return Err(LgcpError::invalid("distances must be finite and >= 0"));
    }
    if rgrid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LgcpError::invalid("distance grid must be strictly increasing"));
    }
    Ok(())
}

/// Translation-corrected K estimate:
/// `K(r) = |W| / (N (N - 1)) sum_{i != j} 1{d_ij <= r} / w_ij`, with
/// `w_ij = (W_x - |dx|)(W_y - |dy|) / |W|`.
pub fn k_hat(pattern: &PointPattern, rgrid: &[f64], domain: Rect) -> Result<KCurve> {
    check_rgrid(rgrid)?;
    let pts = pattern.points();
    let n = pts.len();
    if n < 2 {
        return Err(LgcpError::TooFewPoints { needed: 2, got: n });
    }
    let (wx, wy, area) = (domain.width(), domain.height(), domain.area());
    let r_max = *rgrid.last().expect("nonempty");
    let mut bins = vec![0.0; rgrid.len()];
    for i in 0..n {
        let (xi, yi) = pts[i];
        for &(xj, yj) in &pts[i + 1..] {
            let (dx, dy) = ((xi - xj).abs(), (yi - yj).abs());
            let d = dx.hypot(dy);
            if d > r_max {
                continue;
            }
            let overlap = (wx - dx) * (wy - dy);
            if overlap <= 0.0 {
                continue;
            }
            let k = rgrid.partition_point(|&r| r < d);
            bins[k] += 2.0 * area / overlap;
        }
    }
    let scale = area / (n as f64 * (n as f64 - 1.0));
    let mut acc = 0.0;
    let values = bins
        .into_iter()
        .map(|b| {
            acc += b;
            acc * scale
        })
        .collect();
    Ok(KCurve {
        kind: CurveKind::K,
        r: rgrid.to_vec(),
        values,
        method: "translation".into(),
        intensity: Some(n as f64 / area),
    })
}

pub fn l_hat(pattern: &PointPattern, rgrid: &[f64], domain: Rect) -> Result<KCurve> {
    Ok(k_hat(pattern, rgrid, domain)?.to_l())
}

/// Adaptive Simpson integration to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 48)
}

/// `K(r) = pi r^2 + 2 pi int_0^r s (exp(sigma2 c(s)) - 1) ds`.
pub fn k_theory_lgcp(corr: &CorrelationModel, sigma2: f64, rgrid: &[f64]) -> Result<KCurve> {
    check_rgrid(rgrid)?;
    corr.validate()?;
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(LgcpError::invalid(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    let values = k_theory_values(corr, sigma2, rgrid);
    Ok(KCurve {
        kind: CurveKind::K,
        r: rgrid.to_vec(),
        values,
        method: "lgcp".into(),
        intensity: None,
    })
}

fn k_theory_values(corr: &CorrelationModel, sigma2: f64, rgrid: &[f64]) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    if sigma2 == 0.0 {
        return rgrid.iter().map(|r| pi * r * r).collect();
    }
    let excess = |s: f64| s * (sigma2 * corr.eval(s)).exp_m1();
    let mut acc = 0.0;
    let mut prev = 0.0;
    rgrid
        .iter()
        .map(|&r| {
            // the excess is at most r * e^sigma2, scale the tolerance to it
            let tol = 1e-13 * (r - prev) * r.max(1e-300) * sigma2.exp();
            acc += integrate(&excess, prev, r, tol);
            prev = r;
            pi * r * r + 2.0 * pi * acc
        })
        .collect()
}

/// Which parameters minimum contrast estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeParams {
    /// Power-exponential decay, exponent fixed.
    Decay,
    DecayExponent,
    /// Matérn range, shape fixed.
    Range,
    RangeShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastConfig {
    pub free: FreeParams,
    /// Estimate `sigma^2` jointly; otherwise it stays at its start value.
    pub fit_sigma2: bool,
    pub fit_min: f64,
    pub fit_max: f64,
    /// Power applied to both curves before differencing.
    pub exponent: f64,
    /// Points of the Riemann sum approximating the contrast integral.
    pub points: usize,
    /// Coarse scan over start values before the local fit.
    pub scan: bool,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            free: FreeParams::Decay,
            fit_sigma2: true,
            fit_min: 0.0,
            fit_max: 0.25,
            exponent: 0.25,
            points: 100,
            scan: true,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fit_min >= 0.0 && self.fit_max > self.fit_min && self.fit_max.is_finite()) {
            return Err(LgcpError::invalid("fit range must satisfy 0 <= min < max"));
        }
        if !(self.exponent > 0.0 && self.exponent.is_finite()) {
            return Err(LgcpError::invalid("contrast exponent must be positive"));
        }
        if self.points < 2 {
            return Err(LgcpError::invalid("contrast needs at least 2 grid points"));
        }
        Ok(())
    }

    /// Midpoint grid on the fit range and its spacing.
    pub fn grid(&self) -> (Vec<f64>, f64) {
        let h = (self.fit_max - self.fit_min) / self.points as f64;
        ((0..self.points).map(|k| self.fit_min + (k as f64 + 0.5) * h).collect(), h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastFit {
    pub model: CorrelationModel,
    pub sigma2: f64,
    /// Riemann approximation of the contrast integral at the fit.
    pub contrast: f64,
    pub initial_contrast: f64,
    pub iterations: usize,
}

struct Parametrization {
    free: FreeParams,
    fit_sigma2: bool,
    start: CorrelationModel,
    sigma2: f64,
}

fn logit_half(v: f64) -> f64 {
    let p = (v / 2.0).clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

fn sigmoid_two(z: f64) -> f64 {
    2.0 / (1.0 + (-z).exp())
}

impl Parametrization {
    fn encode(&self, model: &CorrelationModel, sigma2: f64) -> Vec<f64> {
        let mut z = match (*model, self.free) {
            (CorrelationModel::PowerExponential { decay, .. }, FreeParams::Decay) => vec![decay.ln()],
            (CorrelationModel::PowerExponential { decay, exponent }, FreeParams::DecayExponent) => {
                vec![decay.ln(), logit_half(exponent)]
            }
            (CorrelationModel::Matern { range, .. }, FreeParams::Range) => vec![range.ln()],
            (CorrelationModel::Matern { range, shape }, FreeParams::RangeShape) => {
                vec![range.ln(), shape.ln()]
            }
            _ => unreachable!("family checked in min_contrast"),
        };
        if self.fit_sigma2 {
            z.push(sigma2.ln());
        }
        z
    }

    fn decode(&self, z: &[f64]) -> (CorrelationModel, f64) {
        let model = match (self.start, self.free) {
            (CorrelationModel::PowerExponential { exponent, .. }, FreeParams::Decay) => {
                CorrelationModel::PowerExponential { decay: z[0].exp(), exponent }
            }
            (CorrelationModel::PowerExponential { .. }, FreeParams::DecayExponent) => {
                CorrelationModel::PowerExponential {
                    decay: z[0].exp(),
                    exponent: sigmoid_two(z[1]),
                }
            }
            (CorrelationModel::Matern { shape, .. }, FreeParams::Range) => {
                CorrelationModel::Matern { range: z[0].exp(), shape }
            }
            (CorrelationModel::Matern { .. }, FreeParams::RangeShape) => CorrelationModel::Matern {
                range: z[0].exp(),
                shape: z[1].exp(),
            },
            _ => unreachable!("family checked in min_contrast"),
        };
        let sigma2 = if self.fit_sigma2 { z[z.len() - 1].exp() } else { self.sigma2 };
        (model, sigma2)
    }
}

/// Minimum contrast against an empirical K curve evaluated on
/// `config.grid()`.
///
/// `start` fixes the family, the values of parameters that are not free and
/// the starting point of the free ones; likewise `sigma2`.
pub fn min_contrast_curve(
    empirical: &KCurve,
    start: &CorrelationModel,
    sigma2: f64,
    config: &ContrastConfig,
) -> Result<ContrastFit> {
    config.validate()?;
    start.validate()?;
    let (grid, h) = config.grid();
    if empirical.kind != CurveKind::K || empirical.r != grid {
        return Err(LgcpError::invalid("empirical K curve must be tabulated on the contrast grid"));
    }
    match (start, config.free) {
        (CorrelationModel::PowerExponential { .. }, FreeParams::Decay | FreeParams::DecayExponent)
        | (CorrelationModel::Matern { .. }, FreeParams::Range | FreeParams::RangeShape) => {}
        _ => return Err(LgcpError::invalid("free parameters do not match the correlation family")),
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(LgcpError::invalid("starting sigma2 must be positive"));
    }
    let c = config.exponent;
    let target: Vec<f64> = empirical.values.iter().map(|k| k.max(0.0).powf(c)).collect();
    let param = Parametrization {
        free: config.free,
        fit_sigma2: config.fit_sigma2,
        start: *start,
        sigma2,
    };
    let weight = h.sqrt();
    let residuals = |z: &[f64]| -> Option<Vec<f64>> {
        let (model, s2) = param.decode(z);
        if model.validate().is_err() || !(s2 > 0.0 && s2 < 50.0) {
            return None;
        }
        let theory = k_theory_values(&model, s2, &grid);
        Some(
            theory
                .iter()
                .zip(&target)
                .map(|(k, t)| weight * (k.powf(c) - t))
                .collect(),
        )
    };
    let sse = |z: &[f64]| residuals(z).map(|r| r.iter().map(|v| v * v).sum::<f64>());

    let z_start = param.encode(start, sigma2);
    let initial_contrast = sse(&z_start)
        .ok_or_else(|| LgcpError::invalid("contrast is undefined at the starting parameters"))?;
    let mut z0 = z_start.clone();
    if config.scan {
        let mut best = initial_contrast;
        let scale_offsets = [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0];
        let sigma_offsets: &[f64] = if config.fit_sigma2 { &[-1.5, -0.75, 0.0, 0.75, 1.5] } else { &[0.0] };
        for &a in &scale_offsets {
            for &b in sigma_offsets {
                let mut z = z_start.clone();
                z[0] += a;
                if config.fit_sigma2 {
                    let last = z.len() - 1;
                    z[last] += b;
                }
                if let Some(v) = sse(&z) {
                    if v < best {
                        best = v;
                        z0 = z;
                    }
                }
            }
        }
    }
    let fit = match levenberg_marquardt(residuals, &z0, &LsqOptions::default()) {
        Ok(fit) => fit,
        Err(LgcpError::NoConvergence { best, iterations, .. }) => crate::lsq::LsqResult {
            sse: sse(&best).unwrap_or(f64::INFINITY),
            params: best,
            initial_sse: initial_contrast,
            iterations,
        },
        Err(e) => return Err(e),
    };
    let (model, s2) = param.decode(&fit.params);
    Ok(ContrastFit {
        model,
        sigma2: s2,
        contrast: fit.sse,
        initial_contrast,
        iterations: fit.iterations,
    })
}

/// Minimum contrast from a point pattern, using the translation-corrected K.
pub fn min_contrast(
    pattern: &PointPattern,
    domain: Rect,
    start: &CorrelationModel,
    sigma2: f64,
    config: &ContrastConfig,
) -> Result<ContrastFit> {
    config.validate()?;
    let (grid, _) = config.grid();
    let khat = k_hat(pattern, &grid, domain)?;
    min_contrast_curve(&khat, start, sigma2, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_points_jump_at_their_distance() {
        let p = PointPattern::new(vec![(0.4, 0.5), (0.5, 0.5)], Rect::UNIT).unwrap();
        let rgrid = [0.05, 0.099, 0.1, 0.2];
        let k = k_hat(&p, &rgrid, Rect::UNIT).unwrap();
        assert_eq!(k.values[0], 0.0);
        assert_eq!(k.values[1], 0.0);
        // |W| / (N(N-1)) * 2 / w with w = 0.9 * 1.0
        let expected = 1.0 / 2.0 * 2.0 / 0.9;
        assert!((k.values[2] - expected).abs() < 1e-12);
        assert_eq!(k.values[3], k.values[2]);
    }

    #[test]
    fn k_hat_needs_two_points() {
        let p = PointPattern::new(vec![(0.4, 0.5)], Rect::UNIT).unwrap();
        assert!(matches!(
            k_hat(&p, &default_rgrid(), Rect::UNIT),
            Err(LgcpError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn default_grid_has_twenty_distances() {
        let r = default_rgrid();
        assert_eq!(r.len(), 20);
        assert!((r[19] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_theory_is_csr() {
        let corr = CorrelationModel::power_exponential(10.0, 1.3).unwrap();
        let k = k_theory_lgcp(&corr, 0.0, &default_rgrid()).unwrap();
        for (r, v) in k.r.iter().zip(&k.values) {
            assert_eq!(*v, std::f64::consts::PI * r * r);
        }
    }

    #[test]
    fn theory_matches_fine_riemann_sum() {
        for corr in [
            CorrelationModel::power_exponential(27.0, 1.312).unwrap(),
            CorrelationModel::power_exponential(5.0, 0.5).unwrap(),
            CorrelationModel::matern(0.02, 1.0).unwrap(),
        ] {
            let sigma2 = 3.5;
            let r = 0.2;
            let k = k_theory_lgcp(&corr, sigma2, &[r]).unwrap().values[0];
            let panels = 1_000_000;
            let h = r / panels as f64;
            let riemann: f64 = (0..panels)
                .map(|i| {
                    let s = (i as f64 + 0.5) * h;
                    s * (sigma2 * corr.eval(s)).exp()
                })
                .sum::<f64>()
                * h
                * 2.0
                * std::f64::consts::PI;
            assert!((k - riemann).abs() <= 1e-6 * riemann, "{corr:?}: {k} vs {riemann}");
        }
    }

    #[test]
    fn exact_curve_is_recovered() {
        let config = ContrastConfig::default();
        let (grid, _) = config.grid();
        for (truth, start, free) in [
            (
                CorrelationModel::power_exponential(27.0, 1.312).unwrap(),
                CorrelationModel::power_exponential(10.0, 1.312).unwrap(),
                FreeParams::Decay,
            ),
            (
                CorrelationModel::power_exponential(27.0, 1.312).unwrap(),
                CorrelationModel::power_exponential(10.0, 1.0).unwrap(),
                FreeParams::DecayExponent,
            ),
            (
                CorrelationModel::matern(0.05, 3.0).unwrap(),
                CorrelationModel::matern(0.1, 3.0).unwrap(),
                FreeParams::Range,
            ),
        ] {
            let exact = k_theory_lgcp(&truth, 3.5, &grid).unwrap();
            let cfg = ContrastConfig { free, ..config.clone() };
            let fit = min_contrast_curve(&exact, &start, 1.0, &cfg).unwrap();
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * b.abs();
            match (fit.model, truth) {
                (
                    CorrelationModel::PowerExponential { decay, exponent },
                    CorrelationModel::PowerExponential { decay: d0, exponent: e0 },
                ) => assert!(close(decay, d0) && close(exponent, e0), "{fit:?}"),
                (CorrelationModel::Matern { range, .. }, CorrelationModel::Matern { range: r0, .. }) => {
                    assert!(close(range, r0), "{fit:?}")
                }
                _ => unreachable!(),
            }
            assert!(close(fit.sigma2, 3.5), "{fit:?}");
            assert!(fit.contrast <= fit.initial_contrast);
        }
    }

    #[test]
    fn family_mismatch_is_rejected() {
        let config = ContrastConfig { free: FreeParams::Range, ..Default::default() };
        let (grid, _) = config.grid();
        let curve = k_theory_lgcp(&CorrelationModel::matern(0.05, 1.0).unwrap(), 1.0, &grid).unwrap();
        let start = CorrelationModel::power_exponential(10.0, 1.0).unwrap();
        assert!(min_contrast_curve(&curve, &start, 1.0, &config).is_err());
    }

    fn arb_pattern() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..60)
    }

    proptest! {
        #[test]
        fn l_and_k_are_consistent(points in arb_pattern()) {
            let p = PointPattern::new(points, Rect::UNIT).unwrap();
            let k = k_hat(&p, &default_rgrid(), Rect::UNIT).unwrap();
            let l = k.to_l();
            for (kv, lv) in k.values.iter().zip(&l.values) {
                prop_assert!((lv * lv * std::f64::consts::PI - kv).abs() <= 1e-12 * kv.max(1.0));
            }
        }

        #[test]
        fn permutation_and_translation_invariance(points in arb_pattern(), shift in -5.0f64..5.0) {
            let p = PointPattern::new(points.clone(), Rect::UNIT).unwrap();
            let k = k_hat(&p, &default_rgrid(), Rect::UNIT).unwrap();
            let mut rev = points.clone();
            rev.reverse();
            let kr = k_hat(&PointPattern::new(rev, Rect::UNIT).unwrap(), &default_rgrid(), Rect::UNIT).unwrap();
            let dom = Rect::new(shift, shift, shift + 1.0, shift + 1.0).unwrap();
            let moved: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x + shift, y + shift)).collect();
            let ks = k_hat(&PointPattern::new_unchecked(moved, dom), &default_rgrid(), dom).unwrap();
            for i in 0..k.values.len() {
                prop_assert!((k.values[i] - kr.values[i]).abs() <= 1e-12 * k.values[i].max(1.0));
                prop_assert!((k.values[i] - ks.values[i]).abs() <= 1e-9 * k.values[i].max(1.0));
            }
        }

        #[test]
        fn theory_increases_with_variance(s1 in 0.0f64..3.0, ds in 0.01f64..2.0, r in 0.01f64..0.3) {
            let corr = CorrelationModel::power_exponential(20.0, 1.3).unwrap();
            let a = k_theory_lgcp(&corr, s1, &[r]).unwrap().values[0];
            let b = k_theory_lgcp(&corr, s1 + ds, &[r]).unwrap().values[0];
            prop_assert!(b > a);
        }
    }
}
