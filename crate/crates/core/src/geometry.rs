//! Grid discretization, point binning and the block-circulant torus embedding.
//!
//! An `n x n` window grid is embedded in an `m x m` torus with `m` the
//! smallest power of two satisfying `m >= 2(n - 1)`. The correlation matrix
//! `E` of the torus grid is block circulant, so it is diagonalized by the 2-D
//! DFT: `E = F diag(lambda) F^H` with `lambda` the DFT of the first row (the
//! "base"). Every product with a real power of `E` then costs two FFTs.
//!
//! Extended-grid cells are indexed row-major, `k = row * m + col`; window
//! cells are those with `row < n` and `col < n`.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationModel;
use crate::error::{LgcpError, Result};
use crate::simulate::PointPattern;

/// Relative threshold (against the largest eigenvalue) below which negative
/// embedding eigenvalues are clamped to zero instead of rejected.
pub const CLAMP_TOLERANCE: f64 = 1e-8;

/// Axis-aligned observation window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect {
        x_min: 0.0,
        y_min: 0.0,
        x_max: 1.0,
        y_max: 1.0,
    };

    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let r = Rect {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(LgcpError::NonFinite("domain bounds".into()));
        }
        if !(x_max > x_min && y_max > y_min) {
            return Err(LgcpError::invalid(format!("empty domain {r}")));
        }
        Ok(r)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Closed-rectangle membership.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

impl Default for Rect {
    fn default() -> Self {
        Rect::UNIT
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}] x [{}, {}]",
            self.x_min, self.x_max, self.y_min, self.y_max
        )
    }
}

/// Smallest power of two `m` with `m >= 2(n - 1)`.
pub fn extended_side(n: usize) -> usize {
    (2 * n.saturating_sub(1)).max(1).next_power_of_two()
}

/// The `n x n` discretization of a rectangular window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    n: usize,
    domain: Rect,
}

impl GridSpec {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_domain(n, Rect::UNIT)
    }

    pub fn with_domain(n: usize, domain: Rect) -> Result<Self> {
        if n < 2 {
            return Err(LgcpError::invalid(format!(
                "grid needs at least 2 cells per side, got {n}"
            )));
        }
        let domain = Rect::new(domain.x_min, domain.y_min, domain.x_max, domain.y_max)?;
        Ok(GridSpec { n, domain })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cells(&self) -> usize {
        self.n * self.n
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    pub fn cell_area(&self) -> f64 {
        self.domain.area() / (self.n * self.n) as f64
    }

    /// Cell side lengths `(hx, hy)`.
    pub fn spacing(&self) -> (f64, f64) {
        (
            self.domain.width() / self.n as f64,
            self.domain.height() / self.n as f64,
        )
    }

    pub fn extended_side(&self) -> usize {
        extended_side(self.n)
    }

    /// Centroid of window cell `k` (row-major, row along y).
    pub fn centroid(&self, k: usize) -> (f64, f64) {
        let (row, col) = (k / self.n, k % self.n);
        let (hx, hy) = self.spacing();
        (
            self.domain.x_min + (col as f64 + 0.5) * hx,
            self.domain.y_min + (row as f64 + 0.5) * hy,
        )
    }

    /// Bounds `(x0, y0, x1, y1)` of window cell `k`.
    pub fn cell_bounds(&self, k: usize) -> (f64, f64, f64, f64) {
        let (row, col) = (k / self.n, k % self.n);
        let (hx, hy) = self.spacing();
        let x0 = self.domain.x_min + col as f64 * hx;
        let y0 = self.domain.y_min + row as f64 * hy;
        (x0, y0, x0 + hx, y0 + hy)
    }

    /// Window cell containing `(x, y)`; points on the upper boundaries belong
    /// to the last cell of that axis. `None` outside the closed domain.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        if !self.domain.contains(x, y) {
            return None;
        }
        let (hx, hy) = self.spacing();
        let last = self.n - 1;
        let col = (((x - self.domain.x_min) / hx).floor() as usize).min(last);
        let row = (((y - self.domain.y_min) / hy).floor() as usize).min(last);
        Some(row * self.n + col)
    }

    /// Index on the `m x m` torus of window cell `k`.
    pub fn window_to_extended(&self, k: usize) -> usize {
        (k / self.n) * self.extended_side() + k % self.n
    }

    /// Per-cell counts over the window, row-major, length `n^2`.
    pub fn bin_window(&self, pattern: &PointPattern) -> Result<Vec<u32>> {
        let mut counts = vec![0u32; self.cells()];
        for (index, &(x, y)) in pattern.points().iter().enumerate() {
            let k = self
                .cell_of(x, y)
                .ok_or_else(|| LgcpError::PointOutsideDomain {
                    index,
                    x,
                    y,
                    domain: self.domain.to_string(),
                })?;
            counts[k] += 1;
        }
        Ok(counts)
    }
}

/// Dense `n^2 x n^2` correlation matrix of the window centroids.
pub fn window_correlation(grid: &GridSpec, corr: &CorrelationModel) -> DMatrix<f64> {
    let cells = grid.cells();
    let centroids: Vec<(f64, f64)> = (0..cells).map(|k| grid.centroid(k)).collect();
    DMatrix::from_fn(cells, cells, |i, j| {
        let (xi, yi) = centroids[i];
        let (xj, yj) = centroids[j];
        corr.eval((xi - xj).hypot(yi - yj))
    })
}

/// Observed counts on the extended grid (`m_i`), zero off the window.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCounts {
    n: usize,
    m: usize,
    counts: Vec<u32>,
    total: u64,
}

impl CellCounts {
    /// Lift window counts (length `n^2`, row-major) to the extended grid.
    pub fn from_window(n: usize, window: &[u32]) -> Result<Self> {
        if window.len() != n * n {
            return Err(LgcpError::LengthMismatch {
                expected: n * n,
                got: window.len(),
            });
        }
        let m = extended_side(n);
        let mut counts = vec![0u32; m * m];
        for (k, &c) in window.iter().enumerate() {
            counts[(k / n) * m + k % n] = c;
        }
        let total = window.iter().map(|&c| c as u64).sum();
        Ok(CellCounts {
            n,
            m,
            counts,
            total,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Window counts `n_i`, row-major, length `n^2`.
    pub fn window(&self) -> Vec<u32> {
        (0..self.n * self.n)
            .map(|k| self.counts[(k / self.n) * self.m + k % self.n])
            .collect()
    }
}

/// Count points per cell of the extended grid.
pub fn bin_points(
    pattern: &PointPattern,
    grid: &GridSpec,
    emb: &TorusEmbedding,
) -> Result<CellCounts> {
    if emb.n() != grid.n() {
        return Err(LgcpError::invalid(format!(
            "embedding built for n = {}, grid has n = {}",
            emb.n(),
            grid.n()
        )));
    }
    CellCounts::from_window(grid.n(), &grid.bin_window(pattern)?)
}

/// Exponent applied to the spectrum of `E` in [`TorusEmbedding::spectral_matvec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectralPower {
    /// `E v`
    One,
    /// `E^{1/2} v`
    Half,
    /// `E^{-1/2} v`, pseudo-inverse on clamped eigenvalues.
    NegHalf,
    /// `E* v` with `E*` the circulant matrix of base `d_j^delta e_j`
    /// (power-exponential family only); `-E*` is `dE/d(decay)`.
    Star,
}

/// Record of negative eigenvalues that were clamped to zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClampReport {
    pub clamped: usize,
    pub max_magnitude: f64,
}

#[derive(Clone)]
struct Fft2 {
    m: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(m: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            m,
            forward: planner.plan_fft_forward(m),
            inverse: planner.plan_fft_inverse(m),
        }
    }

    fn transpose(&self, data: &mut [Complex64]) {
        let m = self.m;
        for r in 0..m {
            for c in (r + 1)..m {
                data.swap(r * m + c, c * m + r);
            }
        }
    }

    fn run(&self, fft: &Arc<dyn Fft<f64>>, data: &mut [Complex64]) {
        // rustfft processes every length-m chunk of the buffer
        fft.process(data);
        self.transpose(data);
        fft.process(data);
        self.transpose(data);
    }

    fn forward(&self, data: &mut [Complex64]) {
        self.run(&self.forward, data);
    }

    /// Unnormalized inverse.
    fn inverse(&self, data: &mut [Complex64]) {
        self.run(&self.inverse, data);
    }
}

/// Block-circulant torus extension of the window correlation matrix.
///
/// Immutable after construction and cheap to clone (FFT plans and the
/// distance table are shared).
#[derive(Clone)]
pub struct TorusEmbedding {
    grid: GridSpec,
    m: usize,
    corr: CorrelationModel,
    base: Vec<f64>,
    eigenvalues: Vec<f64>,
    sqrt_eigenvalues: Vec<f64>,
    inv_sqrt_eigenvalues: Vec<f64>,
    star_eigenvalues: Option<Vec<f64>>,
    window_mask: Arc<Vec<bool>>,
    clamp: ClampReport,
    distances: Arc<Vec<f64>>,
    fft: Fft2,
}

impl fmt::Debug for TorusEmbedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusEmbedding")
            .field("n", &self.grid.n())
            .field("m", &self.m)
            .field("corr", &self.corr)
            .field("clamp", &self.clamp)
            .finish_non_exhaustive()
    }
}

impl TorusEmbedding {
    pub fn build(grid: &GridSpec, corr: &CorrelationModel) -> Result<Self> {
        corr.validate()?;
        let m = grid.extended_side();
        let (hx, hy) = grid.spacing();
        let mut distances = vec![0.0; m * m];
        for r in 0..m {
            let dy = r.min(m - r) as f64 * hy;
            for c in 0..m {
                let dx = c.min(m - c) as f64 * hx;
                distances[r * m + c] = dx.hypot(dy);
            }
        }
        let n = grid.n();
        let window_mask = (0..m * m).map(|k| k / m < n && k % m < n).collect();
        Self::assemble(
            *grid,
            m,
            *corr,
            Arc::new(distances),
            Arc::new(window_mask),
            Fft2::new(m),
        )
    }

    /// Same grid with a different correlation model, reusing the distance
    /// table and FFT plans.
    pub fn with_correlation(&self, corr: &CorrelationModel) -> Result<Self> {
        corr.validate()?;
        Self::assemble(
            self.grid,
            self.m,
            *corr,
            Arc::clone(&self.distances),
            Arc::clone(&self.window_mask),
            self.fft.clone(),
        )
    }

    fn assemble(
        grid: GridSpec,
        m: usize,
        corr: CorrelationModel,
        distances: Arc<Vec<f64>>,
        window_mask: Arc<Vec<bool>>,
        fft: Fft2,
    ) -> Result<Self> {
        let (base, star_base) = match corr {
            CorrelationModel::PowerExponential { decay, exponent } => {
                let mut base = Vec::with_capacity(m * m);
                let mut star = Vec::with_capacity(m * m);
                for &d in distances.iter() {
                    let dp = if d == 0.0 { 0.0 } else { d.powf(exponent) };
                    let e = (-decay * dp).exp();
                    base.push(e);
                    star.push(dp * e);
                }
                (base, Some(star))
            }
            CorrelationModel::Matern { .. } => {
                (distances.iter().map(|&d| corr.eval(d)).collect(), None)
            }
        };
        let real_spectrum = |values: &[f64]| {
            let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft.forward(&mut buf);
            buf.into_iter().map(|z| z.re).collect::<Vec<f64>>()
        };
        let mut eigenvalues = real_spectrum(&base);
        let max = eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if !max.is_finite() || max <= 0.0 || !min.is_finite() {
            return Err(LgcpError::NonFinite("embedding eigenvalues".into()));
        }
        let tol = CLAMP_TOLERANCE * max;
        if min < -tol {
            return Err(LgcpError::NotPositiveSemidefinite {
                m,
                min_eigenvalue: min,
                max_eigenvalue: max,
            });
        }
        let mut clamp = ClampReport::default();
        for l in eigenvalues.iter_mut() {
            if *l < 0.0 {
                clamp.clamped += 1;
                clamp.max_magnitude = clamp.max_magnitude.max(-*l);
                *l = 0.0;
            }
        }
        let sqrt_eigenvalues = eigenvalues.iter().map(|l| l.sqrt()).collect();
        let inv_sqrt_eigenvalues = eigenvalues
            .iter()
            .map(|&l| if l > 0.0 { 1.0 / l.sqrt() } else { 0.0 })
            .collect();
        let star_eigenvalues = star_base.map(|s| real_spectrum(&s));
        Ok(TorusEmbedding {
            grid,
            m,
            corr,
            base,
            eigenvalues,
            sqrt_eigenvalues,
            inv_sqrt_eigenvalues,
            star_eigenvalues,
            window_mask,
            clamp,
            distances,
            fft,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    /// Extended side length.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of extended cells, `m^2`.
    pub fn len(&self) -> usize {
        self.m * self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn correlation(&self) -> &CorrelationModel {
        &self.corr
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// Torus distance from cell 0 to each extended cell.
    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    /// Eigenvalues of `E` after clamping (all `>= 0`).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Eigenvalues `psi` of `E*`, power-exponential family only.
    pub fn star_eigenvalues(&self) -> Option<&[f64]> {
        self.star_eigenvalues.as_deref()
    }

    pub fn window_mask(&self) -> &[bool] {
        &self.window_mask
    }

    pub fn clamp_report(&self) -> ClampReport {
        self.clamp
    }

    /// Extended indices of the window cells, in window row-major order.
    pub fn window_indices(&self) -> Vec<usize> {
        (0..self.grid.cells())
            .map(|k| self.grid.window_to_extended(k))
            .collect()
    }

    /// Restrict an extended-grid vector to the window (row-major, `n^2`).
    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n * n).map(|k| v[(k / n) * self.m + k % n]).collect()
    }

    pub fn spectrum(&self, power: SpectralPower) -> Result<Cow<'_, [f64]>> {
        Ok(match power {
            SpectralPower::One => Cow::Borrowed(&self.eigenvalues),
            SpectralPower::Half => Cow::Borrowed(&self.sqrt_eigenvalues),
            SpectralPower::NegHalf => Cow::Borrowed(&self.inv_sqrt_eigenvalues),
            SpectralPower::Star => Cow::Borrowed(
                self.star_eigenvalues
                    .as_deref()
                    .ok_or(LgcpError::UnsupportedOperator("E*"))?,
            ),
        })
    }

    /// `F diag(spectrum^power) F^H v` via two FFTs.
    pub fn spectral_matvec(&self, v: &[f64], power: SpectralPower) -> Result<Vec<f64>> {
        self.check_input(v)?;
        let spectrum = self.spectrum(power)?;
        Ok(self.synthesize(self.transform(v), &spectrum))
    }

    /// Apply an arbitrary real multiplier on the DFT coefficients.
    pub fn apply_spectrum(&self, v: &[f64], multiplier: &[f64]) -> Result<Vec<f64>> {
        self.check_input(v)?;
        if multiplier.len() != self.len() {
            return Err(LgcpError::LengthMismatch {
                expected: self.len(),
                got: multiplier.len(),
            });
        }
        Ok(self.synthesize(self.transform(v), multiplier))
    }

    fn check_input(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.len() {
            return Err(LgcpError::LengthMismatch {
                expected: self.len(),
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(LgcpError::NonFinite("spectral_matvec input".into()));
        }
        Ok(())
    }

    /// Unnormalized 2-D DFT of a real extended-grid vector.
    pub fn transform(&self, v: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft.forward(&mut buf);
        buf
    }

    /// Real part of `IDFT(multiplier .* coeffs) / m^2`.
    ///
    /// The multipliers used here are real and even on the torus, so the
    /// imaginary residue is rounding noise and is dropped.
    pub fn synthesize(&self, mut coeffs: Vec<Complex64>, multiplier: &[f64]) -> Vec<f64> {
        for (c, &s) in coeffs.iter_mut().zip(multiplier) {
            *c *= s;
        }
        self.fft.inverse(&mut coeffs);
        let scale = 1.0 / self.len() as f64;
        debug_assert!({
            let re = coeffs.iter().fold(0.0f64, |a, z| a.max(z.re.abs()));
            let im = coeffs.iter().fold(0.0f64, |a, z| a.max(z.im.abs()));
            im <= 1e-8 * re.max(1e-300) + 1e-12
        });
        coeffs.into_iter().map(|z| z.re * scale).collect()
    }

    /// Materialize `E` (`m^2 x m^2`). Intended for small grids and validation.
    pub fn materialize(&self) -> DMatrix<f64> {
        Self::circulant(self.m, &self.base)
    }

    /// Materialize `E*` (power-exponential family only).
    pub fn materialize_star(&self) -> Result<DMatrix<f64>> {
        match self.corr {
            CorrelationModel::PowerExponential { exponent, .. } => {
                let star: Vec<f64> = self
                    .distances
                    .iter()
                    .zip(&self.base)
                    .map(|(&d, &e)| if d == 0.0 { 0.0 } else { d.powf(exponent) * e })
                    .collect();
                Ok(Self::circulant(self.m, &star))
            }
            CorrelationModel::Matern { .. } => Err(LgcpError::UnsupportedOperator("E*")),
        }
    }

    fn circulant(m: usize, base: &[f64]) -> DMatrix<f64> {
        let len = m * m;
        DMatrix::from_fn(len, len, |a, b| {
            let (r1, c1) = (a / m, a % m);
            let (r2, c2) = (b / m, b % m);
            base[((r2 + m - r1) % m) * m + (c2 + m - c1) % m]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pe(decay: f64, exponent: f64) -> CorrelationModel {
        CorrelationModel::PowerExponential { decay, exponent }
    }

    #[test]
    fn extended_side_is_minimal_power_of_two() {
        assert_eq!(extended_side(64), 128);
        assert_eq!(extended_side(32), 64);
        assert_eq!(extended_side(8), 16);
        assert_eq!(extended_side(4), 8);
        assert_eq!(extended_side(2), 2);
        for n in 2..200 {
            let m = extended_side(n);
            assert!(m.is_power_of_two() && m >= 2 * (n - 1));
            assert!(m / 2 < 2 * (n - 1) || m == 1);
        }
    }

    #[test]
    fn cell_area_and_centroids() {
        let g = GridSpec::with_domain(4, Rect::new(0.0, 0.0, 2.0, 3.0).unwrap()).unwrap();
        assert!((g.cell_area() - 6.0 / 16.0).abs() < 1e-15);
        for k in 0..g.cells() {
            let (x, y) = g.centroid(k);
            assert_eq!(g.cell_of(x, y), Some(k));
        }
        assert!(GridSpec::new(1).is_err());
    }

    #[test]
    fn binning_edge_cases() {
        let g = GridSpec::new(4).unwrap();
        let empty = PointPattern::new(vec![], Rect::UNIT).unwrap();
        let counts = g.bin_window(&empty).unwrap();
        assert!(counts.iter().all(|&c| c == 0));

        let g2 = GridSpec::new(2).unwrap();
        let one = PointPattern::new(vec![(0.3, 0.7)], Rect::UNIT).unwrap();
        // row = floor(0.7 * 2) = 1, col = floor(0.3 * 2) = 0
        assert_eq!(g2.bin_window(&one).unwrap(), vec![0, 0, 1, 0]);

        let corner = PointPattern::new(vec![(1.0, 1.0), (0.0, 0.0), (1.0, 0.0)], Rect::UNIT).unwrap();
        assert_eq!(g2.bin_window(&corner).unwrap(), vec![1, 1, 0, 1]);
    }

    #[test]
    fn binning_rejects_outside_points() {
        let g = GridSpec::new(4).unwrap();
        let pat = PointPattern::new_unchecked(vec![(0.5, 0.5), (1.2, 0.1)], Rect::UNIT);
        match g.bin_window(&pat) {
            Err(LgcpError::PointOutsideDomain { index, x, .. }) => {
                assert_eq!(index, 1);
                assert_eq!(x, 1.2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn counts_live_only_on_window() {
        let window: Vec<u32> = (0..16).collect();
        let c = CellCounts::from_window(4, &window).unwrap();
        assert_eq!(c.m(), 8);
        assert_eq!(c.total(), (0..16).sum::<u32>() as u64);
        assert_eq!(c.window(), window);
        let emb = TorusEmbedding::build(&GridSpec::new(4).unwrap(), &pe(5.0, 1.0)).unwrap();
        for (k, &v) in c.counts().iter().enumerate() {
            if !emb.window_mask()[k] {
                assert_eq!(v, 0);
            }
        }
        assert_eq!(emb.window_mask().iter().filter(|&&w| w).count(), 16);
    }

    #[test]
    fn base_starts_at_one_and_spectrum_is_nonnegative() {
        let emb = TorusEmbedding::build(&GridSpec::new(8).unwrap(), &pe(5.0, 1.0)).unwrap();
        assert_eq!(emb.base()[0], 1.0);
        assert!(emb.eigenvalues().iter().all(|&l| l >= 0.0));
        // DFT of a symmetric base is real
        let spec = emb.transform(emb.base());
        let max = spec.iter().fold(0.0f64, |a, z| a.max(z.norm()));
        assert!(spec.iter().all(|z| z.im.abs() <= 1e-8 * max));
    }

    #[test]
    fn near_delta_correlation_gives_identity() {
        let emb = TorusEmbedding::build(&GridSpec::new(4).unwrap(), &pe(1e6, 1.0)).unwrap();
        assert!(emb.base()[1..].iter().all(|&b| b.abs() < 1e-300));
        assert!(emb.eigenvalues().iter().all(|&l| (l - 1.0).abs() < 1e-12));
        let v: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
        let ev = emb.spectral_matvec(&v, SpectralPower::One).unwrap();
        for (a, b) in v.iter().zip(&ev) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn long_range_exponent_two_is_rejected() {
        // Gaussian correlation with range comparable to the torus is far from PSD.
        let res = TorusEmbedding::build(&GridSpec::new(8).unwrap(), &pe(0.5, 2.0));
        assert!(matches!(res, Err(LgcpError::NotPositiveSemidefinite { .. })));
    }

    #[test]
    fn matvec_rejects_bad_input() {
        let emb = TorusEmbedding::build(&GridSpec::new(4).unwrap(), &pe(5.0, 1.0)).unwrap();
        assert!(matches!(
            emb.spectral_matvec(&[1.0; 10], SpectralPower::One),
            Err(LgcpError::LengthMismatch { .. })
        ));
        let mut v = vec![0.0; 64];
        v[3] = f64::NAN;
        assert!(matches!(
            emb.spectral_matvec(&v, SpectralPower::One),
            Err(LgcpError::NonFinite(_))
        ));
        let mat = TorusEmbedding::build(
            &GridSpec::new(4).unwrap(),
            &CorrelationModel::Matern { range: 0.1, shape: 1.0 },
        )
        .unwrap();
        assert!(matches!(
            mat.spectral_matvec(&[0.0; 64], SpectralPower::Star),
            Err(LgcpError::UnsupportedOperator(_))
        ));
    }

    #[test]
    fn window_block_of_torus_matrix_is_window_correlation() {
        for n in [2usize, 3, 4, 6] {
            let grid = GridSpec::new(n).unwrap();
            let corr = pe(30.0, 1.0);
            let emb = TorusEmbedding::build(&grid, &corr).unwrap();
            let e = emb.materialize();
            let c = window_correlation(&grid, &corr);
            let idx = emb.window_indices();
            for i in 0..grid.cells() {
                for j in 0..grid.cells() {
                    assert!((e[(idx[i], idx[j])] - c[(i, j)]).abs() < 1e-14);
                }
            }
        }
    }
}
