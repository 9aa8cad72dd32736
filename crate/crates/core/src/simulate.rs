//! Gaussian random field draws on the torus and Poisson point patterns from
//! the induced piecewise-constant intensity.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LgcpError, Result};
use crate::geometry::{GridSpec, Rect, SpectralPower, TorusEmbedding};

/// Largest cell mean accepted by [`sample_pattern`].
pub const MAX_CELL_MEAN: f64 = 1e12;

/// Where a simulated pattern came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub stream: u64,
    pub generator: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    points: Vec<(f64, f64)>,
    domain: Rect,
    provenance: Option<Provenance>,
}

impl PointPattern {
    /// Fails if any point lies outside the closed domain.
    pub fn new(points: Vec<(f64, f64)>, domain: Rect) -> Result<Self> {
        for (index, &(x, y)) in points.iter().enumerate() {
            if !domain.contains(x, y) {
                return Err(LgcpError::PointOutsideDomain {
                    index,
                    x,
                    y,
                    domain: domain.to_string(),
                });
            }
        }
        Ok(Self::new_unchecked(points, domain))
    }

    pub fn new_unchecked(points: Vec<(f64, f64)>, domain: Rect) -> Self {
        PointPattern {
            points,
            domain,
            provenance: None,
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Log-intensity on the extended `m x m` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentField {
    n: usize,
    m: usize,
    values: Vec<f64>,
}

impl LatentField {
    pub fn new(n: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != m * m {
            return Err(LgcpError::LengthMismatch {
                expected: m * m,
                got: values.len(),
            });
        }
        if n > m {
            return Err(LgcpError::invalid(format!("window side {n} exceeds torus side {m}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LgcpError::NonFinite("latent field".into()));
        }
        Ok(LatentField { n, m, values })
    }

    /// Field defined on the window only; off-window cells are set to `fill`.
    pub fn from_window(n: usize, m: usize, window: &[f64], fill: f64) -> Result<Self> {
        if window.len() != n * n {
            return Err(LgcpError::LengthMismatch {
                expected: n * n,
                got: window.len(),
            });
        }
        let mut values = vec![fill; m * m];
        for (k, &v) in window.iter().enumerate() {
            values[(k / n) * m + k % n] = v;
        }
        Self::new(n, m, values)
    }

    /// Constant field over the whole torus.
    pub fn constant(n: usize, m: usize, value: f64) -> Result<Self> {
        Self::new(n, m, vec![value; m * m])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Window cells, row-major, length `n^2`.
    pub fn window(&self) -> Vec<f64> {
        (0..self.n * self.n)
            .map(|k| self.values[(k / self.n) * self.m + k % self.n])
            .collect()
    }
}

/// `mu 1 + sigma E^{1/2} gamma` with `gamma` iid standard normal.
pub fn sample_grf<R: Rng + ?Sized>(
    emb: &TorusEmbedding,
    mu: f64,
    sigma2: f64,
    rng: &mut R,
) -> Result<LatentField> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() || !mu.is_finite() {
        return Err(LgcpError::invalid(format!(
            "need finite mu and sigma2 >= 0, got mu = {mu}, sigma2 = {sigma2}"
        )));
    }
    let gamma: Vec<f64> = (0..emb.len()).map(|_| rng.sample(StandardNormal)).collect();
    field_from_gamma(emb, mu, sigma2, &gamma)
}

/// Deterministic map from a whitened vector to the field.
pub fn field_from_gamma(
    emb: &TorusEmbedding,
    mu: f64,
    sigma2: f64,
    gamma: &[f64],
) -> Result<LatentField> {
    let sigma = sigma2.sqrt();
    let values = if sigma == 0.0 {
        vec![mu; emb.len()]
    } else {
        emb.spectral_matvec(gamma, SpectralPower::Half)?
            .into_iter()
            .map(|v| mu + sigma * v)
            .collect()
    };
    LatentField::new(emb.n(), emb.m(), values)
}

/// Poisson counts per window cell, points uniform within each cell.
pub fn sample_pattern<R: Rng + ?Sized>(
    field: &LatentField,
    grid: &GridSpec,
    rng: &mut R,
) -> Result<PointPattern> {
    if field.n() != grid.n() {
        return Err(LgcpError::invalid(format!(
            "field built for n = {}, grid has n = {}",
            field.n(),
            grid.n()
        )));
    }
    let area = grid.cell_area();
    let window = field.window();
    let mut points = Vec::new();
    for (cell, &y) in window.iter().enumerate() {
        let mean = area * y.exp();
        if !mean.is_finite() || mean > MAX_CELL_MEAN {
            return Err(LgcpError::IntensityOverflow {
                cell,
                log_intensity: y,
            });
        }
        if mean <= 0.0 {
            continue;
        }
        let count = Poisson::new(mean)
            .map_err(|e| LgcpError::invalid(format!("Poisson mean {mean}: {e}")))?
            .sample(rng) as usize;
        let (x0, y0, x1, y1) = grid.cell_bounds(cell);
        for _ in 0..count {
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            points.push((x0 + u * (x1 - x0), y0 + v * (y1 - y0)));
        }
    }
    Ok(PointPattern::new_unchecked(points, grid.domain()))
}

/// `sum_window A exp(y_i)`.
pub fn expected_total_points(field: &LatentField, grid: &GridSpec) -> f64 {
    let area = grid.cell_area();
    field.window().iter().map(|y| area * y.exp()).sum()
}
