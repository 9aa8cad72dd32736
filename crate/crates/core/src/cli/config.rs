//! Run configuration.
//!
//! A TOML file whose tables mirror the library configs. Every table and
//! field is optional; unknown keys are errors. `--set key.path=value`
//! overrides are applied to the parsed table before validation, with
//! `value` read as a TOML literal (bare words fall back to strings).

use serde::{Deserialize, Serialize};

use crate::correlation::{default_match_grid, match_power_to_matern, CorrelationModel};
use crate::error::{LgcpError, Result};
use crate::estimation::ContrastConfig;
use crate::geometry::{GridSpec, Rect};
use crate::hmc::HmcConfig;
use crate::posterior::{default_rho_upper, PriorSpec};
use crate::vb::VbConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n: usize,
    pub domain: Rect,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n: 32,
            domain: Rect::UNIT,
        }
    }
}

/// Generating model for `simulate` and `study`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthConfig {
    pub mu: f64,
    pub sigma2: f64,
    pub correlation: CorrelationModel,
    /// Patterns written by `simulate`.
    pub patterns: usize,
    /// Draw the field once and condition every pattern on it.
    pub fixed_field: bool,
}

impl Default for TruthConfig {
    fn default() -> Self {
        TruthConfig {
            mu: 5.0,
            sigma2: 3.5,
            correlation: CorrelationModel::Matern {
                range: 0.02,
                shape: 1.0,
            },
            patterns: 1,
            fixed_field: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecaySource {
    /// Minimum contrast on the observed pattern.
    Mincontrast,
    /// The fit correlation as given.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Power-exponential model used for fitting. When absent it is the
    /// truth itself (power exponential) or its least-squares match (Matérn).
    pub correlation: Option<CorrelationModel>,
    pub mask_likelihood: bool,
    /// Bound `rho` by `default_rho_upper` unless the prior sets its own.
    pub bound_rho: bool,
    /// Starting `sigma^2` for HMC and minimum contrast.
    pub sigma2_start: f64,
    /// Where VB takes its fixed decay from.
    pub vb_decay: DecaySource,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            correlation: None,
            mask_likelihood: true,
            bound_rho: true,
            sigma2_start: 1.0,
            vb_decay: DecaySource::Mincontrast,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpcConfig {
    pub r_max: f64,
    pub distances: usize,
    /// Use every `thin`-th HMC draw.
    pub thin: usize,
    /// Draws taken from the variational distribution.
    pub vb_draws: usize,
}

impl Default for PpcConfig {
    fn default() -> Self {
        PpcConfig {
            r_max: 0.25,
            distances: 20,
            thin: 1,
            vb_draws: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub replicates: usize,
    pub methods: Vec<String>,
    pub baseline: String,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            replicates: 20,
            methods: vec!["hmc".into(), "vb".into()],
            baseline: "hmc".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub truth: TruthConfig,
    pub fit: FitConfig,
    pub hmc: HmcConfig,
    pub hmc_prior: PriorSpec,
    pub vb: VbConfig,
    pub vb_prior: PriorSpec,
    pub mincontrast: ContrastConfig,
    pub ppc: PpcConfig,
    pub study: StudyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridConfig::default(),
            truth: TruthConfig::default(),
            fit: FitConfig::default(),
            hmc: HmcConfig::default(),
            hmc_prior: PriorSpec::flat(),
            vb: VbConfig::default(),
            vb_prior: PriorSpec::conjugate_default(),
            mincontrast: ContrastConfig::default(),
            ppc: PpcConfig::default(),
            study: StudyConfig::default(),
        }
    }
}

pub const METHODS: [&str; 2] = ["hmc", "vb"];

impl RunConfig {
    /// Parse TOML text and apply overrides.
    pub fn from_toml(text: &str, overrides: &[String]) -> std::result::Result<Self, String> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        apply_overrides(&mut table, overrides)?;
        table.try_into().map_err(|e: toml::de::Error| e.to_string())
    }

    /// Re-apply overrides to an already parsed config.
    pub fn with_overrides(&self, overrides: &[String]) -> std::result::Result<Self, String> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut table = toml::Table::try_from(self).map_err(|e| e.to_string())?;
        apply_overrides(&mut table, overrides)?;
        table.try_into().map_err(|e: toml::de::Error| e.to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        let t = &self.truth;
        if !t.mu.is_finite() || !(t.sigma2 >= 0.0 && t.sigma2.is_finite()) {
            return Err(LgcpError::invalid("truth: need finite mu and sigma2 >= 0"));
        }
        t.correlation.validate()?;
        if t.patterns == 0 {
            return Err(LgcpError::invalid("truth.patterns must be at least 1"));
        }
        if let Some(c) = &self.fit.correlation {
            c.validate()?;
            if !matches!(c, CorrelationModel::PowerExponential { .. }) {
                return Err(LgcpError::invalid("fit.correlation must be power exponential"));
            }
        }
        if !(self.fit.sigma2_start > 0.0 && self.fit.sigma2_start.is_finite()) {
            return Err(LgcpError::invalid("fit.sigma2_start must be positive"));
        }
        self.hmc.validate()?;
        self.hmc_prior.validate()?;
        self.vb.validate()?;
        self.vb_prior.validate()?;
        self.mincontrast.validate()?;
        let p = &self.ppc;
        if !(p.r_max > 0.0 && p.r_max.is_finite()) || p.distances == 0 || p.thin == 0 || p.vb_draws == 0 {
            return Err(LgcpError::invalid("ppc: need r_max > 0 and positive counts"));
        }
        let s = &self.study;
        if s.replicates == 0 || s.methods.is_empty() {
            return Err(LgcpError::invalid("study: need at least one replicate and one method"));
        }
        if let Some(m) = s.methods.iter().find(|m| !METHODS.contains(&m.as_str())) {
            return Err(LgcpError::invalid(format!("study: unknown method {m}; expected one of {METHODS:?}")));
        }
        if !s.methods.contains(&s.baseline) {
            return Err(LgcpError::invalid(format!("study: baseline {} is not among the methods", s.baseline)));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let d = self.grid.domain;
        GridSpec::with_domain(self.grid.n, Rect::new(d.x_min, d.y_min, d.x_max, d.y_max)?)
    }

    /// Power-exponential model used by the samplers.
    pub fn fit_correlation(&self) -> Result<CorrelationModel> {
        if let Some(c) = self.fit.correlation {
            return Ok(c);
        }
        match self.truth.correlation {
            c @ CorrelationModel::PowerExponential { .. } => Ok(c),
            CorrelationModel::Matern { range, shape } => {
                let m = match_power_to_matern(range, shape, &default_match_grid())?;
                CorrelationModel::power_exponential(m.decay, m.exponent)
            }
        }
    }

    /// HMC prior with the default decay bound filled in.
    pub fn hmc_prior_for(&self, grid: &GridSpec, exponent: f64) -> PriorSpec {
        let mut prior = self.hmc_prior;
        if self.fit.bound_rho && prior.rho_upper.is_none() {
            prior.rho_upper = Some(default_rho_upper(grid, exponent));
        }
        prior
    }
}

fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> std::result::Result<(), String> {
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| format!("override {item:?} is not of the form key.path=value"))?;
        let value = parse_value(raw.trim());
        let keys: Vec<&str> = path.trim().split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(format!("override {item:?} has an empty key"));
        }
        let mut node = &mut *table;
        for key in &keys[..keys.len() - 1] {
            let entry = node
                .entry(key.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| format!("override {item:?}: {key} is not a table"))?;
        }
        node.insert(keys[keys.len() - 1].to_string(), value);
    }
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
