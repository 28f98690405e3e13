//! Run configuration: TOML schema, validation, resolution into the
//! concrete model objects, and the built-in presets.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ensemble::{ladder, EnsembleOptions, GridSpec};
use crate::error::{Error, Result};
use crate::hazard::{
    CorrelationModel, GmpeCoefficients, GmpeDispersion, GmpeModel, RuptureScaling, Scenario,
};
use crate::inventory::{
    generate_synthetic_portfolio, load_inventory, pool_by_class, CapacityCorrelationSpec,
    FragilityDefaults, Portfolio, SyntheticSpec,
};
use crate::rfim::FitOptions;

/// Inventory loaded from a building CSV file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvPortfolioConfig {
    pub path: PathBuf,
    /// Fallback lognormal fragility for rows without explicit columns.
    pub frag_mu: Option<f64>,
    pub frag_beta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolingConfig {
    /// Strictly ascending construction-era breakpoints.
    pub era_breaks: Vec<i32>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PortfolioConfig {
    pub synthetic: Option<SyntheticSpec>,
    pub csv: Option<CsvPortfolioConfig>,
    /// Optional class pooling applied after loading.
    pub pooling: Option<PoolingConfig>,
    /// Structured capacity correlation; omitted means independent.
    pub capacity_correlation: Option<CapacityCorrelationSpec>,
}

/// Ground-motion model block: reference an external coefficient file or
/// override pieces of the built-in model inline. Mixing both is an error.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct GmpeConfig {
    pub file: Option<PathBuf>,
    pub coefficients: Option<GmpeCoefficients>,
    pub dispersion: Option<GmpeDispersion>,
    pub scaling: Option<RuptureScaling>,
}

impl GmpeConfig {
    pub fn resolve(&self, base_dir: &Path) -> Result<GmpeModel> {
        let inline = self.coefficients.is_some() || self.dispersion.is_some() || self.scaling.is_some();
        if let Some(file) = &self.file {
            if inline {
                return Err(Error::validation(
                    "gmpe.file and inline gmpe tables are mutually exclusive",
                ));
            }
            let path = if file.is_absolute() { file.clone() } else { base_dir.join(file) };
            return GmpeModel::load(&path);
        }
        let mut model = GmpeModel::default();
        if let Some(c) = self.coefficients {
            model.coefficients = c;
        }
        if let Some(d) = self.dispersion {
            model.dispersion = d;
        }
        if let Some(s) = self.scaling {
            model.scaling = s;
        }
        model.validate()?;
        Ok(model)
    }
}

/// One grid axis: an inclusive range with a step, or explicit values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisSpec {
    Range { lo: f64, hi: f64, step: f64 },
    Values { values: Vec<f64> },
}

impl AxisSpec {
    pub fn resolve(&self) -> Result<Vec<f64>> {
        match self {
            AxisSpec::Range { lo, hi, step } => ladder(*lo, *hi, *step),
            AxisSpec::Values { values } => {
                if values.is_empty() {
                    return Err(Error::validation("axis values must be nonempty"));
                }
                Ok(values.clone())
            }
        }
    }
}

fn default_temperature_axis() -> AxisSpec {
    AxisSpec::Values { values: vec![0.0] }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub mw: AxisSpec,
    pub sigma: AxisSpec,
    #[serde(default = "default_temperature_axis")]
    pub temperature: AxisSpec,
}

impl GridConfig {
    pub fn resolve(&self) -> Result<GridSpec> {
        let grid = GridSpec {
            mw: self.mw.resolve()?,
            sigma: self.sigma.resolve()?,
            temperature: self.temperature.resolve()?,
        };
        grid.validate()?;
        Ok(grid)
    }
}

/// Settings for the mean-field fit step.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub min_sigma: f64,
    pub ridge: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        let d = FitOptions::default();
        FitConfig { min_sigma: d.min_sigma, ridge: d.ridge }
    }
}

impl FitConfig {
    pub fn options(&self) -> FitOptions {
        FitOptions {
            min_sigma: self.min_sigma,
            ridge: self.ridge,
            ..FitOptions::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also write the per-realization sample table (large).
    pub samples: bool,
    /// Write occupancy heatmaps along both grid axes.
    pub heatmaps: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out"), samples: false, heatmaps: false }
    }
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Worker threads; 0 uses the rayon default.
    #[serde(default)]
    pub workers: usize,
    pub portfolio: PortfolioConfig,
    pub scenario: Scenario,
    #[serde(default)]
    pub gmpe: GmpeConfig,
    #[serde(default)]
    pub demand_correlation: CorrelationModel,
    pub grid: GridConfig,
    #[serde(default)]
    pub ensemble: EnsembleOptions,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_str_named(text: &str, origin: &Path) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::parse(origin, None, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str_named(&text, path)
    }

    /// Builds the portfolio: generation or load, pooling, correlation.
    pub fn build_portfolio(&self, base_dir: &Path) -> Result<Arc<Portfolio>> {
        let mut portfolio = match (&self.portfolio.synthetic, &self.portfolio.csv) {
            (Some(spec), None) => generate_synthetic_portfolio(spec, self.seed)?,
            (None, Some(csv)) => {
                let path = if csv.path.is_absolute() {
                    csv.path.clone()
                } else {
                    base_dir.join(&csv.path)
                };
                let defaults = match (csv.frag_mu, csv.frag_beta) {
                    (Some(mu), Some(beta)) => Some(FragilityDefaults { mu, beta }),
                    (None, None) => None,
                    _ => {
                        return Err(Error::validation(
                            "portfolio.csv needs both frag_mu and frag_beta or neither",
                        ));
                    }
                };
                load_inventory(&path, defaults)?
            }
            (Some(_), Some(_)) => {
                return Err(Error::validation(
                    "portfolio.synthetic and portfolio.csv are mutually exclusive",
                ));
            }
            (None, None) => {
                return Err(Error::validation(
                    "portfolio needs either a synthetic block or a csv block",
                ));
            }
        };
        if let Some(pooling) = &self.portfolio.pooling {
            portfolio = pool_by_class(&portfolio, &pooling.era_breaks)?;
        }
        if let Some(spec) = &self.portfolio.capacity_correlation {
            portfolio = portfolio.with_capacity_correlation(spec)?;
        }
        Ok(Arc::new(portfolio))
    }

    /// Canonical serialized form used for the manifest hash: the resolved
    /// in-memory configuration, not the file text, so formatting and
    /// comments never perturb the hash. Worker count and output location
    /// do not affect results and are normalized out.
    pub fn canonical_toml(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.workers = 0;
        canonical.output = OutputConfig::default();
        toml::to_string_pretty(&canonical)
            .map_err(|e| Error::numeric(format!("config serialization: {e}")))
    }
}

/// Built-in configurations. `desk` runs in seconds; `paper` is the
/// denser overnight-scale survey.
pub const PRESET_NAMES: [&str; 2] = ["desk", "paper"];

pub fn preset(name: &str) -> Result<RunConfig> {
    let text = match name {
        "desk" => include_str!("../presets/desk.toml"),
        "paper" => include_str!("../presets/paper.toml"),
        _ => {
            return Err(Error::validation(format!(
                "unknown preset '{name}'; available: {}",
                PRESET_NAMES.join(", ")
            )));
        }
    };
    RunConfig::from_str_named(text, Path::new(&format!("<preset {name}>")))
}
