//! Building portfolios: fragility marginals, spatial layout, capacity
//! correlation, and quenched diversity perturbations.

mod correlation;
mod load;
mod pooling;
mod sampling;
mod synthetic;

pub use correlation::{build_capacity_correlation, CapacityCorrelationSpec};
pub use load::{load_inventory, project_lonlat, FragilityDefaults};
pub use pooling::pool_by_class;
pub use sampling::{sample_capacities, CapacityMode, CapacitySampler};
pub use synthetic::{generate_synthetic_portfolio, ClassSpec, LayoutKind, SyntheticSpec, ValueDist};

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numeric::{normal_cdf, normal_quantile, sample_std};
use crate::rng::{self, stream_rng};

/// Site coordinates in the portfolio's local planar frame, kilometers.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Position {
    pub x_km: f64,
    pub y_km: f64,
}

impl Position {
    pub fn distance(&self, other: &Position) -> f64 {
        let dx = self.x_km - other.x_km;
        let dy = self.y_km - other.y_km;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Capacity distribution of a single building, in ln intensity units.
/// The capacity is the shaking level at which the building crosses the
/// damage threshold; the marginal captures record-to-record variability.
#[derive(Debug, Clone)]
pub enum FragilityMarginal {
    /// ln-capacity ~ Normal(mu, beta^2).
    Lognormal { mu: f64, beta: f64 },
    /// Gaussian kernel density over observed ln-capacities.
    Kde(KdeFragility),
}

#[derive(Debug, Clone)]
pub struct KdeFragility {
    ln_samples: Vec<f64>,
    bandwidth: f64,
}

impl KdeFragility {
    /// Builds a KDE marginal from ln-capacity observations. When no
    /// bandwidth is given, Silverman's rule 1.06 * s * n^(-1/5) is used.
    pub fn from_ln_samples(ln_samples: Vec<f64>, bandwidth: Option<f64>) -> Result<Self> {
        if ln_samples.len() < 2 {
            return Err(Error::validation(
                "KDE fragility needs at least 2 capacity samples",
            ));
        }
        if ln_samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::validation("KDE fragility sample is not finite"));
        }
        let bandwidth = match bandwidth {
            Some(h) => h,
            None => {
                let s = sample_std(&ln_samples);
                1.06 * s * (ln_samples.len() as f64).powf(-0.2)
            }
        };
        if !(bandwidth > 0.0) {
            return Err(Error::validation(format!(
                "KDE bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(KdeFragility {
            ln_samples,
            bandwidth,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn ln_samples(&self) -> &[f64] {
        &self.ln_samples
    }

    fn cdf_ln(&self, x: f64, shift: f64) -> f64 {
        let inv_h = 1.0 / self.bandwidth;
        let mut acc = 0.0;
        for &s in &self.ln_samples {
            acc += normal_cdf((x - s - shift) * inv_h);
        }
        acc / self.ln_samples.len() as f64
    }

    /// Inverse of the KDE CDF in ln space, by bisection on the monotone CDF.
    fn quantile_ln(&self, p: f64, shift: f64) -> f64 {
        let p = p.clamp(1e-300, 1.0 - 1e-16);
        let lo_s = self.ln_samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi_s = self
            .ln_samples
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        // 40 bandwidths covers any p representable in f64.
        let mut lo = lo_s + shift - 40.0 * self.bandwidth;
        let mut hi = hi_s + shift + 40.0 * self.bandwidth;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf_ln(mid, shift) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

impl FragilityMarginal {
    pub fn validate(&self) -> Result<()> {
        match self {
            FragilityMarginal::Lognormal { mu, beta } => {
                if !mu.is_finite() {
                    return Err(Error::validation("fragility mu is not finite"));
                }
                if !(*beta > 0.0) || !beta.is_finite() {
                    return Err(Error::validation(format!(
                        "fragility beta must be positive, got {beta}"
                    )));
                }
                Ok(())
            }
            FragilityMarginal::Kde(_) => Ok(()),
        }
    }

    /// P(capacity <= im) with the median shifted by `shift` in ln space.
    /// `im` is a linear intensity and must be positive.
    pub fn probability_shifted(&self, im: f64, shift: f64) -> Result<f64> {
        if !(im > 0.0) || !im.is_finite() {
            return Err(Error::validation(format!(
                "intensity must be positive and finite, got {im}"
            )));
        }
        let x = im.ln();
        Ok(match self {
            FragilityMarginal::Lognormal { mu, beta } => normal_cdf((x - mu - shift) / beta),
            FragilityMarginal::Kde(k) => k.cdf_ln(x, shift),
        })
    }

    /// Damage probability at intensity `im` (no diversity shift).
    pub fn probability(&self, im: f64) -> Result<f64> {
        self.probability_shifted(im, 0.0)
    }

    /// Quantile of ln-capacity at level `p`, shifted marginal.
    pub fn ln_quantile(&self, p: f64, shift: f64) -> f64 {
        match self {
            FragilityMarginal::Lognormal { mu, beta } => {
                mu + shift + beta * normal_quantile(p.clamp(1e-300, 1.0 - 1e-16))
            }
            FragilityMarginal::Kde(k) => k.quantile_ln(p, shift),
        }
    }

    /// Median ln-capacity of the shifted marginal.
    pub fn ln_median(&self, shift: f64) -> f64 {
        match self {
            FragilityMarginal::Lognormal { mu, .. } => mu + shift,
            FragilityMarginal::Kde(k) => k.quantile_ln(0.5, shift),
        }
    }

    /// Dispersion proxy: beta for lognormal, sample std of the ln-capacity
    /// observations for KDE. Used by class pooling as a fallback width.
    pub fn ln_dispersion(&self) -> f64 {
        match self {
            FragilityMarginal::Lognormal { beta, .. } => *beta,
            FragilityMarginal::Kde(k) => sample_std(&k.ln_samples),
        }
    }
}

/// Convenience wrapper matching the module-level operation name.
pub fn fragility_probability(fragility: &FragilityMarginal, im: f64) -> Result<f64> {
    fragility.probability(im)
}

#[derive(Debug, Clone)]
pub struct Building {
    pub id: String,
    pub position: Position,
    pub stories: u32,
    pub year_built: i32,
    pub structure_class: String,
    pub occupancy: String,
    /// Site shear-wave velocity, m/s.
    pub vs30: f64,
    pub replacement_cost: f64,
    pub fragility: FragilityMarginal,
}

impl Building {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::validation("building id must not be empty"));
        }
        if !(self.vs30 > 0.0) {
            return Err(Error::validation(format!(
                "building {}: vs30 must be positive, got {}",
                self.id, self.vs30
            )));
        }
        if !(self.replacement_cost > 0.0) || !self.replacement_cost.is_finite() {
            return Err(Error::validation(format!(
                "building {}: replacement_cost must be positive, got {}",
                self.id, self.replacement_cost
            )));
        }
        if !self.position.x_km.is_finite() || !self.position.y_km.is_finite() {
            return Err(Error::validation(format!(
                "building {}: position is not finite",
                self.id
            )));
        }
        self.fragility.validate().map_err(|e| {
            Error::validation(format!("building {}: {e}", self.id))
        })
    }
}

/// A validated building inventory plus its capacity correlation matrix.
/// The correlation starts as the identity; `with_capacity_correlation`
/// installs a structured one.
#[derive(Debug, Clone)]
pub struct Portfolio {
    buildings: Vec<Building>,
    capacity_corr: DMatrix<f64>,
    /// (lon, lat) of the projection origin when positions came from
    /// geographic coordinates; None for portfolios built directly in km.
    geo_origin: Option<(f64, f64)>,
}

impl Portfolio {
    pub fn new(buildings: Vec<Building>) -> Result<Self> {
        Self::with_origin(buildings, None)
    }

    pub fn with_origin(buildings: Vec<Building>, geo_origin: Option<(f64, f64)>) -> Result<Self> {
        if buildings.is_empty() {
            return Err(Error::validation("portfolio must contain buildings"));
        }
        let mut seen = std::collections::HashSet::new();
        for b in &buildings {
            b.validate()?;
            if !seen.insert(b.id.clone()) {
                return Err(Error::validation(format!("duplicate building id {}", b.id)));
            }
        }
        let n = buildings.len();
        Ok(Portfolio {
            buildings,
            capacity_corr: DMatrix::identity(n, n),
            geo_origin,
        })
    }

    pub fn len(&self) -> usize {
        self.buildings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buildings.is_empty()
    }

    pub fn buildings(&self) -> &[Building] {
        &self.buildings
    }

    pub fn capacity_corr(&self) -> &DMatrix<f64> {
        &self.capacity_corr
    }

    pub fn geo_origin(&self) -> Option<(f64, f64)> {
        self.geo_origin
    }

    /// Installs a capacity correlation matrix. The matrix is validated and
    /// PSD-repaired (eigenvalue clipping, unit-diagonal rescale).
    pub fn set_capacity_correlation(&mut self, corr: DMatrix<f64>) -> Result<()> {
        if corr.nrows() != self.len() {
            return Err(Error::validation(format!(
                "correlation is {}x{} but portfolio has {} buildings",
                corr.nrows(),
                corr.ncols(),
                self.len()
            )));
        }
        crate::linalg::validate_correlation(&corr)?;
        self.capacity_corr = crate::linalg::psd_repair(&corr)?;
        Ok(())
    }

    /// Builds the class-and-distance structured correlation and installs it.
    pub fn with_capacity_correlation(mut self, spec: &CapacityCorrelationSpec) -> Result<Self> {
        let corr = build_capacity_correlation(&self, spec)?;
        self.capacity_corr = corr;
        Ok(self)
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.buildings[i].position.distance(&self.buildings[j].position)
    }

    /// Largest pairwise site distance, km.
    pub fn diameter(&self) -> f64 {
        let mut d = 0.0_f64;
        for i in 0..self.len() {
            for j in 0..i {
                d = d.max(self.distance(i, j));
            }
        }
        d
    }

    pub fn positions(&self) -> Vec<Position> {
        self.buildings.iter().map(|b| b.position).collect()
    }

    pub fn total_replacement_cost(&self) -> f64 {
        self.buildings.iter().map(|b| b.replacement_cost).sum()
    }
}

/// One quenched draw of the structural-diversity perturbation: per-building
/// ln-median shifts epsilon_i ~ N(0, sigma^2), frozen while demand and
/// capacity randomness vary realization to realization.
#[derive(Debug, Clone)]
pub struct PortfolioRealization {
    portfolio: Arc<Portfolio>,
    sigma: f64,
    shifts: Vec<f64>,
}

impl PortfolioRealization {
    pub fn portfolio(&self) -> &Arc<Portfolio> {
        &self.portfolio
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn shifts(&self) -> &[f64] {
        &self.shifts
    }

    /// Shifted median ln-capacities, one per building.
    pub fn ln_medians(&self) -> Vec<f64> {
        self.portfolio
            .buildings()
            .iter()
            .zip(&self.shifts)
            .map(|(b, &s)| b.fragility.ln_median(s))
            .collect()
    }
}

/// Draws the diversity shifts for one replica. `sigma = 0` produces exact
/// zeros so the unperturbed portfolio is reproduced bit for bit.
pub fn apply_diversity(
    portfolio: &Arc<Portfolio>,
    sigma: f64,
    seed: u64,
) -> Result<PortfolioRealization> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::validation(format!(
            "diversity sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let n = portfolio.len();
    let shifts = if sigma == 0.0 {
        vec![0.0; n]
    } else {
        let mut rng = stream_rng(seed, rng::role::DIVERSITY);
        let dist = Normal::new(0.0, sigma).expect("sigma validated above");
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    };
    Ok(PortfolioRealization {
        portfolio: Arc::clone(portfolio),
        sigma,
        shifts,
    })
}

/// Uniform integer in [lo, hi] from the shared stream; lo == hi short-circuits
/// so degenerate ranges draw nothing.
pub(crate) fn draw_int_range<R: Rng>(rng: &mut R, lo: i64, hi: i64) -> i64 {
    if lo >= hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}
