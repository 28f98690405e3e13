//! Scenario shaking: rupture geometry, ground-motion median attenuation,
//! and spatially correlated demand sampling.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inventory::{Portfolio, Position};
use crate::linalg::correlation_factor;
use crate::rng::{self, stream_rng};

/// Epicenter location: geographic, projected into the portfolio frame on
/// use, or already in planar km for synthetic layouts.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Epicenter {
    LonLat { lon: f64, lat: f64 },
    Planar { x_km: f64, y_km: f64 },
}

/// One earthquake scenario. Strike is degrees clockwise from north; dip in
/// (0, 90]; ztor is the depth to the top of rupture in km. Rake is carried
/// for bookkeeping; the attenuation form used here does not consume it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub mw: f64,
    pub epicenter: Epicenter,
    pub strike_deg: f64,
    pub dip_deg: f64,
    pub rake_deg: f64,
    pub ztor_km: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(3.0..=9.0).contains(&self.mw) {
            return Err(Error::validation(format!(
                "scenario magnitude {} outside supported range [3, 9]",
                self.mw
            )));
        }
        if !(self.dip_deg > 0.0 && self.dip_deg <= 90.0) {
            return Err(Error::validation(format!(
                "dip {} must lie in (0, 90]",
                self.dip_deg
            )));
        }
        if !(self.ztor_km >= 0.0) {
            return Err(Error::validation(format!(
                "ztor {} must be >= 0",
                self.ztor_km
            )));
        }
        for (name, v) in [("strike", self.strike_deg), ("rake", self.rake_deg)] {
            if !v.is_finite() {
                return Err(Error::validation(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    /// Epicenter in the portfolio's planar frame. Geographic epicenters
    /// need a portfolio that kept its projection origin.
    pub fn planar_epicenter(&self, portfolio: &Portfolio) -> Result<Position> {
        self.planar_epicenter_at(portfolio.geo_origin())
    }

    fn planar_epicenter_at(&self, origin: Option<(f64, f64)>) -> Result<Position> {
        match self.epicenter {
            Epicenter::Planar { x_km, y_km } => Ok(Position { x_km, y_km }),
            Epicenter::LonLat { lon, lat } => match origin {
                Some((lon0, lat0)) => Ok(crate::inventory::project_lonlat(lon, lat, lon0, lat0)),
                None => Err(Error::validation(
                    "epicenter given as lon/lat but the portfolio has no geographic origin; \
                     use a planar epicenter or load the inventory from geographic coordinates",
                )),
            },
        }
    }

    /// Same geometry at a different magnitude; sweeps vary mw only.
    pub fn with_mw(&self, mw: f64) -> Scenario {
        Scenario { mw, ..*self }
    }
}

/// Attenuation coefficients: ln median = c0 + c1 (mw-6) + c2 (mw-6)^2
/// - c3 ln(r_rup + c4 exp(c5 mw)) + c6 ln(vs30/760).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmpeCoefficients {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
}

/// Inter-event (tau) and intra-event (phi) dispersion, natural-log units.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmpeDispersion {
    pub tau: f64,
    pub phi: f64,
}

/// Magnitude-to-rupture-dimension scaling: length = 10^(aL + bL mw) km,
/// width = 10^(aW + bW mw) km, optionally capped by a seismogenic depth.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuptureScaling {
    #[serde(rename = "aL")]
    pub a_l: f64,
    #[serde(rename = "bL")]
    pub b_l: f64,
    #[serde(rename = "aW")]
    pub a_w: f64,
    #[serde(rename = "bW")]
    pub b_w: f64,
    /// 0 disables the width cap.
    #[serde(default)]
    pub seismogenic_depth_km: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmpeModel {
    /// Informational tag naming the functional form.
    #[serde(default = "default_form")]
    pub form: String,
    pub coefficients: GmpeCoefficients,
    pub dispersion: GmpeDispersion,
    pub scaling: RuptureScaling,
}

fn default_form() -> String {
    "saturating-log-distance".to_string()
}

impl Default for GmpeModel {
    /// Generic active-crustal PGA-like coefficients; the scaling rows are
    /// the Wells-Coppersmith all-mechanism subsurface regressions.
    fn default() -> Self {
        GmpeModel {
            form: default_form(),
            coefficients: GmpeCoefficients {
                c0: 1.7,
                c1: 1.0,
                c2: -0.08,
                c3: 1.3,
                c4: 0.02,
                c5: 0.65,
                c6: -0.5,
            },
            dispersion: GmpeDispersion { tau: 0.35, phi: 0.55 },
            scaling: RuptureScaling {
                a_l: -2.44,
                b_l: 0.59,
                a_w: -1.01,
                b_w: 0.32,
                seismogenic_depth_km: 0.0,
            },
        }
    }
}

impl GmpeModel {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: GmpeModel =
            toml::from_str(&text).map_err(|e| Error::parse(path, None, e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.coefficients;
        for (name, v) in [
            ("c0", c.c0),
            ("c1", c.c1),
            ("c2", c.c2),
            ("c3", c.c3),
            ("c4", c.c4),
            ("c5", c.c5),
            ("c6", c.c6),
        ] {
            if !v.is_finite() {
                return Err(Error::validation(format!("gmpe coefficient {name} must be finite")));
            }
        }
        // c3 > 0 with c4 >= 0 makes the median strictly decreasing in
        // distance for every magnitude; weaker settings can fold back.
        if !(c.c3 > 0.0) {
            return Err(Error::validation("gmpe c3 must be positive (distance decay)"));
        }
        if c.c4 < 0.0 {
            return Err(Error::validation("gmpe c4 must be >= 0 (near-field saturation)"));
        }
        if self.dispersion.tau < 0.0 || self.dispersion.phi < 0.0 {
            return Err(Error::validation("gmpe tau and phi must be >= 0"));
        }
        if self.scaling.seismogenic_depth_km < 0.0 {
            return Err(Error::validation("seismogenic depth must be >= 0"));
        }
        Ok(())
    }
}

/// ln median intensity at one site.
pub fn gmpe_evaluate(model: &GmpeModel, mw: f64, r_rup: f64, vs30: f64) -> Result<f64> {
    if !(r_rup >= 0.0) {
        return Err(Error::validation(format!("r_rup {r_rup} must be >= 0")));
    }
    if !(vs30 > 0.0) {
        return Err(Error::validation(format!("vs30 {vs30} must be positive")));
    }
    let c = &model.coefficients;
    let dm = mw - 6.0;
    let reff = r_rup + c.c4 * (c.c5 * mw).exp();
    if !(reff > 0.0) {
        return Err(Error::numeric(format!(
            "effective distance {reff} is not positive; raise c4 or keep sites off the trace"
        )));
    }
    Ok(c.c0 + c.c1 * dm + c.c2 * dm * dm - c.c3 * reff.ln() + c.c6 * (vs30 / 760.0).ln())
}

/// Finite rupture: a surface trace segment centered on the epicenter, plus
/// the scaled length/width.
#[derive(Debug, Clone, Copy)]
pub struct RuptureGeometry {
    pub length_km: f64,
    pub width_km: f64,
    pub trace_start: Position,
    pub trace_end: Position,
    pub ztor_km: f64,
}

/// Builds the rupture geometry for a scenario in the portfolio frame.
pub fn rupture_geometry(
    scenario: &Scenario,
    scaling: &RuptureScaling,
    portfolio: &Portfolio,
) -> Result<RuptureGeometry> {
    rupture_geometry_at(scenario, scaling, portfolio.geo_origin())
}

fn rupture_geometry_at(
    scenario: &Scenario,
    scaling: &RuptureScaling,
    origin: Option<(f64, f64)>,
) -> Result<RuptureGeometry> {
    scenario.validate()?;
    let length = 10f64.powf(scaling.a_l + scaling.b_l * scenario.mw);
    let mut width = 10f64.powf(scaling.a_w + scaling.b_w * scenario.mw);
    if scaling.seismogenic_depth_km > 0.0 {
        let dip_rad = scenario.dip_deg.to_radians();
        let cap = (scaling.seismogenic_depth_km - scenario.ztor_km) / dip_rad.sin();
        if !(cap > 0.0) {
            return Err(Error::validation(format!(
                "ztor {} reaches the seismogenic depth {}; no rupture width available",
                scenario.ztor_km, scaling.seismogenic_depth_km
            )));
        }
        width = width.min(cap);
    }
    let epi = scenario.planar_epicenter_at(origin)?;
    // Strike measured clockwise from north: unit vector (sin, cos).
    let strike = scenario.strike_deg.to_radians();
    let (ux, uy) = (strike.sin(), strike.cos());
    let half = 0.5 * length;
    Ok(RuptureGeometry {
        length_km: length,
        width_km: width,
        trace_start: Position {
            x_km: epi.x_km - half * ux,
            y_km: epi.y_km - half * uy,
        },
        trace_end: Position {
            x_km: epi.x_km + half * ux,
            y_km: epi.y_km + half * uy,
        },
        ztor_km: scenario.ztor_km,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceDistances {
    /// Horizontal distance to the surface trace segment (Joyner-Boore), km.
    pub r_jb: f64,
    /// Slant distance including the depth to top of rupture, km.
    pub r_rup: f64,
}

/// Distances from one site to the rupture.
pub fn source_to_site_distance(rupture: &RuptureGeometry, site: &Position) -> SourceDistances {
    let ax = rupture.trace_start.x_km;
    let ay = rupture.trace_start.y_km;
    let bx = rupture.trace_end.x_km;
    let by = rupture.trace_end.y_km;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((site.x_km - ax) * dx + (site.y_km - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let px = ax + t * dx;
    let py = ay + t * dy;
    let r_jb = ((site.x_km - px).powi(2) + (site.y_km - py).powi(2)).sqrt();
    let r_rup = (r_jb * r_jb + rupture.ztor_km * rupture.ztor_km).sqrt();
    SourceDistances { r_jb, r_rup }
}

/// Intra-event spatial correlation of ln demands: exp(-3 h / range).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelationModel {
    pub range_km: f64,
}

impl Default for CorrelationModel {
    fn default() -> Self {
        CorrelationModel { range_km: 8.5 }
    }
}

impl CorrelationModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.range_km > 0.0) || !self.range_km.is_finite() {
            return Err(Error::validation(format!(
                "demand correlation range must be positive, got {}",
                self.range_km
            )));
        }
        Ok(())
    }
}

/// Pairwise intra-event correlation matrix over sites.
pub fn demand_correlation_matrix(
    positions: &[Position],
    model: &CorrelationModel,
) -> Result<DMatrix<f64>> {
    model.validate()?;
    let n = positions.len();
    let mut m = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let h = positions[i].distance(&positions[j]);
            let v = (-3.0 * h / model.range_km).exp();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Site-geometry part of the demand model, reusable across an entire
/// sweep: the factorized intra-event correlation is independent of
/// magnitude, so it is built once and shared by every grid cell.
#[derive(Debug, Clone)]
pub struct DemandFieldBasis {
    factor: Arc<DMatrix<f64>>,
    positions: Vec<Position>,
    vs30: Vec<f64>,
    origin: Option<(f64, f64)>,
}

impl DemandFieldBasis {
    pub fn new(portfolio: &Portfolio, corr: &CorrelationModel) -> Result<Self> {
        let positions = portfolio.positions();
        let matrix = demand_correlation_matrix(&positions, corr)?;
        let factor = Arc::new(correlation_factor(&matrix)?);
        let vs30 = portfolio.buildings().iter().map(|b| b.vs30).collect();
        Ok(DemandFieldBasis {
            factor,
            positions,
            vs30,
            origin: portfolio.geo_origin(),
        })
    }

    /// Builds the per-scenario sampler: rupture trace, distances, and
    /// medians are scenario-specific; the correlation factor is shared.
    pub fn sampler(&self, scenario: &Scenario, model: &GmpeModel) -> Result<DemandSampler> {
        let rupture = rupture_geometry_at(scenario, &model.scaling, self.origin)?;
        let ln_medians = self
            .positions
            .iter()
            .zip(&self.vs30)
            .map(|(p, &v)| {
                let d = source_to_site_distance(&rupture, p);
                gmpe_evaluate(model, scenario.mw, d.r_rup, v)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(DemandSampler {
            ln_medians,
            factor: Arc::clone(&self.factor),
            tau: model.dispersion.tau,
            phi: model.dispersion.phi,
        })
    }

    pub fn factor(&self) -> &Arc<DMatrix<f64>> {
        &self.factor
    }
}

/// Ready-to-draw demand model for one scenario: per-site ln medians plus
/// shared inter-event and correlated intra-event terms.
#[derive(Debug, Clone)]
pub struct DemandSampler {
    ln_medians: Vec<f64>,
    factor: Arc<DMatrix<f64>>,
    tau: f64,
    phi: f64,
}

impl DemandSampler {
    pub fn new(
        portfolio: &Portfolio,
        scenario: &Scenario,
        model: &GmpeModel,
        corr: &CorrelationModel,
    ) -> Result<Self> {
        DemandFieldBasis::new(portfolio, corr)?.sampler(scenario, model)
    }

    pub fn ln_medians(&self) -> &[f64] {
        &self.ln_medians
    }

    /// Draws one demand field (linear intensity units) into `out`.
    /// Draw order: inter-event scalar first, then the site vector.
    pub fn sample_into<R: Rng>(&self, rng: &mut R, scratch: &mut Vec<f64>, out: &mut Vec<f64>) {
        let n = self.ln_medians.len();
        let eta: f64 = self.tau * rng.sample::<f64, _>(StandardNormal);
        scratch.clear();
        scratch.extend((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        out.clear();
        let l = self.factor.as_ref();
        for i in 0..n {
            let mut z = 0.0;
            for j in 0..=i {
                z += l[(i, j)] * scratch[j];
            }
            out.push((self.ln_medians[i] + eta + self.phi * z).exp());
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut scratch = Vec::new();
        let mut out = Vec::new();
        self.sample_into(rng, &mut scratch, &mut out);
        out
    }
}

/// One-shot correlated demand draw for a scenario against a portfolio.
pub fn sample_demand_field(
    portfolio: &Portfolio,
    scenario: &Scenario,
    model: &GmpeModel,
    corr: &CorrelationModel,
    seed: u64,
) -> Result<Vec<f64>> {
    let sampler = DemandSampler::new(portfolio, scenario, model, corr)?;
    let mut rng = stream_rng(seed, rng::role::DEMAND);
    Ok(sampler.sample(&mut rng))
}
