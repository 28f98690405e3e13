use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream_rng};

use super::{draw_int_range, Building, FragilityMarginal, Portfolio, Position};

/// Scalar sampling rule used for synthetic building attributes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ValueDist {
    Fixed { value: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Lognormal given ln-space location and scale.
    Lognormal { mu: f64, beta: f64 },
}

impl ValueDist {
    fn validate(&self, what: &str) -> Result<()> {
        let ok = match self {
            ValueDist::Fixed { value } => value.is_finite(),
            ValueDist::Normal { mean, sd } => mean.is_finite() && *sd >= 0.0 && sd.is_finite(),
            ValueDist::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            ValueDist::Lognormal { mu, beta } => mu.is_finite() && *beta >= 0.0 && beta.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid {what} distribution: {self:?}")))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            ValueDist::Fixed { value } => *value,
            ValueDist::Normal { mean, sd } => {
                if *sd == 0.0 {
                    *mean
                } else {
                    Normal::new(*mean, *sd).expect("validated").sample(rng)
                }
            }
            ValueDist::Uniform { lo, hi } => {
                if lo == hi {
                    *lo
                } else {
                    rng.random_range(*lo..*hi)
                }
            }
            ValueDist::Lognormal { mu, beta } => {
                if *beta == 0.0 {
                    mu.exp()
                } else {
                    (mu + beta * Normal::new(0.0, 1.0).unwrap().sample(rng)).exp()
                }
            }
        }
    }
}

/// One structural class in a synthetic portfolio, with its sampling weight
/// and fragility parameter distributions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub weight: f64,
    pub mu: ValueDist,
    pub beta: ValueDist,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutKind {
    /// Uniform random positions in the extent box.
    #[default]
    Uniform,
    /// Regular grid filling the extent box row-major.
    Grid,
}

/// Recipe for a synthetic portfolio laid out in the local planar frame,
/// centered on `origin_km`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub count: usize,
    #[serde(default)]
    pub layout: LayoutKind,
    /// Box size (east-west, north-south), km.
    pub extent_km: (f64, f64),
    #[serde(default)]
    pub origin_km: (f64, f64),
    pub classes: Vec<ClassSpec>,
    #[serde(default = "default_stories")]
    pub stories: (u32, u32),
    #[serde(default = "default_years")]
    pub year_range: (i32, i32),
    #[serde(default = "default_vs30")]
    pub vs30: f64,
    #[serde(default = "default_cost")]
    pub cost: ValueDist,
    #[serde(default = "default_occupancy")]
    pub occupancy: String,
}

fn default_stories() -> (u32, u32) {
    (1, 3)
}
fn default_years() -> (i32, i32) {
    (1950, 2010)
}
fn default_vs30() -> f64 {
    760.0
}
fn default_cost() -> ValueDist {
    ValueDist::Fixed { value: 1.0 }
}
fn default_occupancy() -> String {
    "residential".to_string()
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::validation("synthetic portfolio count must be > 0"));
        }
        if !(self.extent_km.0 > 0.0 && self.extent_km.1 > 0.0) {
            return Err(Error::validation("synthetic extent must be positive"));
        }
        if self.classes.is_empty() {
            return Err(Error::validation("synthetic portfolio needs >= 1 class"));
        }
        let total_weight: f64 = self.classes.iter().map(|c| c.weight).sum();
        if !(total_weight > 0.0) {
            return Err(Error::validation("class weights must sum to > 0"));
        }
        for c in &self.classes {
            if c.weight < 0.0 {
                return Err(Error::validation(format!(
                    "class {} has negative weight",
                    c.name
                )));
            }
            c.mu.validate(&format!("class {} mu", c.name))?;
            c.beta.validate(&format!("class {} beta", c.name))?;
        }
        self.cost.validate("cost")?;
        if self.stories.0 > self.stories.1 || self.stories.0 == 0 {
            return Err(Error::validation("stories range must satisfy 1 <= lo <= hi"));
        }
        if self.year_range.0 > self.year_range.1 {
            return Err(Error::validation("year range lo must be <= hi"));
        }
        if !(self.vs30 > 0.0) {
            return Err(Error::validation("vs30 must be positive"));
        }
        Ok(())
    }
}

/// Generates a synthetic portfolio. All attribute draws come from one
/// seeded stream in building order, so equal (spec, seed) pairs reproduce
/// the same portfolio exactly.
pub fn generate_synthetic_portfolio(spec: &SyntheticSpec, seed: u64) -> Result<Portfolio> {
    spec.validate()?;
    let mut rng_stream = stream_rng(seed, rng::role::PORTFOLIO);
    let rng = &mut rng_stream;
    let (ex, ey) = spec.extent_km;
    let (ox, oy) = spec.origin_km;
    let total_weight: f64 = spec.classes.iter().map(|c| c.weight).sum();

    // Grid layout dimensions: squarish, row-major fill.
    let nx = (spec.count as f64).sqrt().ceil() as usize;
    let ny = spec.count.div_ceil(nx);

    let mut buildings = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let position = match spec.layout {
            LayoutKind::Uniform => Position {
                x_km: ox + rng.random_range(-0.5..0.5) * ex,
                y_km: oy + rng.random_range(-0.5..0.5) * ey,
            },
            LayoutKind::Grid => {
                let col = i % nx;
                let row = i / nx;
                // Cell centers; a single row or column sits on the axis.
                let fx = if nx > 1 { (col as f64 + 0.5) / nx as f64 - 0.5 } else { 0.0 };
                let fy = if ny > 1 { (row as f64 + 0.5) / ny as f64 - 0.5 } else { 0.0 };
                Position {
                    x_km: ox + fx * ex,
                    y_km: oy + fy * ey,
                }
            }
        };
        let class = {
            let mut pick = rng.random_range(0.0..1.0) * total_weight;
            let mut chosen = &spec.classes[spec.classes.len() - 1];
            for c in &spec.classes {
                if pick < c.weight {
                    chosen = c;
                    break;
                }
                pick -= c.weight;
            }
            chosen
        };
        let mu = class.mu.sample(rng);
        let beta = class.beta.sample(rng);
        if !(beta > 0.0) {
            return Err(Error::validation(format!(
                "class {} sampled non-positive beta {beta}; tighten its beta distribution",
                class.name
            )));
        }
        let stories = draw_int_range(rng, spec.stories.0 as i64, spec.stories.1 as i64) as u32;
        let year = draw_int_range(rng, spec.year_range.0 as i64, spec.year_range.1 as i64) as i32;
        let cost = spec.cost.sample(rng);
        if !(cost > 0.0) {
            return Err(Error::validation(
                "sampled replacement cost must be positive; tighten the cost distribution",
            ));
        }
        buildings.push(Building {
            id: format!("b{i:05}"),
            position,
            stories,
            year_built: year,
            structure_class: class.name.clone(),
            occupancy: spec.occupancy.clone(),
            vs30: spec.vs30,
            replacement_cost: cost,
            fragility: FragilityMarginal::Lognormal { mu, beta },
        });
    }
    Portfolio::new(buildings)
}
