use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::correlation_factor;
use crate::numeric::normal_cdf;
use crate::rng::{self, stream_rng};

use super::{FragilityMarginal, KdeFragility, PortfolioRealization};

/// Whether capacity draws honor the portfolio correlation matrix or are
/// conditionally independent given the marginals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapacityMode {
    Dependent,
    ConditionallyIndependent,
}

enum ResolvedMarginal {
    /// ln C = mu_eff + beta * z, the closed-form Gaussian-copula transport
    /// for a lognormal marginal.
    Lognormal { mu_eff: f64, beta: f64 },
    /// General path: z -> Phi(z) -> inverse KDE CDF.
    Kde { kde: KdeFragility, shift: f64 },
}

/// Reusable sampler: marginals are resolved against the realization's
/// diversity shifts and the correlation factorization is done once, so the
/// per-draw cost is one matrix-vector product plus marginal transforms.
pub struct CapacitySampler {
    marginals: Vec<ResolvedMarginal>,
    factor: Option<DMatrix<f64>>,
}

impl CapacitySampler {
    pub fn new(realization: &PortfolioRealization, mode: CapacityMode) -> Result<Self> {
        let portfolio = realization.portfolio();
        let marginals = portfolio
            .buildings()
            .iter()
            .zip(realization.shifts())
            .map(|(b, &shift)| match &b.fragility {
                FragilityMarginal::Lognormal { mu, beta } => ResolvedMarginal::Lognormal {
                    mu_eff: mu + shift,
                    beta: *beta,
                },
                FragilityMarginal::Kde(k) => ResolvedMarginal::Kde {
                    kde: k.clone(),
                    shift,
                },
            })
            .collect();
        let factor = match mode {
            CapacityMode::ConditionallyIndependent => None,
            CapacityMode::Dependent => {
                let corr = portfolio.capacity_corr();
                if corr.is_identity(0.0) {
                    None
                } else {
                    Some(correlation_factor(corr)?)
                }
            }
        };
        Ok(CapacitySampler { marginals, factor })
    }

    pub fn len(&self) -> usize {
        self.marginals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marginals.is_empty()
    }

    /// Draws one capacity vector (linear intensity units) into `out`.
    /// `scratch` holds the underlying iid normals between calls.
    pub fn sample_into<R: Rng>(&self, rng: &mut R, scratch: &mut Vec<f64>, out: &mut Vec<f64>) {
        let n = self.marginals.len();
        scratch.clear();
        scratch.extend((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        out.clear();
        match &self.factor {
            None => {
                for (m, &z) in self.marginals.iter().zip(scratch.iter()) {
                    out.push(transport(m, z));
                }
            }
            Some(l) => {
                // z = L u over the lower triangle.
                for (i, m) in self.marginals.iter().enumerate() {
                    let mut z = 0.0;
                    for j in 0..=i {
                        z += l[(i, j)] * scratch[j];
                    }
                    out.push(transport(m, z));
                }
            }
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut scratch = Vec::new();
        let mut out = Vec::new();
        self.sample_into(rng, &mut scratch, &mut out);
        out
    }
}

fn transport(m: &ResolvedMarginal, z: f64) -> f64 {
    match m {
        ResolvedMarginal::Lognormal { mu_eff, beta } => (mu_eff + beta * z).exp(),
        ResolvedMarginal::Kde { kde, shift } => {
            let p = normal_cdf(z).clamp(1e-300, 1.0 - 1e-16);
            kde.quantile_ln(p, *shift).exp()
        }
    }
}

/// One-shot draw of a correlated capacity vector. Builds the sampler each
/// call; loops should construct a `CapacitySampler` once instead.
pub fn sample_capacities(
    realization: &PortfolioRealization,
    mode: CapacityMode,
    seed: u64,
) -> Result<Vec<f64>> {
    let sampler = CapacitySampler::new(realization, mode)?;
    let mut rng = stream_rng(seed, rng::role::CAPACITY);
    Ok(sampler.sample(&mut rng))
}
