use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

use super::Portfolio;

/// Structured capacity correlation: same-class pairs share rho_class,
/// damped by exponential distance decay with range length_km.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapacityCorrelationSpec {
    pub rho_class: f64,
    pub length_km: f64,
}

impl Default for CapacityCorrelationSpec {
    fn default() -> Self {
        CapacityCorrelationSpec {
            rho_class: 0.0,
            length_km: 1.0,
        }
    }
}

impl CapacityCorrelationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho_class) || !self.rho_class.is_finite() {
            return Err(Error::validation(format!(
                "rho_class must lie in [0, 1], got {}",
                self.rho_class
            )));
        }
        if !(self.length_km > 0.0) || !self.length_km.is_finite() {
            return Err(Error::validation(format!(
                "capacity correlation length must be positive, got {}",
                self.length_km
            )));
        }
        Ok(())
    }
}

/// Builds the capacity correlation matrix for a portfolio:
/// off-diagonal entries rho_class * exp(-d_ij / length) for same-class
/// pairs and 0 across classes, unit diagonal, then PSD repair.
pub fn build_capacity_correlation(
    portfolio: &Portfolio,
    spec: &CapacityCorrelationSpec,
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = portfolio.len();
    let bs = portfolio.buildings();
    let mut corr = DMatrix::identity(n, n);
    if spec.rho_class > 0.0 {
        for i in 0..n {
            for j in 0..i {
                if bs[i].structure_class == bs[j].structure_class {
                    let d = portfolio.distance(i, j);
                    let v = spec.rho_class * (-d / spec.length_km).exp();
                    corr[(i, j)] = v;
                    corr[(j, i)] = v;
                }
            }
        }
    }
    linalg::psd_repair(&corr)
}
