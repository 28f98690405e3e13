//! Correlation-matrix hygiene shared by the capacity and demand samplers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Jitter ladder tried during factorization, smallest first. The diagonal
/// bump inflates variances by at most 1e-6, which is far below sampling
/// noise at any ensemble size this crate targets.
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Checks the structural properties of a correlation matrix: square,
/// symmetric, unit diagonal, entries in [-1, 1]. Does not check
/// definiteness; `psd_repair` handles that.
pub fn validate_correlation(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::validation(format!(
            "correlation matrix must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    for i in 0..a.nrows() {
        if (a[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!(
                "correlation diagonal entry ({i},{i}) = {} is not 1",
                a[(i, i)]
            )));
        }
        for j in 0..i {
            let v = a[(i, j)];
            if (v - a[(j, i)]).abs() > 1e-12 {
                return Err(Error::validation(format!(
                    "correlation matrix is not symmetric at ({i},{j})"
                )));
            }
            if !(-1.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::validation(format!(
                    "correlation entry ({i},{j}) = {v} outside [-1, 1]"
                )));
            }
        }
    }
    Ok(())
}

/// Nearest-PSD projection: symmetric eigendecomposition, eigenvalues clipped
/// at zero, then the reconstruction is rescaled back to a unit diagonal.
pub fn psd_repair(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eig = a.clone().symmetric_eigen();
    let clipped: DVector<f64> = eig.eigenvalues.map(|l| l.max(0.0));
    let q = &eig.eigenvectors;
    let mut repaired = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    // Rescale to unit diagonal; a zero diagonal entry means the building's
    // variance was annihilated by clipping, which no valid input produces.
    let mut scale = DVector::zeros(n);
    for i in 0..n {
        let d = repaired[(i, i)];
        if d <= 0.0 {
            return Err(Error::numeric(format!(
                "PSD repair produced non-positive diagonal at index {i}"
            )));
        }
        scale[i] = 1.0 / d.sqrt();
    }
    for i in 0..n {
        for j in 0..n {
            repaired[(i, j)] *= scale[i] * scale[j];
        }
        repaired[(i, i)] = 1.0;
    }
    // Clipping then rescaling can only shrink off-diagonal magnitudes past
    // 1 by rounding; clamp those back.
    for i in 0..n {
        for j in 0..n {
            if i != j {
                repaired[(i, j)] = repaired[(i, j)].clamp(-1.0, 1.0);
            }
        }
    }
    Ok(repaired)
}

/// Lower-triangular factor L with L Lᵀ ≈ A, for sampling correlated normals.
/// Plain Cholesky first; on failure the jitter ladder bumps the diagonal.
/// A matrix that still fails at 1e-6 is reported with its minimum
/// eigenvalue so the caller can see how indefinite it was.
pub fn correlation_factor(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.l());
    }
    for jitter in JITTER_LADDER {
        let mut bumped = a.clone();
        for i in 0..a.nrows() {
            bumped[(i, i)] += jitter;
        }
        if let Some(ch) = bumped.cholesky() {
            return Ok(ch.l());
        }
    }
    let min_eig = a
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    Err(Error::numeric(format!(
        "correlation factorization failed after jitter repair; minimum eigenvalue {min_eig:.6e}"
    )))
}
