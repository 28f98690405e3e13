//! Critical-point diagnostics over retained ensembles: fluctuation
//! susceptibility, connected spatial correlations and their decay length,
//! empirical free energies with Landau-polynomial fits, and a PCA check
//! that the damage fraction is the leading collective coordinate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ensemble::SpinMatrix;
use crate::error::{Error, Result};
use crate::inventory::Position;
use crate::numeric::population_variance;

/// Indices of the narrowest value window holding `fraction` of the
/// samples: a crude equilibrium cut that keeps the realizations clustered
/// around the dominant state and discards excursions between wells.
/// Needs at least 10 expected members (n * fraction >= 10).
pub fn equilibrium_subset(samples: &[f64], fraction: f64) -> Result<Vec<usize>> {
    if !(0.0 < fraction && fraction <= 1.0) {
        return Err(Error::validation(format!(
            "subset fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n = samples.len();
    if (n as f64) * fraction < 10.0 {
        return Err(Error::validation(format!(
            "subset of {n} samples at fraction {fraction} holds fewer than 10 members"
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("samples must be finite"));
    }
    let w = ((n as f64) * fraction).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        samples[a]
            .partial_cmp(&samples[b])
            .expect("finite samples")
            .then(a.cmp(&b))
    });
    let mut best_start = 0usize;
    let mut best_width = f64::INFINITY;
    for start in 0..=(n - w) {
        let width = samples[order[start + w - 1]] - samples[order[start]];
        if width < best_width {
            best_width = width;
            best_start = start;
        }
    }
    let mut chosen: Vec<usize> = order[best_start..best_start + w].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Fluctuation susceptibility chi = N * Var(m) with the population
/// variance over realizations; `m` is the spin-scale magnetization.
pub fn susceptibility_fluctuation(m: &[f64], n_sites: usize) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::validation("susceptibility needs at least one sample"));
    }
    if n_sites == 0 {
        return Err(Error::validation("susceptibility needs at least one site"));
    }
    Ok(n_sites as f64 * population_variance(m))
}

/// Pairs landing in a radial bin below this count are dropped: their
/// correlation average is too noisy to constrain the decay fit.
pub const MIN_PAIRS_PER_BIN: usize = 30;

/// Radially binned connected correlation of damage spins.
#[derive(Debug, Clone)]
pub struct CorrelationProfile {
    /// Bin centers (k + 1/2) dr, km.
    pub r: Vec<f64>,
    /// Mean connected correlation per bin.
    pub c: Vec<f64>,
    /// Pairs contributing to each bin.
    pub pairs: Vec<usize>,
    /// Zero-distance reference (1/N) sum(1 - <s_i>^2).
    pub c0: f64,
    pub dr: f64,
}

/// Computes C(i, j) = <s_i s_j> - <s_i><s_j> over realizations and bins
/// it by pair separation. `dr` defaults to diameter / 30.
pub fn connected_correlation(
    spins: &SpinMatrix,
    positions: &[Position],
    dr: Option<f64>,
) -> Result<CorrelationProfile> {
    let n = spins.n_sites;
    let r_count = spins.n_realizations();
    if positions.len() != n {
        return Err(Error::validation(format!(
            "spin matrix has {n} sites but {} positions were given",
            positions.len()
        )));
    }
    if r_count < 2 {
        return Err(Error::validation("correlation needs at least 2 realizations"));
    }
    let mut diameter = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            diameter = diameter.max(positions[i].distance(&positions[j]));
        }
    }
    let dr = match dr {
        Some(v) if v > 0.0 && v.is_finite() => v,
        Some(v) => {
            return Err(Error::validation(format!("dr must be positive, got {v}")));
        }
        None => {
            if diameter <= 0.0 {
                return Err(Error::validation(
                    "all sites are colocated; pass an explicit dr",
                ));
            }
            diameter / 30.0
        }
    };

    let means: Vec<f64> = spins.site_means().iter().map(|&p| 2.0 * p - 1.0).collect();
    let c0 = means.iter().map(|&m| 1.0 - m * m).sum::<f64>() / n as f64;

    let n_bins = (diameter / dr).floor() as usize + 1;
    let mut sums = vec![0.0f64; n_bins];
    let mut counts = vec![0usize; n_bins];
    let inv_r = 1.0 / r_count as f64;
    for i in 0..n {
        for j in 0..i {
            let mut equal = 0usize;
            for k in 0..r_count {
                let row = spins.row(k);
                equal += (row[i] == row[j]) as usize;
            }
            // <s_i s_j> for +-1 spins equals 2 P(equal) - 1.
            let sisj = 2.0 * equal as f64 * inv_r - 1.0;
            let conn = sisj - means[i] * means[j];
            let bin = ((positions[i].distance(&positions[j]) / dr) as usize).min(n_bins - 1);
            sums[bin] += conn;
            counts[bin] += 1;
        }
    }

    let mut r = Vec::new();
    let mut c = Vec::new();
    let mut pairs = Vec::new();
    for k in 0..n_bins {
        if counts[k] < MIN_PAIRS_PER_BIN {
            continue;
        }
        r.push((k as f64 + 0.5) * dr);
        c.push(sums[k] / counts[k] as f64);
        pairs.push(counts[k]);
    }
    Ok(CorrelationProfile { r, c, pairs, c0, dr })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status", content = "value")]
pub enum CorrelationLength {
    Finite(f64),
    /// The binned profile does not decay over the fitted range.
    Infinite,
}

/// Correlation length from a log-linear fit ln(C/C0) = a - r/xi over the
/// leading positive-correlation bins, truncated at `r_max` when given and
/// always at the first nonpositive bin. Requires at least 3 usable bins.
pub fn correlation_length(
    profile: &CorrelationProfile,
    r_max: Option<f64>,
) -> Result<CorrelationLength> {
    if !(profile.c0 > 0.0) {
        return Err(Error::validation(
            "zero-distance correlation is not positive; spins are frozen",
        ));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&r, &c) in profile.r.iter().zip(&profile.c) {
        if let Some(limit) = r_max {
            if r > limit {
                break;
            }
        }
        if c <= 0.0 {
            break;
        }
        xs.push(r);
        ys.push((c / profile.c0).ln());
    }
    if xs.len() < 3 {
        return Err(Error::validation(format!(
            "correlation-length fit needs at least 3 positive bins, found {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    if slope >= 0.0 {
        return Ok(CorrelationLength::Infinite);
    }
    Ok(CorrelationLength::Finite(-1.0 / slope))
}

/// Histogram free energy F = -ln(p + eps) over spin-scale magnetization.
#[derive(Debug, Clone)]
pub struct FreeEnergyCurve {
    /// Bin centers in [-1, 1].
    pub m: Vec<f64>,
    pub f: Vec<f64>,
    pub counts: Vec<usize>,
    /// Regularizer added to the bin probability before the log; defaults
    /// to half a count, 0.5 / n.
    pub eps: f64,
}

pub fn empirical_free_energy(
    samples: &[f64],
    n_bins: usize,
    eps: Option<f64>,
) -> Result<FreeEnergyCurve> {
    if samples.is_empty() {
        return Err(Error::validation("free energy needs at least one sample"));
    }
    if n_bins < 2 {
        return Err(Error::validation("free energy needs at least 2 bins"));
    }
    let eps = match eps {
        Some(e) if e > 0.0 && e.is_finite() => e,
        Some(e) => return Err(Error::validation(format!("eps must be positive, got {e}"))),
        None => 0.5 / samples.len() as f64,
    };
    let mut counts = vec![0usize; n_bins];
    for &s in samples {
        if !(-1.0..=1.0).contains(&s) {
            return Err(Error::validation(format!(
                "magnetization sample {s} outside [-1, 1]"
            )));
        }
        let bin = crate::numeric::unit_bin((s + 1.0) / 2.0, n_bins);
        counts[bin] += 1;
    }
    let n = samples.len() as f64;
    let m = (0..n_bins)
        .map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n_bins as f64)
        .collect();
    let f = counts
        .iter()
        .map(|&c| -((c as f64 / n) + eps).ln())
        .collect();
    Ok(FreeEnergyCurve { m, f, counts, eps })
}

/// Floor on the confining-wall coefficient.
pub const WALL_FLOOR: f64 = 1e-8;

/// Landau polynomial F(m) = c0 + c1 m + c2 m^2 + c3 m^4 + c4 m^k with an
/// even wall power k keeping the landscape confined to [-1, 1].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LandauFit {
    pub c: [f64; 5],
    pub k: u32,
}

impl LandauFit {
    pub fn evaluate(&self, m: f64) -> f64 {
        self.c[0]
            + self.c[1] * m
            + self.c[2] * m * m
            + self.c[3] * m.powi(4)
            + self.c[4] * m.powi(self.k as i32)
    }

    pub fn second_derivative(&self, m: f64) -> f64 {
        let k = self.k as f64;
        2.0 * self.c[2]
            + 12.0 * self.c[3] * m * m
            + k * (k - 1.0) * self.c[4] * m.powi(self.k as i32 - 2)
    }

    /// Inverse curvature 1 / F''(m), the Landau-side susceptibility.
    pub fn chi_at(&self, m: f64) -> f64 {
        1.0 / self.second_derivative(m)
    }

    /// Global minimum on [-1, 1]: dense grid argmin refined by a local
    /// quadratic through the three neighboring grid points.
    pub fn m_star(&self) -> f64 {
        let (grid, values) = self.grid_eval();
        let mut best = 0usize;
        for (i, &v) in values.iter().enumerate() {
            if v < values[best] {
                best = i;
            }
        }
        self.refine(&grid, &values, best)
    }

    /// All local minima on [-1, 1], ascending; grid edges count when the
    /// landscape slopes up into the domain.
    pub fn minima(&self) -> Vec<f64> {
        let (grid, values) = self.grid_eval();
        let n = grid.len();
        let mut out = Vec::new();
        for i in 0..n {
            let left_higher = i == 0 || values[i] < values[i - 1];
            let right_higher = i == n - 1 || values[i] < values[i + 1];
            if left_higher && right_higher {
                out.push(self.refine(&grid, &values, i));
            }
        }
        out
    }

    fn grid_eval(&self) -> (Vec<f64>, Vec<f64>) {
        let n = 10_001;
        let grid: Vec<f64> = (0..n)
            .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
            .collect();
        let values = grid.iter().map(|&m| self.evaluate(m)).collect();
        (grid, values)
    }

    fn refine(&self, grid: &[f64], values: &[f64], i: usize) -> f64 {
        if i == 0 || i + 1 == grid.len() {
            return grid[i];
        }
        let (x0, x1, x2) = (grid[i - 1], grid[i], grid[i + 1]);
        let (y0, y1, y2) = (values[i - 1], values[i], values[i + 1]);
        let denom = y0 - 2.0 * y1 + y2;
        if denom <= 0.0 {
            return x1;
        }
        let h = x2 - x1;
        let vertex = x1 + 0.5 * h * (y0 - y2) / denom;
        vertex.clamp(x0, x2)
    }
}

/// Least-squares Landau fit. The wall coefficient is constrained to at
/// least WALL_FLOOR: when the unconstrained solution dips below, the wall
/// is pinned there and the remaining coefficients are re-solved.
pub fn fit_landau_polynomial(m: &[f64], f: &[f64], k: u32) -> Result<LandauFit> {
    if m.len() != f.len() {
        return Err(Error::validation(format!(
            "{} magnetization points but {} free-energy values",
            m.len(),
            f.len()
        )));
    }
    if m.len() < 5 {
        return Err(Error::validation("Landau fit needs at least 5 points"));
    }
    if k < 6 || k % 2 != 0 {
        return Err(Error::validation(format!(
            "wall power must be an even integer of at least 6, got {k}"
        )));
    }
    let n = m.len();
    let mut design = DMatrix::<f64>::zeros(n, 5);
    for (i, &x) in m.iter().enumerate() {
        design[(i, 0)] = 1.0;
        design[(i, 1)] = x;
        design[(i, 2)] = x * x;
        design[(i, 3)] = x.powi(4);
        design[(i, 4)] = x.powi(k as i32);
    }
    let target = nalgebra::DVector::from_column_slice(f);
    let solution = design
        .clone()
        .svd(true, true)
        .solve(&target, 1e-12)
        .map_err(Error::numeric)?;
    let mut c = [solution[0], solution[1], solution[2], solution[3], solution[4]];
    if c[4] < WALL_FLOOR {
        // Active-set step: pin the wall and refit the free coefficients.
        let reduced = design.columns(0, 4).into_owned();
        let wall_col = design.column(4) * WALL_FLOOR;
        let adjusted = &target - wall_col;
        let sol = reduced
            .svd(true, true)
            .solve(&adjusted, 1e-12)
            .map_err(Error::numeric)?;
        c = [sol[0], sol[1], sol[2], sol[3], WALL_FLOOR];
    }
    Ok(LandauFit { c, k })
}

/// Principal-component summary of the spin ensemble.
#[derive(Debug, Clone)]
pub struct PcaResult {
    /// Fraction of variance carried by each component, descending.
    pub explained: Vec<f64>,
    /// Realization scores along the first component, sign-aligned so the
    /// correlation with the damage fraction is nonnegative.
    pub pc1_scores: Vec<f64>,
    /// Site loadings of the first component.
    pub pc1_loading: Vec<f64>,
}

/// PCA of the centered realization-by-site spin matrix. When the damage
/// fraction is the order parameter, the first component carries most of
/// the variance and its scores track m_d.
pub fn pca_order_parameter(spins: &SpinMatrix, m_d: &[f64]) -> Result<PcaResult> {
    let r = spins.n_realizations();
    let n = spins.n_sites;
    if r < 2 || n == 0 {
        return Err(Error::validation("PCA needs at least 2 realizations and 1 site"));
    }
    if m_d.len() != r {
        return Err(Error::validation(format!(
            "{} damage fractions for {} realizations",
            m_d.len(),
            r
        )));
    }
    let mut x = DMatrix::<f64>::zeros(r, n);
    for k in 0..r {
        for (j, &v) in spins.row(k).iter().enumerate() {
            x[(k, j)] = if v { 1.0 } else { -1.0 };
        }
    }
    for j in 0..n {
        let mean = x.column(j).sum() / r as f64;
        for k in 0..r {
            x[(k, j)] -= mean;
        }
    }
    let svd = x.svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let s = &svd.singular_values;

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).expect("finite singular values"));
    let total: f64 = s.iter().map(|v| v * v).sum();
    if total <= 0.0 {
        return Err(Error::validation("spin matrix has no variance"));
    }
    let explained: Vec<f64> = order.iter().map(|&i| s[i] * s[i] / total).collect();
    let lead = order[0];
    let mut scores: Vec<f64> = (0..r).map(|k| u[(k, lead)] * s[lead]).collect();
    let mut loading: Vec<f64> = (0..n).map(|j| vt[(lead, j)]).collect();

    // Sign convention: scores correlate nonnegatively with damage.
    let ms = scores.iter().sum::<f64>() / r as f64;
    let md_mean = m_d.iter().sum::<f64>() / r as f64;
    let cov: f64 = scores
        .iter()
        .zip(m_d)
        .map(|(a, b)| (a - ms) * (b - md_mean))
        .sum();
    if cov < 0.0 {
        for v in &mut scores {
            *v = -*v;
        }
        for v in &mut loading {
            *v = -*v;
        }
    }
    Ok(PcaResult { explained, pc1_scores: scores, pc1_loading: loading })
}
