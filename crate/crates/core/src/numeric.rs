//! Thin wrappers over special functions plus small statistics helpers.

use statrs::function::erf;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile. `p` must lie in (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Two-pass population variance (divides by n).
pub fn population_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (divides by n-1); 0 for fewer than 2 points.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Index of the uniform bin over [0, 1] holding `x`: bins are half-open
/// with the last closed at 1. Truncating `x * n_bins` double-rounds, and a
/// value equal to the exact rational j/n_bins can land in bin j-1 (for
/// example 58.0/200.0 * 100.0 truncates to 28); with damage fractions
/// quantized to k/n that misrounding stamps a frozen comb onto histograms.
/// Binning against the rounded edges keeps edges[i] <= x < edges[i+1].
pub fn unit_bin(x: f64, n_bins: usize) -> usize {
    debug_assert!(n_bins > 0, "unit_bin needs at least one bin");
    debug_assert!((0.0..=1.0).contains(&x), "unit_bin input {x} outside [0, 1]");
    let n = n_bins as f64;
    let mut i = ((x * n) as usize).min(n_bins - 1);
    while i + 1 < n_bins && x >= (i + 1) as f64 / n {
        i += 1;
    }
    while i > 0 && x < i as f64 / n {
        i -= 1;
    }
    i
}

/// Linearly interpolated quantile (the "type 7" rule): index q*(n-1) into the
/// sorted sample, interpolating between neighbors.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    assert!((0.0..=1.0).contains(&q), "quantile level {q} outside [0,1]");
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}
