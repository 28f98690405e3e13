//! Monte Carlo damage ensembles over a (hazard, diversity, temperature)
//! grid, plus the histogram diagnostics that classify each cell.
//!
//! Seed layout, all derived from one master seed with the splitmix mix:
//!
//! * diversity shift field: mix(master, [sigma_idx, replica]) with the
//!   DIVERSITY stream. The field is quenched: the same draw serves every
//!   magnitude and temperature cell, so moving along those axes changes
//!   the shaking, never the city.
//! * cell seed: mix(master, [t_idx, mw_idx, sigma_idx, replica]).
//! * realization seed: mix(cell_seed, [k]) for realization k, consumed
//!   through the CAPACITY, DEMAND, and THERMAL streams.
//!
//! Every cell is self-seeded, so parallel execution over cells is
//! bitwise identical to sequential execution regardless of worker count.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::damage::{
    damage_fraction, damage_indicators_into, repair_cost_fraction, DamageModel, MarginDomain,
};
use crate::error::{Error, Result};
use crate::hazard::{CorrelationModel, DemandFieldBasis, GmpeModel, Scenario};
use crate::inventory::{apply_diversity, CapacityMode, CapacitySampler, Portfolio};
use crate::numeric::{mean, sample_std};
use crate::rfim::CriticalEstimate;
use crate::rng::{self, mix, stream_rng};

/// Axes of the sweep. Temperatures default to the single sharp value 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub mw: Vec<f64>,
    pub sigma: Vec<f64>,
    pub temperature: Vec<f64>,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mw.is_empty() || self.sigma.is_empty() || self.temperature.is_empty() {
            return Err(Error::validation("grid axes must be nonempty"));
        }
        for (name, axis) in [("mw", &self.mw), ("sigma", &self.sigma), ("temperature", &self.temperature)] {
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("grid axis {name} has a non-finite value")));
            }
            if axis.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::validation(format!(
                    "grid axis {name} must be strictly increasing"
                )));
            }
        }
        if self.sigma[0] < 0.0 {
            return Err(Error::validation("diversity values must be >= 0"));
        }
        if self.temperature[0] < 0.0 {
            return Err(Error::validation("temperature values must be >= 0"));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.mw.len() * self.sigma.len() * self.temperature.len()
    }
}

/// Evenly spaced inclusive ladder; `step` must divide the span cleanly
/// enough that the final point lands within half a step of `hi`.
pub fn ladder(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::validation(format!("ladder step must be positive, got {step}")));
    }
    if hi < lo {
        return Err(Error::validation(format!("ladder range [{lo}, {hi}] is inverted")));
    }
    let n = ((hi - lo) / step).round() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleOptions {
    /// Monte Carlo realizations per cell and portfolio replica.
    pub n_realizations: usize,
    /// Independent diversity-shift fields per sigma value; realizations
    /// pool across replicas.
    pub n_portfolio_replicas: usize,
    pub capacity_mode: CapacityMode,
    pub margin_domain: MarginDomain,
    /// Damage-to-replacement cost ratio for the loss output.
    pub cost_ratio: f64,
    /// Retain per-realization damage indicators for correlation, PCA, and
    /// free-energy diagnostics. Memory scales with realizations * sites.
    pub keep_spins: bool,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            n_realizations: 2000,
            n_portfolio_replicas: 1,
            capacity_mode: CapacityMode::Dependent,
            margin_domain: MarginDomain::Linear,
            cost_ratio: 0.2,
            keep_spins: false,
        }
    }
}

impl EnsembleOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_realizations == 0 {
            return Err(Error::validation("n_realizations must be at least 1"));
        }
        if self.n_portfolio_replicas == 0 {
            return Err(Error::validation("n_portfolio_replicas must be at least 1"));
        }
        if !(self.cost_ratio > 0.0 && self.cost_ratio <= 1.0) {
            return Err(Error::validation(format!(
                "cost_ratio must lie in (0, 1], got {}",
                self.cost_ratio
            )));
        }
        Ok(())
    }
}

/// Damage indicators for every retained realization, row-major over
/// realizations.
#[derive(Debug, Clone)]
pub struct SpinMatrix {
    pub n_sites: usize,
    pub data: Vec<bool>,
}

impl SpinMatrix {
    pub fn n_realizations(&self) -> usize {
        if self.n_sites == 0 { 0 } else { self.data.len() / self.n_sites }
    }

    pub fn row(&self, k: usize) -> &[bool] {
        &self.data[k * self.n_sites..(k + 1) * self.n_sites]
    }

    /// Per-site damage probability across realizations.
    pub fn site_means(&self) -> Vec<f64> {
        let r = self.n_realizations();
        let mut sums = vec![0usize; self.n_sites];
        for k in 0..r {
            for (s, &v) in sums.iter_mut().zip(self.row(k)) {
                *s += v as usize;
            }
        }
        sums.into_iter().map(|s| s as f64 / r as f64).collect()
    }
}

/// Everything measured in one grid cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub mw: f64,
    pub sigma: f64,
    pub temperature: f64,
    /// Damage fraction per realization, replicas concatenated.
    pub damage_fraction: Vec<f64>,
    /// Cost-weighted loss fraction per realization.
    pub cost_fraction: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Histogram-mode estimate of the most probable damage fraction.
    pub mode: f64,
    pub bimodal: bool,
    pub spins: Option<SpinMatrix>,
}

/// Inputs shared by every cell of a sweep.
pub struct SweepInputs {
    pub portfolio: Arc<Portfolio>,
    pub scenario: Scenario,
    pub gmpe: GmpeModel,
    pub demand_correlation: CorrelationModel,
}

#[derive(Debug, Clone, Copy)]
pub struct CellCoords {
    pub t_idx: usize,
    pub mw_idx: usize,
    pub sigma_idx: usize,
}

/// Runs the Monte Carlo ensemble for one grid cell.
pub fn run_cell(
    inputs: &SweepInputs,
    basis: &DemandFieldBasis,
    grid: &GridSpec,
    coords: CellCoords,
    opts: &EnsembleOptions,
    master_seed: u64,
) -> Result<CellResult> {
    opts.validate()?;
    let temperature = grid.temperature[coords.t_idx];
    let mw = grid.mw[coords.mw_idx];
    let sigma = grid.sigma[coords.sigma_idx];

    let scenario = inputs.scenario.with_mw(mw);
    let demand_sampler = basis.sampler(&scenario, &inputs.gmpe)?;
    let damage_model = DamageModel { temperature, margin_domain: opts.margin_domain };
    damage_model.validate()?;
    let costs: Vec<f64> = inputs
        .portfolio
        .buildings()
        .iter()
        .map(|b| b.replacement_cost)
        .collect();
    let n_sites = costs.len();
    let n_total = opts.n_realizations * opts.n_portfolio_replicas;

    let mut fractions = Vec::with_capacity(n_total);
    let mut cost_fractions = Vec::with_capacity(n_total);
    let mut spin_data = if opts.keep_spins {
        Vec::with_capacity(n_total * n_sites)
    } else {
        Vec::new()
    };

    let mut capacities = Vec::with_capacity(n_sites);
    let mut demands = Vec::with_capacity(n_sites);
    let mut indicators: Vec<bool> = Vec::with_capacity(n_sites);
    let mut scratch = Vec::with_capacity(n_sites);

    for replica in 0..opts.n_portfolio_replicas {
        let shift_seed = mix(master_seed, &[coords.sigma_idx as u64, replica as u64]);
        let realization = apply_diversity(&inputs.portfolio, sigma, shift_seed)?;
        let capacity_sampler = CapacitySampler::new(&realization, opts.capacity_mode)?;
        let cell_seed = mix(
            master_seed,
            &[
                coords.t_idx as u64,
                coords.mw_idx as u64,
                coords.sigma_idx as u64,
                replica as u64,
            ],
        );
        for k in 0..opts.n_realizations {
            let r_seed = mix(cell_seed, &[k as u64]);
            let mut cap_rng = stream_rng(r_seed, rng::role::CAPACITY);
            capacity_sampler.sample_into(&mut cap_rng, &mut scratch, &mut capacities);
            let mut dem_rng = stream_rng(r_seed, rng::role::DEMAND);
            demand_sampler.sample_into(&mut dem_rng, &mut scratch, &mut demands);
            let mut thermal_rng = stream_rng(r_seed, rng::role::THERMAL);
            damage_indicators_into(
                &damage_model,
                &capacities,
                &demands,
                &mut thermal_rng,
                &mut indicators,
            )?;
            fractions.push(damage_fraction(&indicators));
            cost_fractions.push(repair_cost_fraction(&costs, &indicators, opts.cost_ratio)?);
            if opts.keep_spins {
                spin_data.extend_from_slice(&indicators);
            }
        }
    }

    let mode = most_probable_fraction(&fractions)?;
    let bimodal = detect_bimodality(&fractions)?;
    Ok(CellResult {
        mw,
        sigma,
        temperature,
        mean: mean(&fractions),
        std: sample_std(&fractions),
        mode,
        bimodal,
        spins: if opts.keep_spins {
            Some(SpinMatrix { n_sites, data: spin_data })
        } else {
            None
        },
        damage_fraction: fractions,
        cost_fraction: cost_fractions,
    })
}

/// Sweep results; cells are row-major with temperature outermost, then
/// hazard, then diversity.
pub struct SweepResult {
    pub grid: GridSpec,
    pub cells: Vec<CellResult>,
}

impl SweepResult {
    pub fn cell(&self, t_idx: usize, mw_idx: usize, sigma_idx: usize) -> &CellResult {
        let idx = (t_idx * self.grid.mw.len() + mw_idx) * self.grid.sigma.len() + sigma_idx;
        &self.cells[idx]
    }

    /// Cells along the diversity axis at fixed temperature and hazard.
    pub fn sigma_slice(&self, t_idx: usize, mw_idx: usize) -> Vec<&CellResult> {
        (0..self.grid.sigma.len())
            .map(|s| self.cell(t_idx, mw_idx, s))
            .collect()
    }

    /// Cells along the hazard axis at fixed temperature and diversity.
    pub fn mw_slice(&self, t_idx: usize, sigma_idx: usize) -> Vec<&CellResult> {
        (0..self.grid.mw.len())
            .map(|m| self.cell(t_idx, m, sigma_idx))
            .collect()
    }
}

/// Runs every grid cell, in parallel over the current rayon pool. The
/// output ordering and content are independent of the worker count.
pub fn sweep_grid(
    inputs: &SweepInputs,
    grid: &GridSpec,
    opts: &EnsembleOptions,
    master_seed: u64,
) -> Result<SweepResult> {
    grid.validate()?;
    opts.validate()?;
    inputs.scenario.with_mw(grid.mw[0]).validate()?;
    inputs.gmpe.validate()?;
    let basis = DemandFieldBasis::new(&inputs.portfolio, &inputs.demand_correlation)?;

    let mut coords = Vec::with_capacity(grid.n_cells());
    for t_idx in 0..grid.temperature.len() {
        for mw_idx in 0..grid.mw.len() {
            for sigma_idx in 0..grid.sigma.len() {
                coords.push(CellCoords { t_idx, mw_idx, sigma_idx });
            }
        }
    }
    log::info!(
        "sweep: {} cells, {} realizations x {} replicas each",
        coords.len(),
        opts.n_realizations,
        opts.n_portfolio_replicas
    );
    let cells: Vec<CellResult> = coords
        .into_par_iter()
        .map(|c| run_cell(inputs, &basis, grid, c, opts, master_seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { grid: grid.clone(), cells })
}

const MODE_BINS: usize = 100;

fn fraction_bin(x: f64) -> usize {
    crate::numeric::unit_bin(x, MODE_BINS)
}

fn histogram(samples: &[f64]) -> Result<[usize; MODE_BINS]> {
    if samples.is_empty() {
        return Err(Error::validation("histogram needs at least one sample"));
    }
    let mut counts = [0usize; MODE_BINS];
    for &x in samples {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::validation(format!(
                "damage fraction {x} outside [0, 1]"
            )));
        }
        counts[fraction_bin(x)] += 1;
    }
    Ok(counts)
}

/// Histogram-mode estimator for the most probable damage fraction: rank
/// the 100 bins by count, take the smallest set of top bins holding more
/// than 1% of the samples, and average the samples inside them. Averaging
/// within the modal bins keeps sub-bin resolution without smoothing.
pub fn most_probable_fraction(samples: &[f64]) -> Result<f64> {
    let counts = histogram(samples)?;
    let mut order: Vec<usize> = (0..MODE_BINS).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let need = (0.01 * samples.len() as f64).ceil() as usize;
    let mut cumulative = 0usize;
    let mut chosen = Vec::new();
    for &bin in &order {
        chosen.push(bin);
        cumulative += counts[bin];
        if cumulative > need {
            break;
        }
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for &x in samples {
        if chosen.contains(&fraction_bin(x)) {
            sum += x;
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Topographic prominence of a peak bin: height above the higher of the
/// valley floors separating it from taller terrain. A side with no taller
/// terrain imposes no floor, so the tallest bin is fully prominent and a
/// spike against a domain edge is judged by its inland valley alone.
fn prominence(counts: &[usize], peak: usize) -> usize {
    let h = counts[peak];
    let mut floor = 0usize;
    for side in [0usize, 1] {
        let mut valley = h;
        let mut i = peak;
        loop {
            let next = if side == 0 {
                if i == 0 {
                    break;
                }
                i - 1
            } else {
                if i + 1 == counts.len() {
                    break;
                }
                i + 1
            };
            if counts[next] > h {
                // Taller terrain reached: this side's valley floor clamps.
                floor = floor.max(valley);
                break;
            }
            valley = valley.min(counts[next]);
            i = next;
        }
    }
    h - floor
}

const PEAK_WINDOW: usize = 10;
const PROMINENCE_FRACTION: f64 = 0.05;
const PEAK_NOISE_SIGMAS: f64 = 5.0;
const PEAK_SEPARATION: f64 = 0.2;

/// Flags a histogram with two well-separated substantial peaks.
///
/// A bin is a candidate peak when it carries the maximum count within a
/// +-10 bin window; the window, rather than immediate neighbors, keeps
/// Poisson flank noise on a broad single mode from minting peaks. The
/// candidates must then clear a topographic prominence of 5% of the
/// tallest bin and of five Poisson standard deviations of their own
/// height, the latter so bin noise on flat terrain stays sub-threshold at
/// any sample count, and the accepted peaks must sit at least 0.2 apart
/// in damage fraction.
pub fn detect_bimodality(samples: &[f64]) -> Result<bool> {
    let counts = histogram(samples)?;
    let max_count = *counts.iter().max().expect("fixed-size histogram");
    if max_count == 0 {
        return Ok(false);
    }
    let threshold = PROMINENCE_FRACTION * max_count as f64;
    let mut candidates: Vec<usize> = Vec::new();
    for i in 0..MODE_BINS {
        if counts[i] == 0 {
            continue;
        }
        let lo = i.saturating_sub(PEAK_WINDOW);
        let hi = (i + PEAK_WINDOW).min(MODE_BINS - 1);
        let window_max = counts[lo..=hi].iter().max().copied().unwrap_or(0);
        let floor = threshold.max(PEAK_NOISE_SIGMAS * (counts[i] as f64).sqrt());
        if counts[i] == window_max && prominence(&counts, i) as f64 >= floor {
            candidates.push(i);
        }
    }
    candidates.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut accepted: Vec<f64> = Vec::new();
    for bin in candidates {
        let center = (bin as f64 + 0.5) / MODE_BINS as f64;
        if accepted.iter().all(|&c| (center - c).abs() >= PEAK_SEPARATION) {
            accepted.push(center);
        }
    }
    Ok(accepted.len() >= 2)
}

/// Smallest surveyed diversity from which bimodality stays absent.
pub fn critical_diversity_empirical(cells: &[(f64, bool)]) -> CriticalEstimate {
    let mut last_bimodal: Option<usize> = None;
    for (i, &(_, bimodal)) in cells.iter().enumerate() {
        if bimodal {
            last_bimodal = Some(i);
        }
    }
    match last_bimodal {
        None => cells
            .first()
            .map_or(CriticalEstimate::OutOfRange, |&(s, _)| CriticalEstimate::Value(s)),
        Some(i) if i + 1 < cells.len() => CriticalEstimate::Value(cells[i + 1].0),
        Some(_) => CriticalEstimate::OutOfRange,
    }
}

/// Which grid axis spans the heatmap columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PanelAxis {
    Hazard,
    Diversity,
}

impl PanelAxis {
    /// Display clip percentile: hazard panels saturate earlier because
    /// the saturated phases concentrate the counts.
    pub fn default_clip_percentile(&self) -> f64 {
        match self {
            PanelAxis::Hazard => 95.0,
            PanelAxis::Diversity => 99.0,
        }
    }
}

pub const HEATMAP_VALUE_BINS: usize = 1000;

/// Occupancy map of damage-fraction histograms along one grid axis,
/// normalized for plotting: counts are clipped at a nearest-rank
/// percentile of the nonzero counts, so anything at or above the clip
/// renders as exactly 1.
#[derive(Debug, Clone)]
pub struct Heatmap {
    /// Column coordinate (the swept axis value) per column.
    pub x: Vec<f64>,
    /// Row centers over damage fraction, length HEATMAP_VALUE_BINS.
    pub y: Vec<f64>,
    /// Row-major normalized intensity, index = row * n_cols + col.
    pub values: Vec<f64>,
    pub clip_count: usize,
}

pub fn damage_heatmap(
    cells: &[&CellResult],
    axis: PanelAxis,
    clip_percentile: Option<f64>,
) -> Result<Heatmap> {
    if cells.is_empty() {
        return Err(Error::validation("heatmap needs at least one cell"));
    }
    let pct = clip_percentile.unwrap_or_else(|| axis.default_clip_percentile());
    if !(0.0 < pct && pct <= 100.0) {
        return Err(Error::validation(format!(
            "clip percentile must lie in (0, 100], got {pct}"
        )));
    }
    let n_cols = cells.len();
    let x: Vec<f64> = cells
        .iter()
        .map(|c| match axis {
            PanelAxis::Hazard => c.mw,
            PanelAxis::Diversity => c.sigma,
        })
        .collect();
    let mut counts = vec![0usize; HEATMAP_VALUE_BINS * n_cols];
    for (col, cell) in cells.iter().enumerate() {
        for &f in &cell.damage_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::validation(format!("damage fraction {f} outside [0, 1]")));
            }
            let row = crate::numeric::unit_bin(f, HEATMAP_VALUE_BINS);
            counts[row * n_cols + col] += 1;
        }
    }
    let mut nonzero: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    if nonzero.is_empty() {
        return Err(Error::validation("heatmap has no occupied bins"));
    }
    nonzero.sort_unstable();
    // Nearest-rank percentile: the smallest value with at least pct% of
    // the nonzero counts at or below it.
    let rank = ((pct / 100.0) * nonzero.len() as f64).ceil() as usize;
    let clip = nonzero[rank.clamp(1, nonzero.len()) - 1];
    let values = counts
        .iter()
        .map(|&c| (c.min(clip) as f64) / clip as f64)
        .collect();
    let y = (0..HEATMAP_VALUE_BINS)
        .map(|i| (i as f64 + 0.5) / HEATMAP_VALUE_BINS as f64)
        .collect();
    Ok(Heatmap { x, y, values, clip_count: clip })
}
