//! Command-line schema and the handlers behind each subcommand. The
//! binary is a thin wrapper that parses, dispatches, and maps errors
//! onto exit codes.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{preset, RunConfig};
use crate::critstats::{
    connected_correlation, correlation_length, empirical_free_energy, equilibrium_subset,
    fit_landau_polynomial, pca_order_parameter, susceptibility_fluctuation, CorrelationLength,
};
use crate::ensemble::{
    critical_diversity_empirical, damage_heatmap, run_cell, sweep_grid, CellCoords,
    EnsembleOptions, GridSpec, PanelAxis, SpinMatrix, SweepInputs,
};
use crate::error::{Error, Result};
use crate::hazard::DemandFieldBasis;
use crate::output::{self, FitReport, OutputWriter, SigmaCriticalRow};
use crate::rfim::{
    critical_points, fit_mean_field, free_energy, free_energy_map, mean_field_susceptibility,
    rfim_phase_diagram, stable_solutions, CriticalEstimate, FitOptions, MeanFieldParams,
    SliceScaling, SolverOptions,
};

#[derive(Debug, Parser)]
#[command(
    name = "urbanphase",
    version,
    about = "Correlated damage ensembles, phase maps, and mean-field fits for building portfolios"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the Monte Carlo grid sweep and write result tables.
    Sweep(SweepArgs),
    /// Mean-field tools: fit a parameter map, solve one point, locate
    /// critical coordinates.
    #[command(subcommand)]
    Rfim(RfimCommand),
    /// Critical diagnostics for one grid cell: fluctuation
    /// susceptibility, spatial correlations, Landau fit, PCA.
    Diagnostics(DiagnosticsArgs),
    /// Per-cell repair-cost statistics with tail quantiles.
    Cost(CostArgs),
}

/// Where the run configuration comes from, plus common overrides.
#[derive(Debug, Args)]
pub struct ConfigSource {
    /// Run-configuration TOML file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in configuration: desk or paper.
    #[arg(long)]
    pub preset: Option<String>,
    /// Master seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker-thread override; 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory override.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A loaded configuration plus the directory its relative paths resolve
/// against.
pub struct ResolvedRun {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl ConfigSource {
    pub fn resolve(&self) -> Result<ResolvedRun> {
        let (mut config, base_dir) = match (&self.config, &self.preset) {
            (Some(path), None) => {
                let cfg = RunConfig::load(path)?;
                let base = path
                    .parent()
                    .filter(|p| !p.as_os_str().is_empty())
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| PathBuf::from("."));
                (cfg, base)
            }
            (None, Some(name)) => (preset(name)?, PathBuf::from(".")),
            _ => return Err(Error::validation("pass exactly one of --config or --preset")),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(workers) = self.workers {
            config.workers = workers;
        }
        if let Some(out) = &self.out {
            config.output.dir = out.clone();
        }
        Ok(ResolvedRun { config, base_dir })
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: ConfigSource,
}

#[derive(Debug, Subcommand)]
pub enum RfimCommand {
    /// Fit the mean-field parameter map to a cells table; writes
    /// fit.json, phase.tsv, and free_energy.tsv.
    Fit(RfimFitArgs),
    /// Solve the self-consistency condition at one parameter point and
    /// print the stable branches as JSON.
    Solve(RfimSolveArgs),
    /// Critical coordinates implied by a stored fit.
    Critical(RfimCriticalArgs),
}

#[derive(Debug, Args)]
pub struct RfimFitArgs {
    /// Cells table written by `sweep`.
    #[arg(long)]
    pub cells: PathBuf,
    /// Keep only cells with at least this much diversity.
    #[arg(long)]
    pub min_sigma: Option<f64>,
    /// Ridge weight on the disorder slope.
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Output directory; defaults to the cells table's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RfimSolveArgs {
    /// Effective field a1.
    #[arg(long, allow_hyphen_values = true)]
    pub a1: f64,
    /// Disorder strength a2.
    #[arg(long)]
    pub a2: f64,
    /// Solver tolerance on the self-consistency gap.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RfimCriticalArgs {
    /// fit.json written by `rfim fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Hazard window override.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub mw_window: Option<Vec<f64>>,
    /// Diversity window override.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub sigma_window: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct DiagnosticsArgs {
    #[command(flatten)]
    pub source: ConfigSource,
    /// Hazard coordinate, snapped to the nearest grid value; defaults to
    /// the middle of the hazard axis.
    #[arg(long)]
    pub mw: Option<f64>,
    /// Diversity coordinate, snapped to the nearest grid value; defaults
    /// to the middle of the diversity axis.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Temperature coordinate, snapped to the nearest grid value;
    /// defaults to the coldest.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Fraction of realizations kept by the equilibrium cut.
    #[arg(long, default_value_t = 0.5)]
    pub equilibrium_fraction: f64,
    /// Radial truncation for the correlation-length fit, km.
    #[arg(long)]
    pub r_max: Option<f64>,
    /// Histogram bins for the empirical free energy.
    #[arg(long, default_value_t = 41)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[command(flatten)]
    pub source: ConfigSource,
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Sweep(args) => run_sweep(args),
        Command::Rfim(RfimCommand::Fit(args)) => run_rfim_fit(args),
        Command::Rfim(RfimCommand::Solve(args)) => run_rfim_solve(args),
        Command::Rfim(RfimCommand::Critical(args)) => run_rfim_critical(args),
        Command::Diagnostics(args) => run_diagnostics(args),
        Command::Cost(args) => run_cost(args),
    }
}

fn build_sweep(run: &ResolvedRun) -> Result<(SweepInputs, GridSpec, EnsembleOptions)> {
    let cfg = &run.config;
    let inputs = SweepInputs {
        portfolio: cfg.build_portfolio(&run.base_dir)?,
        scenario: cfg.scenario,
        gmpe: cfg.gmpe.resolve(&run.base_dir)?,
        demand_correlation: cfg.demand_correlation,
    };
    let grid = cfg.grid.resolve()?;
    Ok((inputs, grid, cfg.ensemble.clone()))
}

/// Runs `f` on a dedicated pool of `workers` threads, or on the global
/// pool when `workers` is zero. Results do not depend on the choice.
fn with_threads<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if workers == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::validation(format!("could not build a {workers}-thread pool: {e}")))?;
    pool.install(f)
}

pub fn run_sweep(args: &SweepArgs) -> Result<()> {
    let run = args.source.resolve()?;
    let cfg = &run.config;
    let (inputs, grid, opts) = build_sweep(&run)?;
    let result = with_threads(cfg.workers, || sweep_grid(&inputs, &grid, &opts, cfg.seed))?;

    let mut writer = OutputWriter::new(&cfg.output.dir)?;
    writer.write("cells.tsv", &output::cells_tsv(&result.cells))?;
    if cfg.output.samples {
        writer.write("samples.tsv", &output::samples_tsv(&result.cells))?;
    }

    let mut sigma_rows = Vec::with_capacity(grid.temperature.len() * grid.mw.len());
    for t_idx in 0..grid.temperature.len() {
        for mw_idx in 0..grid.mw.len() {
            let flags: Vec<(f64, bool)> = result
                .sigma_slice(t_idx, mw_idx)
                .iter()
                .map(|c| (c.sigma, c.bimodal))
                .collect();
            sigma_rows.push(SigmaCriticalRow {
                temperature: grid.temperature[t_idx],
                mw: grid.mw[mw_idx],
                estimate: critical_diversity_empirical(&flags),
            });
        }
    }
    writer.write("sigma_c.tsv", &output::sigma_c_tsv(&sigma_rows))?;

    if cfg.output.heatmaps {
        // Panels describe the coldest temperature slice.
        for sigma_idx in 0..grid.sigma.len() {
            let map = damage_heatmap(&result.mw_slice(0, sigma_idx), PanelAxis::Hazard, None)?;
            writer.write(
                &format!("heatmap_hazard_sigma{sigma_idx}.tsv"),
                &output::heatmap_tsv(&map),
            )?;
        }
        for mw_idx in 0..grid.mw.len() {
            let map = damage_heatmap(&result.sigma_slice(0, mw_idx), PanelAxis::Diversity, None)?;
            writer.write(
                &format!("heatmap_diversity_mw{mw_idx}.tsv"),
                &output::heatmap_tsv(&map),
            )?;
        }
    }

    let dir = writer.dir().to_path_buf();
    writer.finish(cfg.seed, &cfg.canonical_toml()?)?;
    println!("sweep: {} cells -> {}", result.cells.len(), dir.display());
    Ok(())
}

fn dedup_sorted(values: &mut Vec<f64>) {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite axis values"));
    values.dedup();
}

fn describe_estimate(e: CriticalEstimate) -> String {
    match e {
        CriticalEstimate::Value(v) => format!("{v}"),
        CriticalEstimate::OutOfRange => "outside the surveyed window".to_string(),
    }
}

pub fn run_rfim_fit(args: &RfimFitArgs) -> Result<()> {
    let rows = output::read_cells_tsv(&args.cells)?;
    if rows.is_empty() {
        return Err(Error::validation(format!(
            "{} holds no cells",
            args.cells.display()
        )));
    }
    let cells = output::fit_cells_from_rows(&rows);
    let mut opts = FitOptions::default();
    if let Some(v) = args.min_sigma {
        opts.min_sigma = v;
    }
    if let Some(v) = args.ridge {
        opts.ridge = v;
    }
    let fit = fit_mean_field(&cells, &opts)?;

    let mut mw_axis: Vec<f64> = cells.iter().map(|c| c.mw).collect();
    dedup_sorted(&mut mw_axis);
    let mut sigma_axis: Vec<f64> = cells.iter().map(|c| c.sigma).collect();
    dedup_sorted(&mut sigma_axis);
    let mw_range = (mw_axis[0], *mw_axis.last().expect("nonempty axis"));
    let sigma_range = (sigma_axis[0], *sigma_axis.last().expect("nonempty axis"));
    let critical = critical_points(&fit, mw_range, sigma_range);
    let report = FitReport { fit, critical, mw_range, sigma_range };

    let out_dir = args.out.clone().unwrap_or_else(|| {
        args.cells
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    output::write_atomic(&out_dir.join("fit.json"), &output::json_pretty(&report))?;

    let diagram = rfim_phase_diagram(&fit, &mw_axis, &sigma_axis)?;
    output::write_atomic(&out_dir.join("phase.tsv"), &output::phase_tsv(&diagram))?;

    // Free-energy slices along hazard at the lowest observed diversity,
    // where the double-well structure is most visible.
    let sigma_ref = sigma_axis[0];
    let m_grid: Vec<f64> = (0..=200).map(|i| -1.0 + i as f64 / 100.0).collect();
    let slices: Vec<MeanFieldParams> =
        mw_axis.iter().map(|&mw| fit.params(mw, sigma_ref)).collect();
    let map = free_energy_map(&slices, &m_grid, SliceScaling::Unit)?;
    output::write_atomic(
        &out_dir.join("free_energy.tsv"),
        &output::free_energy_map_tsv(&mw_axis, &m_grid, &map)?,
    )?;

    println!(
        "fit: rms residual {:.3e} over {} cells",
        report.fit.rms_residual, report.fit.n_cells
    );
    println!(
        "a1(mw) = {} + {} mw + {} mw^2",
        report.fit.p[0], report.fit.p[1], report.fit.p[2]
    );
    println!("a2(sigma) = {} + {} sigma", report.fit.q[0], report.fit.q[1]);
    println!("mw_c: {}", describe_estimate(report.critical.mw_c));
    println!("sigma_c: {}", describe_estimate(report.critical.sigma_c));
    Ok(())
}

#[derive(Serialize)]
struct BranchReport {
    m: f64,
    m_d: f64,
    free_energy: f64,
    q: f64,
    chi_linear: f64,
    chi_curvature: f64,
}

#[derive(Serialize)]
struct SolveReport {
    a1: f64,
    a2: f64,
    bistable: bool,
    branches: Vec<BranchReport>,
}

pub fn run_rfim_solve(args: &RfimSolveArgs) -> Result<()> {
    let params = MeanFieldParams { a1: args.a1, a2: args.a2 };
    let mut opts = SolverOptions::default();
    if let Some(tol) = args.tol {
        opts.tol = tol;
    }
    let sol = stable_solutions(&params, &opts)?;
    let branch = |m: f64| {
        let s = mean_field_susceptibility(m, &params);
        BranchReport {
            m,
            m_d: (m + 1.0) / 2.0,
            free_energy: free_energy(m, &params),
            q: s.q,
            chi_linear: s.chi_linear,
            chi_curvature: s.chi_curvature,
        }
    };
    let branches = if sol.bistable() {
        vec![branch(sol.lower), branch(sol.upper)]
    } else {
        vec![branch(sol.single())]
    };
    let report = SolveReport { a1: args.a1, a2: args.a2, bistable: sol.bistable(), branches };
    print!("{}", output::json_pretty(&report));
    Ok(())
}

fn window(flag: Option<&[f64]>, fallback: (f64, f64)) -> Result<(f64, f64)> {
    match flag {
        None => Ok(fallback),
        Some([lo, hi]) if lo < hi => Ok((*lo, *hi)),
        Some(vals) => Err(Error::validation(format!(
            "window needs LO < HI, got {vals:?}"
        ))),
    }
}

pub fn run_rfim_critical(args: &RfimCriticalArgs) -> Result<()> {
    let report = output::read_fit_report(&args.fit)?;
    let mw_range = window(args.mw_window.as_deref(), report.mw_range)?;
    let sigma_range = window(args.sigma_window.as_deref(), report.sigma_range)?;
    let critical = critical_points(&report.fit, mw_range, sigma_range);
    print!("{}", output::json_pretty(&critical));
    Ok(())
}

fn nearest_index(axis: &[f64], target: Option<f64>, default_idx: usize) -> usize {
    match target {
        None => default_idx,
        Some(t) => {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, &v) in axis.iter().enumerate() {
                let d = (v - t).abs();
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            best
        }
    }
}

fn select_rows(spins: &SpinMatrix, keep: &[usize]) -> SpinMatrix {
    let mut data = Vec::with_capacity(keep.len() * spins.n_sites);
    for &k in keep {
        data.extend_from_slice(spins.row(k));
    }
    SpinMatrix { n_sites: spins.n_sites, data }
}

/// Wall power for the Landau fit: steep enough to act only near the
/// domain edges.
const LANDAU_WALL_POWER: u32 = 100;

#[derive(Serialize)]
struct LandauSummary {
    c: [f64; 5],
    k: u32,
    m_star: f64,
    chi: f64,
    minima: Vec<f64>,
}

#[derive(Serialize)]
struct DiagnosticsReport {
    mw: f64,
    sigma: f64,
    temperature: f64,
    n_realizations: usize,
    n_sites: usize,
    equilibrium_fraction: f64,
    retained: usize,
    chi_fluctuation: f64,
    correlation_length_km: CorrelationLength,
    c0: f64,
    dr_km: f64,
    landau: LandauSummary,
    pca_explained_top: Vec<f64>,
}

pub fn run_diagnostics(args: &DiagnosticsArgs) -> Result<()> {
    let run = args.source.resolve()?;
    let cfg = &run.config;
    let (inputs, grid, mut opts) = build_sweep(&run)?;
    opts.keep_spins = true;

    let coords = CellCoords {
        t_idx: nearest_index(&grid.temperature, args.temperature, 0),
        mw_idx: nearest_index(&grid.mw, args.mw, grid.mw.len() / 2),
        sigma_idx: nearest_index(&grid.sigma, args.sigma, grid.sigma.len() / 2),
    };
    log::info!(
        "diagnostics cell: mw {} sigma {} temperature {}",
        grid.mw[coords.mw_idx],
        grid.sigma[coords.sigma_idx],
        grid.temperature[coords.t_idx]
    );
    let basis = DemandFieldBasis::new(&inputs.portfolio, &inputs.demand_correlation)?;
    let cell = run_cell(&inputs, &basis, &grid, coords, &opts, cfg.seed)?;
    let spins = cell.spins.as_ref().expect("keep_spins was set");

    let m_spin: Vec<f64> = cell.damage_fraction.iter().map(|&d| 2.0 * d - 1.0).collect();
    let keep = equilibrium_subset(&m_spin, args.equilibrium_fraction)?;
    let kept_m: Vec<f64> = keep.iter().map(|&i| m_spin[i]).collect();
    let chi = susceptibility_fluctuation(&kept_m, spins.n_sites)?;

    let kept_spins = select_rows(spins, &keep);
    let positions = inputs.portfolio.positions();
    let profile = connected_correlation(&kept_spins, &positions, None)?;
    let xi = correlation_length(&profile, args.r_max)?;

    let curve = empirical_free_energy(&m_spin, args.bins, None)?;
    let landau = fit_landau_polynomial(&curve.m, &curve.f, LANDAU_WALL_POWER)?;
    let m_star = landau.m_star();
    let pca = pca_order_parameter(spins, &cell.damage_fraction)?;

    let report = DiagnosticsReport {
        mw: cell.mw,
        sigma: cell.sigma,
        temperature: cell.temperature,
        n_realizations: cell.damage_fraction.len(),
        n_sites: spins.n_sites,
        equilibrium_fraction: args.equilibrium_fraction,
        retained: keep.len(),
        chi_fluctuation: chi,
        correlation_length_km: xi,
        c0: profile.c0,
        dr_km: profile.dr,
        landau: LandauSummary {
            c: landau.c,
            k: landau.k,
            m_star,
            chi: landau.chi_at(m_star),
            minima: landau.minima(),
        },
        pca_explained_top: pca.explained.iter().copied().take(5).collect(),
    };

    let out_dir = &cfg.output.dir;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    output::write_atomic(&out_dir.join("diagnostics.json"), &output::json_pretty(&report))?;
    output::write_atomic(&out_dir.join("correlation.tsv"), &output::correlation_tsv(&profile))?;
    output::write_atomic(&out_dir.join("landau.tsv"), &output::landau_tsv(&curve, &landau))?;
    println!(
        "diagnostics: chi {:.4}, correlation length {}, PC1 share {:.3} -> {}",
        report.chi_fluctuation,
        match xi {
            CorrelationLength::Finite(v) => format!("{v:.3} km"),
            CorrelationLength::Infinite => "does not decay".to_string(),
        },
        report.pca_explained_top.first().copied().unwrap_or(0.0),
        out_dir.display()
    );
    Ok(())
}

pub fn run_cost(args: &CostArgs) -> Result<()> {
    let run = args.source.resolve()?;
    let cfg = &run.config;
    let (inputs, grid, opts) = build_sweep(&run)?;
    let result = with_threads(cfg.workers, || sweep_grid(&inputs, &grid, &opts, cfg.seed))?;

    let out_dir = &cfg.output.dir;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("cost.tsv");
    output::write_atomic(&path, &output::cost_tsv(&result.cells))?;

    let worst = result
        .cells
        .iter()
        .max_by(|a, b| {
            tail_q99(a).partial_cmp(&tail_q99(b)).expect("finite costs")
        })
        .expect("sweep produced cells");
    println!(
        "cost: worst q99 {:.4} at mw {} sigma {} -> {}",
        tail_q99(worst),
        worst.mw,
        worst.sigma,
        path.display()
    );
    Ok(())
}

fn tail_q99(cell: &crate::ensemble::CellResult) -> f64 {
    let mut sorted = cell.cost_fraction.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite cost fractions"));
    crate::numeric::quantile(&sorted, 0.99)
}
