//! Acceptance suite: thirteen end-to-end checks covering the mean-field
//! layer, the Monte Carlo phase phenomenology, and the critical-statistics
//! estimators. Every check prints one PASS or FAIL line (visible with
//! `cargo test --test acceptance -- --nocapture`) and the suite fails if
//! any check fails. Tolerances and runtime budgets are pinned below.

use std::f64::consts::SQRT_2;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::ThreadPoolBuilder;
use statrs::function::erf::erf;

use urbanphase::critstats::{
    connected_correlation, correlation_length, empirical_free_energy, fit_landau_polynomial,
    pca_order_parameter, susceptibility_fluctuation, CorrelationLength,
};
use urbanphase::ensemble::{
    critical_diversity_empirical, ladder, run_cell, sweep_grid, CellCoords, CellResult,
    EnsembleOptions, GridSpec, SpinMatrix, SweepInputs,
};
use urbanphase::hazard::{
    CorrelationModel, DemandFieldBasis, Epicenter, GmpeDispersion, GmpeModel, Scenario,
};
use urbanphase::inventory::{
    apply_diversity, generate_synthetic_portfolio, pool_by_class, CapacityCorrelationSpec,
    CapacityMode, CapacitySampler, ClassSpec, LayoutKind, Portfolio, Position, SyntheticSpec,
    ValueDist,
};
use urbanphase::linalg::correlation_factor;
use urbanphase::numeric::{mean, quantile};
use urbanphase::output::{cells_tsv, sigma_c_tsv, OutputWriter, SigmaCriticalRow};
use urbanphase::rfim::{
    critical_disorder_zero_field, fit_mean_field, free_energy, mean_field_susceptibility,
    rfim_phase_diagram, self_consistency_gap, stable_solutions, CriticalEstimate, FitCell,
    FitOptions, MeanFieldFit, MeanFieldParams, SolverOptions,
};
use urbanphase::rng::{self, stream_rng};

// Pinned tolerances, one per criterion clause.
const TOL_CRITICAL_DISORDER: f64 = 1e-3; // 1: bisected a2_c vs sqrt(2/pi)
const TOL_ROOT_AGREEMENT: f64 = 1e-8; // 2: solver vs scan-and-bisect oracle
const TOL_GRADIENT_REL: f64 = 1e-6; // 3: finite differences vs analytic gradient
const TOL_STATIONARY: f64 = 1e-6; // 3: stationary points vs solver roots
const TOL_COEFF_REL: f64 = 0.02; // 4: coefficient recovery
const TOL_SOLVE_BACK_RMS: f64 = 0.01; // 4: round-trip m_d RMS
const MIN_EXTREME_FRACTION: f64 = 0.60; // 5: mass at m_d < 0.1 or > 0.9
const TOL_SUSCEPTIBILITY_REL: f64 = 1e-12; // 8: fluctuation chi vs raw-moment oracle
const TOL_XI_REL: f64 = 0.15; // 9: spin xi vs generating-field xi
const TOL_WELL_POSITION: f64 = 0.05; // 10: fitted minima vs +-1
const TOL_CHI_SYMMETRY: f64 = 0.10; // 10: chi ratio across wells
const MIN_PCA_CORRELATION: f64 = 0.99; // 11: |corr(PC1 scores, m_d)|
const TOL_MEAN_COST_REL: f64 = 0.10; // 12b: mean cost shift between modes

// Fixture seeds. Frozen so every run draws identical ensembles.
const FIXTURE_SEED: u64 = 41;
const TWO_CLASS_SEED: u64 = 52;
const MARGIN_PILOT_SEED: u64 = 701;
const SEED_C5: u64 = 1105;
const SEED_C6: u64 = 1106;
const SEED_C7: u64 = 1107;
const SEED_C12A: u64 = 1212;
const SEED_C12B: u64 = 1213;
const SEED_C13: u64 = 99;

type Check = std::result::Result<String, String>;

macro_rules! require {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

#[test]
fn acceptance() {
    // (number, name, runtime budget in seconds, check)
    let criteria: &[(u32, &str, Option<f64>, fn() -> Check)] = &[
        (1, "mean-field critical disorder", Some(1.0), c01_mean_field_critical_disorder),
        (2, "fixed-point correctness", Some(5.0), c02_fixed_point_correctness),
        (3, "free-energy consistency", None, c03_free_energy_consistency),
        (4, "fit round trip", Some(30.0), c04_fit_round_trip),
        (5, "first-order phenomenology", Some(120.0), c05_first_order_phenomenology),
        (6, "diversity smoothing", Some(180.0), c06_diversity_smoothing),
        (7, "temperature smoothing", Some(300.0), c07_temperature_smoothing),
        (8, "susceptibility identity", None, c08_susceptibility_identity),
        (9, "correlation length recovery", Some(120.0), c09_correlation_length_recovery),
        (10, "landau fit oracle", None, c10_landau_fit_oracle),
        (11, "pca order parameter", None, c11_pca_order_parameter),
        (12, "engineering simplification", Some(300.0), c12_engineering_simplification),
        (13, "determinism", None, c13_determinism),
    ];

    let mut failures = Vec::new();
    for &(number, name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(p.as_ref()))));
        let elapsed = start.elapsed().as_secs_f64();
        let outcome = match (outcome, budget) {
            (Ok(_), Some(limit)) if elapsed > limit => {
                Err(format!("runtime {elapsed:.1}s exceeds the {limit:.0}s budget"))
            }
            (other, _) => other,
        };
        match outcome {
            Ok(detail) => println!("acceptance {number:02} {name}: PASS ({elapsed:.1}s) {detail}"),
            Err(why) => {
                println!("acceptance {number:02} {name}: FAIL ({elapsed:.1}s) {why}");
                failures.push(format!("{number:02} {name}: {why}"));
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failures.len(),
        criteria.len()
    );
    assert!(
        failures.is_empty(),
        "{} acceptance criteria failed:\n{}",
        failures.len(),
        failures.join("\n")
    );
}

fn panic_text(p: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".to_string()
    }
}

// ---------------------------------------------------------------- oracles

/// Bisection on a bracketed sign change, run to floating-point resolution.
fn bisect(g: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut ga = g(a);
    if ga == 0.0 {
        return a;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid == a || mid == b {
            return mid;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if gm.signum() == ga.signum() {
            a = mid;
            ga = gm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Independent root finder for the self-consistency residual: a dense
/// sign-change scan over [-1, 1] refined by bisection. No damped iteration
/// is involved, so agreement with the production solver is meaningful.
fn oracle_roots(a1: f64, a2: f64) -> Vec<f64> {
    let g = |m: f64| m - erf((m + a1) / (SQRT_2 * a2));
    let n = 4000;
    let mut roots = Vec::new();
    let mut prev_m = -1.0f64;
    let mut prev_g = g(prev_m);
    for i in 1..=n {
        let m = -1.0 + 2.0 * i as f64 / n as f64;
        let gm = g(m);
        if prev_g == 0.0 {
            roots.push(prev_m);
        } else if prev_g.signum() != gm.signum() && gm != 0.0 {
            roots.push(bisect(g, prev_m, m));
        }
        prev_m = m;
        prev_g = gm;
    }
    if prev_g == 0.0 {
        roots.push(prev_m);
    }
    roots
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    let mut sab = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        saa += dx * dx;
        sbb += dy * dy;
        sab += dx * dy;
    }
    sab / (saa.sqrt() * sbb.sqrt())
}

/// Plain least squares of ln(c/c0) on r; the decay length is -1/slope.
fn ls_decay_length(r: &[f64], ln_ratio: &[f64]) -> std::result::Result<f64, String> {
    require!(r.len() >= 3, "decay fit needs >= 3 bins, found {}", r.len());
    let n = r.len() as f64;
    let mx = r.iter().sum::<f64>() / n;
    let my = ln_ratio.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in r.iter().zip(ln_ratio) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    require!(slope < 0.0, "profile does not decay (slope {slope:.3e})");
    Ok(-1.0 / slope)
}

// --------------------------------------------------------------- fixtures

/// Homogeneous 200-building portfolio in a 0.5 km box: one class, fixed
/// fragility, strong long-range capacity correlation. The box is kept
/// small relative to the epicentral distance so attenuation differences
/// across the city stay far below the shared demand scatter; shared
/// shifts then dominate and the damage transition is first-order-like.
fn homogeneous_portfolio() -> std::result::Result<Arc<Portfolio>, String> {
    let spec = SyntheticSpec {
        count: 200,
        layout: LayoutKind::Uniform,
        extent_km: (0.5, 0.5),
        origin_km: (0.0, 0.0),
        classes: vec![ClassSpec {
            name: "W1".to_string(),
            weight: 1.0,
            mu: ValueDist::Fixed { value: 0.2f64.ln() },
            beta: ValueDist::Fixed { value: 0.15 },
        }],
        stories: (1, 3),
        year_range: (1950, 2010),
        vs30: 760.0,
        cost: ValueDist::Fixed { value: 1.0 },
        occupancy: "residential".to_string(),
    };
    let portfolio = generate_synthetic_portfolio(&spec, FIXTURE_SEED)
        .map_err(|e| format!("fixture portfolio: {e}"))?
        .with_capacity_correlation(&CapacityCorrelationSpec {
            rho_class: 0.8,
            length_km: 1000.0,
        })
        .map_err(|e| format!("fixture capacity correlation: {e}"))?;
    Ok(Arc::new(portfolio))
}

/// Scenario and hazard model shared by the synthetic fixtures: epicenter
/// 15 km east of the portfolio, tightened dispersion, and a demand
/// correlation range far beyond the city size.
fn fixture_inputs(portfolio: Arc<Portfolio>) -> SweepInputs {
    SweepInputs {
        portfolio,
        scenario: Scenario {
            mw: 6.0,
            epicenter: Epicenter::Planar { x_km: 15.0, y_km: 0.0 },
            strike_deg: 0.0,
            dip_deg: 90.0,
            rake_deg: 180.0,
            ztor_km: 0.0,
        },
        gmpe: GmpeModel {
            dispersion: GmpeDispersion { tau: 0.18, phi: 0.22 },
            ..GmpeModel::default()
        },
        demand_correlation: CorrelationModel { range_km: 500.0 },
    }
}

/// Two-class 400-building portfolio with real within-class fragility
/// spread and heterogeneous costs, for the categorization and dependence
/// experiments.
fn two_class_portfolio() -> std::result::Result<Arc<Portfolio>, String> {
    let spec = SyntheticSpec {
        count: 400,
        layout: LayoutKind::Uniform,
        extent_km: (1.0, 1.0),
        origin_km: (0.0, 0.0),
        classes: vec![
            ClassSpec {
                name: "W1".to_string(),
                weight: 0.5,
                mu: ValueDist::Normal { mean: 0.2f64.ln(), sd: 0.7 },
                beta: ValueDist::Fixed { value: 0.3 },
            },
            ClassSpec {
                name: "C1".to_string(),
                weight: 0.5,
                mu: ValueDist::Normal { mean: 0.3f64.ln(), sd: 0.7 },
                beta: ValueDist::Fixed { value: 0.3 },
            },
        ],
        stories: (1, 5),
        year_range: (1950, 2010),
        vs30: 760.0,
        cost: ValueDist::Lognormal { mu: 0.0, beta: 0.5 },
        occupancy: "mixed".to_string(),
    };
    let portfolio = generate_synthetic_portfolio(&spec, TWO_CLASS_SEED)
        .map_err(|e| format!("two-class portfolio: {e}"))?
        .with_capacity_correlation(&CapacityCorrelationSpec {
            rho_class: 0.95,
            length_km: 1000.0,
        })
        .map_err(|e| format!("two-class capacity correlation: {e}"))?;
    Ok(Arc::new(portfolio))
}

struct TransitionFixture {
    grid: GridSpec,
    cells: Vec<CellResult>,
    mw_idx: usize,
}

static TRANSITION: OnceLock<std::result::Result<TransitionFixture, String>> = OnceLock::new();

/// The shared sweep behind criteria 5, 6, 7, and 11: an 11-point magnitude
/// ladder at sigma = 0, T = 0, 2000 realizations per cell. The transition
/// cell is the one whose mean damage fraction sits closest to 1/2.
fn transition_fixture() -> std::result::Result<&'static TransitionFixture, String> {
    TRANSITION
        .get_or_init(|| {
            let inputs = fixture_inputs(homogeneous_portfolio()?);
            let grid = GridSpec {
                mw: ladder(5.0, 7.0, 0.2).map_err(|e| e.to_string())?,
                sigma: vec![0.0],
                temperature: vec![0.0],
            };
            let opts = EnsembleOptions { n_realizations: 2000, ..Default::default() };
            let result =
                sweep_grid(&inputs, &grid, &opts, SEED_C5).map_err(|e| e.to_string())?;
            let mw_idx = result
                .cells
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (a.mean - 0.5)
                        .abs()
                        .partial_cmp(&(b.mean - 0.5).abs())
                        .expect("finite means")
                })
                .map(|(i, _)| i)
                .expect("nonempty ladder");
            Ok(TransitionFixture { grid, cells: result.cells, mw_idx })
        })
        .as_ref()
        .map_err(Clone::clone)
}

/// Median |C - D| margin at a given magnitude, the fixture's natural
/// temperature scale.
fn median_margin_scale(inputs: &SweepInputs, mw: f64) -> std::result::Result<f64, String> {
    let realization =
        apply_diversity(&inputs.portfolio, 0.0, 0).map_err(|e| e.to_string())?;
    let capacity = CapacitySampler::new(&realization, CapacityMode::Dependent)
        .map_err(|e| e.to_string())?;
    let basis = DemandFieldBasis::new(&inputs.portfolio, &inputs.demand_correlation)
        .map_err(|e| e.to_string())?;
    let demand = basis
        .sampler(&inputs.scenario.with_mw(mw), &inputs.gmpe)
        .map_err(|e| e.to_string())?;
    let mut rng_c = stream_rng(MARGIN_PILOT_SEED, rng::role::CAPACITY);
    let mut rng_d = stream_rng(MARGIN_PILOT_SEED, rng::role::DEMAND);
    let mut scratch = Vec::new();
    let mut c = Vec::new();
    let mut d = Vec::new();
    let mut margins = Vec::new();
    for _ in 0..200 {
        capacity.sample_into(&mut rng_c, &mut scratch, &mut c);
        demand.sample_into(&mut rng_d, &mut scratch, &mut d);
        margins.extend(c.iter().zip(&d).map(|(&cv, &dv)| (cv - dv).abs()));
    }
    margins.sort_by(|a, b| a.partial_cmp(b).expect("finite margins"));
    Ok(quantile(&margins, 0.5))
}

/// Sweep a grid and fit the mean-field parameter map from the per-cell
/// mode estimates.
fn fitted_map(
    inputs: &SweepInputs,
    grid: &GridSpec,
    opts: &EnsembleOptions,
    seed: u64,
) -> std::result::Result<MeanFieldFit, String> {
    let result = sweep_grid(inputs, grid, opts, seed).map_err(|e| e.to_string())?;
    let cells: Vec<FitCell> = result
        .cells
        .iter()
        .map(|c| FitCell { mw: c.mw, sigma: c.sigma, m_star: 2.0 * c.mode - 1.0 })
        .collect();
    fit_mean_field(&cells, &FitOptions::default()).map_err(|e| e.to_string())
}

// --------------------------------------------------------------- criteria

/// Bisects the disorder strength at zero field until the bistable window
/// closes; the boundary must sit at sqrt(2/pi) within +-1e-3.
fn c01_mean_field_critical_disorder() -> Check {
    let opts = SolverOptions::default();
    let bistable_at = |a2: f64| -> std::result::Result<bool, String> {
        stable_solutions(&MeanFieldParams { a1: 0.0, a2 }, &opts)
            .map(|s| s.bistable())
            .map_err(|e| format!("solver failed at a2={a2}: {e}"))
    };
    let mut lo = 0.5f64;
    let mut hi = 1.2f64;
    require!(bistable_at(lo)?, "expected bistability at a2={lo}");
    require!(!bistable_at(hi)?, "expected a unique solution at a2={hi}");
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if bistable_at(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let estimate = 0.5 * (lo + hi);
    let analytic = (2.0 / std::f64::consts::PI).sqrt();
    require!(
        (estimate - analytic).abs() <= TOL_CRITICAL_DISORDER,
        "bisected a2_c {estimate:.6} vs analytic {analytic:.6}"
    );
    Ok(format!("a2_c = {estimate:.6}, analytic {analytic:.6}"))
}

/// 100 random parameter pairs: both branch solutions must agree with the
/// scan-and-bisect oracle to 1e-8.
fn c02_fixed_point_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let opts = SolverOptions { tol: 1e-14, max_iter: 2000 };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a1 = rng.random_range(-2.0..2.0);
        let a2 = rng.random_range(0.1..2.0);
        let params = MeanFieldParams { a1, a2 };
        let sols = stable_solutions(&params, &opts)
            .map_err(|e| format!("solver failed at a1={a1:.4} a2={a2:.4}: {e}"))?;
        let roots = oracle_roots(a1, a2);
        require!(!roots.is_empty(), "oracle found no roots at a1={a1:.4} a2={a2:.4}");
        let lo = roots[0];
        let hi = *roots.last().expect("nonempty");
        let diff = (sols.lower - lo).abs().max((sols.upper - hi).abs());
        require!(
            diff <= TOL_ROOT_AGREEMENT,
            "solver and oracle disagree by {diff:.2e} at a1={a1:.4} a2={a2:.4}"
        );
        worst = worst.max(diff);
    }
    Ok(format!("100 draws, worst disagreement {worst:.2e}"))
}

/// Central finite differences of F across 1001-point grids must match the
/// analytic gradient, and independently refined stationary points must
/// coincide with the solver's branch roots.
fn c03_free_energy_consistency() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let opts = SolverOptions::default();
    let n = 1001usize;
    let h = 2.0 / (n - 1) as f64;
    for _ in 0..20 {
        let a1 = rng.random_range(-2.0..2.0);
        // The lower disorder bound keeps the h^2 F''' / 6 truncation error
        // of the central difference below the pinned tolerance.
        let a2 = rng.random_range(0.7..2.0);
        let params = MeanFieldParams { a1, a2 };
        let ms: Vec<f64> = (0..n).map(|i| -1.0 + i as f64 * h).collect();
        let fs: Vec<f64> = ms.iter().map(|&m| free_energy(m, &params)).collect();
        let gs: Vec<f64> = ms.iter().map(|&m| self_consistency_gap(m, &params)).collect();
        let scale = gs.iter().fold(1.0f64, |acc, &g| acc.max(g.abs()));
        for i in 1..n - 1 {
            let fd = (fs[i + 1] - fs[i - 1]) / (2.0 * h);
            let err = (fd - gs[i]).abs();
            require!(
                err <= TOL_GRADIENT_REL * scale,
                "gradient mismatch {err:.2e} at m={:.3}, a1={a1:.4}, a2={a2:.4}",
                ms[i]
            );
        }
        let mut stationary = Vec::new();
        for i in 0..n - 1 {
            if gs[i] == 0.0 {
                stationary.push(ms[i]);
            } else if gs[i].signum() != gs[i + 1].signum() && gs[i + 1] != 0.0 {
                stationary.push(bisect(|m| self_consistency_gap(m, &params), ms[i], ms[i + 1]));
            }
        }
        if gs[n - 1] == 0.0 {
            stationary.push(ms[n - 1]);
        }
        let sols = stable_solutions(&params, &opts)
            .map_err(|e| format!("solver failed at a1={a1:.4} a2={a2:.4}: {e}"))?;
        for root in [sols.lower, sols.upper] {
            let nearest = stationary
                .iter()
                .fold(f64::INFINITY, |acc, &s| acc.min((s - root).abs()));
            require!(
                nearest <= TOL_STATIONARY,
                "solver root {root:.6} is {nearest:.2e} from the nearest stationary point \
                 at a1={a1:.4}, a2={a2:.4}"
            );
        }
    }
    Ok("20 parameter pairs, gradients and stationary points consistent".to_string())
}

/// Generates a 21x21 phase diagram from a known parameter map, refits it,
/// and solves the fitted map back onto the grid.
fn c04_fit_round_trip() -> Check {
    let x0 = 5.53; // zero-field magnitude, deliberately off-grid
    let truth = MeanFieldFit {
        p: [0.2 * x0 * x0 - 1.2 * x0, 1.2 - 0.4 * x0, 0.2],
        q: [0.45, 0.5],
        rms_residual: 0.0,
        n_cells: 0,
    };
    let mw_grid = ladder(5.0, 6.0, 0.05).map_err(|e| e.to_string())?;
    let sigma_grid = ladder(0.0, 1.0, 0.05).map_err(|e| e.to_string())?;
    let generated =
        rfim_phase_diagram(&truth, &mw_grid, &sigma_grid).map_err(|e| e.to_string())?;
    let mut cells = Vec::with_capacity(mw_grid.len() * sigma_grid.len());
    for (i, &mw) in mw_grid.iter().enumerate() {
        for (j, &sigma) in sigma_grid.iter().enumerate() {
            cells.push(FitCell { mw, sigma, m_star: 2.0 * generated.point(i, j).m_d - 1.0 });
        }
    }
    let fit = fit_mean_field(&cells, &FitOptions::default()).map_err(|e| e.to_string())?;
    for (name, got, want) in [
        ("p0", fit.p[0], truth.p[0]),
        ("p1", fit.p[1], truth.p[1]),
        ("p2", fit.p[2], truth.p[2]),
        ("q0", fit.q[0], truth.q[0]),
        ("q1", fit.q[1], truth.q[1]),
    ] {
        let rel = (got - want).abs() / want.abs();
        require!(
            rel <= TOL_COEFF_REL,
            "{name} recovered at {got:.5} vs {want:.5} ({:.2}% off)",
            rel * 100.0
        );
    }
    let solved = rfim_phase_diagram(&fit, &mw_grid, &sigma_grid).map_err(|e| e.to_string())?;
    let ss: f64 = generated
        .points
        .iter()
        .zip(&solved.points)
        .map(|(a, b)| (a.m_d - b.m_d) * (a.m_d - b.m_d))
        .sum();
    let rms = (ss / generated.points.len() as f64).sqrt();
    require!(rms <= TOL_SOLVE_BACK_RMS, "solve-back RMS {rms:.4} in m_d");
    Ok(format!("coefficients within {:.0}%, solve-back RMS {rms:.1e}", TOL_COEFF_REL * 100.0))
}

/// At the transition cell of the sharp homogeneous sweep, the damage
/// fraction must be bimodal with most realizations at the extremes.
fn c05_first_order_phenomenology() -> Check {
    let fx = transition_fixture()?;
    let cell = &fx.cells[fx.mw_idx];
    require!(
        fx.mw_idx > 0 && fx.mw_idx + 1 < fx.grid.mw.len(),
        "transition cell mw={} sits at the ladder edge; the ladder does not span it",
        cell.mw
    );
    require!(cell.bimodal, "no bimodality at the transition cell mw={}", cell.mw);
    let extreme = cell
        .damage_fraction
        .iter()
        .filter(|&&x| x < 0.1 || x > 0.9)
        .count() as f64
        / cell.damage_fraction.len() as f64;
    require!(
        extreme >= MIN_EXTREME_FRACTION,
        "extreme-state fraction {extreme:.3} below {MIN_EXTREME_FRACTION} at mw={}",
        cell.mw
    );
    Ok(format!(
        "transition mw {} (mean m_d {:.3}), extreme fraction {:.2}",
        cell.mw, cell.mean, extreme
    ))
}

/// Raising diversity at the transition magnitude must destroy bimodality,
/// with the empirical critical diversity interior to the surveyed range.
fn c06_diversity_smoothing() -> Check {
    let fx = transition_fixture()?;
    let mw_t = fx.grid.mw[fx.mw_idx];
    let inputs = fixture_inputs(homogeneous_portfolio()?);
    let grid = GridSpec {
        mw: vec![mw_t],
        sigma: vec![0.0, 0.5, 1.0],
        temperature: vec![0.0],
    };
    // Pool several quenched diversity draws per cell: a single draw's
    // threshold clumping can carve genuine secondary humps into the
    // histogram, which is replica noise rather than phase structure.
    let opts = EnsembleOptions {
        n_realizations: 1250,
        n_portfolio_replicas: 8,
        ..Default::default()
    };
    let result = sweep_grid(&inputs, &grid, &opts, SEED_C6).map_err(|e| e.to_string())?;
    let row = result.sigma_slice(0, 0);
    require!(row[0].bimodal, "sigma=0 not bimodal at mw={mw_t}");
    require!(!row[2].bimodal, "sigma=1 still bimodal at mw={mw_t}");
    let flags: Vec<(f64, bool)> = row.iter().map(|c| (c.sigma, c.bimodal)).collect();
    match critical_diversity_empirical(&flags) {
        CriticalEstimate::Value(s) if s > 0.0 && s < 1.0 => {
            Ok(format!("sigma_c = {s} at mw {mw_t}"))
        }
        other => Err(format!("critical diversity {other:?} is not interior to (0, 1)")),
    }
}

/// The empirical critical diversity must not increase with temperature
/// over a three-point ladder scaled by the fixture's median margin.
fn c07_temperature_smoothing() -> Check {
    let fx = transition_fixture()?;
    let mw_t = fx.grid.mw[fx.mw_idx];
    let inputs = fixture_inputs(homogeneous_portfolio()?);
    let margin = median_margin_scale(&inputs, mw_t)?;
    require!(margin > 0.0, "median margin scale {margin} must be positive");
    let grid = GridSpec {
        mw: vec![mw_t],
        sigma: vec![0.0, 0.5, 1.0],
        temperature: vec![0.0, 0.25 * margin, margin],
    };
    // Same replica pooling as the diversity check, for the same reason.
    let opts = EnsembleOptions {
        n_realizations: 1250,
        n_portfolio_replicas: 8,
        ..Default::default()
    };
    let result = sweep_grid(&inputs, &grid, &opts, SEED_C7).map_err(|e| e.to_string())?;
    let mut estimates = Vec::new();
    for t_idx in 0..grid.temperature.len() {
        let flags: Vec<(f64, bool)> = result
            .sigma_slice(t_idx, 0)
            .iter()
            .map(|c| (c.sigma, c.bimodal))
            .collect();
        match critical_diversity_empirical(&flags) {
            CriticalEstimate::Value(v) => estimates.push(v),
            CriticalEstimate::OutOfRange => {
                return Err(format!(
                    "sigma_c out of range at T={}",
                    grid.temperature[t_idx]
                ));
            }
        }
    }
    require!(
        estimates.windows(2).all(|w| w[1] <= w[0]),
        "sigma_c {estimates:?} is not non-increasing over T"
    );
    Ok(format!("sigma_c over T: {estimates:?}, margin scale {margin:.4}"))
}

/// The fluctuation susceptibility must equal the raw-moment oracle, and
/// the mean-field curvature susceptibility at the closed-form point must
/// be exactly 2.
fn c08_susceptibility_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let samples: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n_sites = 200usize;
    let chi = susceptibility_fluctuation(&samples, n_sites).map_err(|e| e.to_string())?;
    let n = samples.len() as f64;
    let first: f64 = samples.iter().sum::<f64>() / n;
    let second: f64 = samples.iter().map(|x| x * x).sum::<f64>() / n;
    let oracle = n_sites as f64 * (second - first * first);
    let rel = (chi - oracle).abs() / oracle.abs();
    require!(
        rel <= TOL_SUSCEPTIBILITY_REL,
        "fluctuation chi {chi:.15e} vs raw-moment oracle {oracle:.15e} ({rel:.2e} relative)"
    );
    let params = MeanFieldParams { a1: 0.0, a2: 2.0 * critical_disorder_zero_field() };
    let sus = mean_field_susceptibility(0.0, &params);
    require!(
        sus.chi_curvature == 2.0,
        "chi_curvature at the closed-form point is {} rather than exactly 2",
        sus.chi_curvature
    );
    Ok(format!("fluctuation chi matches to {rel:.1e}, closed-form curvature exact"))
}

/// Spins thresholded from a Gaussian field with a 3 km exponential
/// correlation must recover the decay length the generating field itself
/// shows under the same binning and fit window.
fn c09_correlation_length_recovery() -> Check {
    const XI_TRUE: f64 = 3.0;
    const N_SITES: usize = 400;
    const N_REALIZATIONS: usize = 2000;
    const R_MAX: f64 = 7.5;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let positions: Vec<Position> = (0..N_SITES)
        .map(|_| Position {
            x_km: rng.random_range(0.0..16.0),
            y_km: rng.random_range(0.0..16.0),
        })
        .collect();
    let mut corr = DMatrix::identity(N_SITES, N_SITES);
    for i in 0..N_SITES {
        for j in 0..i {
            let v = (-positions[i].distance(&positions[j]) / XI_TRUE).exp();
            corr[(i, j)] = v;
            corr[(j, i)] = v;
        }
    }
    let factor = correlation_factor(&corr).map_err(|e| e.to_string())?;

    let mut field = vec![Vec::with_capacity(N_REALIZATIONS); N_SITES];
    let mut data = Vec::with_capacity(N_SITES * N_REALIZATIONS);
    let mut u = vec![0.0f64; N_SITES];
    for _ in 0..N_REALIZATIONS {
        for v in &mut u {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..N_SITES {
            let mut z = 0.0;
            for j in 0..=i {
                z += factor[(i, j)] * u[j];
            }
            field[i].push(z);
            data.push(z > 0.0);
        }
    }
    let spins = SpinMatrix { n_sites: N_SITES, data };
    let profile = connected_correlation(&spins, &positions, None).map_err(|e| e.to_string())?;
    let xi_spin = match correlation_length(&profile, Some(R_MAX)).map_err(|e| e.to_string())? {
        CorrelationLength::Finite(x) => x,
        CorrelationLength::Infinite => return Err("spin profile did not decay".to_string()),
    };

    // Oracle: the generating field's own covariance profile under the same
    // radial binning, fit by the same log-linear rule.
    let dr = profile.dr;
    let mut diameter = 0.0f64;
    for i in 0..N_SITES {
        for j in 0..i {
            diameter = diameter.max(positions[i].distance(&positions[j]));
        }
    }
    let n_bins = (diameter / dr).floor() as usize + 1;
    let means: Vec<f64> = field.iter().map(|zs| mean(zs)).collect();
    let c0 = field
        .iter()
        .zip(&means)
        .map(|(zs, &m)| zs.iter().map(|&z| (z - m) * (z - m)).sum::<f64>() / zs.len() as f64)
        .sum::<f64>()
        / N_SITES as f64;
    let mut sums = vec![0.0f64; n_bins];
    let mut counts = vec![0usize; n_bins];
    for i in 0..N_SITES {
        for j in 0..i {
            let dot: f64 = field[i].iter().zip(&field[j]).map(|(&a, &b)| a * b).sum();
            let cov = dot / N_REALIZATIONS as f64 - means[i] * means[j];
            let bin = ((positions[i].distance(&positions[j]) / dr) as usize).min(n_bins - 1);
            sums[bin] += cov;
            counts[bin] += 1;
        }
    }
    let mut rs = Vec::new();
    let mut ln_ratio = Vec::new();
    for k in 0..n_bins {
        if counts[k] < 30 {
            continue;
        }
        let r = (k as f64 + 0.5) * dr;
        if r > R_MAX {
            break;
        }
        let c = sums[k] / counts[k] as f64;
        if c <= 0.0 {
            break;
        }
        rs.push(r);
        ln_ratio.push((c / c0).ln());
    }
    let xi_field = ls_decay_length(&rs, &ln_ratio)?;
    let rel = (xi_spin - xi_field).abs() / xi_field;
    require!(
        rel <= TOL_XI_REL,
        "spin xi {xi_spin:.3} km vs field oracle {xi_field:.3} km ({:.1}% apart)",
        rel * 100.0
    );
    Ok(format!(
        "xi_spin {xi_spin:.2} km, field oracle {xi_field:.2} km ({:.1}% apart, true {XI_TRUE} km)",
        rel * 100.0
    ))
}

/// Boltzmann samples from a double well must yield a Landau fit with
/// minima at +-1 and symmetric well curvatures.
fn c10_landau_fit_oracle() -> Check {
    const BETA: f64 = 20.0;
    const N_SAMPLES: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut samples = Vec::with_capacity(N_SAMPLES);
    while samples.len() < N_SAMPLES {
        let m: f64 = rng.random_range(-1.0..1.0);
        let v = -0.5 * m * m + 0.25 * m.powi(4);
        // Acceptance is scaled by the well depth V(+-1) = -1/4 so the
        // envelope touches 1 at the minima.
        if rng.random::<f64>() < (-BETA * (v + 0.25)).exp() {
            samples.push(m);
        }
    }
    let curve = empirical_free_energy(&samples, 41, None).map_err(|e| e.to_string())?;
    let fit = fit_landau_polynomial(&curve.m, &curve.f, 100).map_err(|e| e.to_string())?;
    let minima = fit.minima();
    require!(minima.len() >= 2, "fit found {} minima, expected two wells", minima.len());
    let lo = minima[0];
    let hi = *minima.last().expect("nonempty");
    require!(
        (lo + 1.0).abs() <= TOL_WELL_POSITION,
        "lower well at {lo:.4}, expected -1 within {TOL_WELL_POSITION}"
    );
    require!(
        (hi - 1.0).abs() <= TOL_WELL_POSITION,
        "upper well at {hi:.4}, expected +1 within {TOL_WELL_POSITION}"
    );
    let chi_lo = fit.chi_at(lo);
    let chi_hi = fit.chi_at(hi);
    require!(
        chi_lo > 0.0 && chi_hi > 0.0,
        "well curvatures must be positive, got chi {chi_lo:.4} and {chi_hi:.4}"
    );
    let asym = (chi_hi / chi_lo - 1.0).abs();
    require!(
        asym <= TOL_CHI_SYMMETRY,
        "well susceptibilities {chi_lo:.4} and {chi_hi:.4} differ by {:.1}%",
        asym * 100.0
    );
    Ok(format!("wells at {lo:.3} and {hi:.3}, chi asymmetry {:.1}%", asym * 100.0))
}

/// At the transition cell, the first principal component of the spin
/// ensemble must track the damage fraction almost perfectly.
fn c11_pca_order_parameter() -> Check {
    let fx = transition_fixture()?;
    let inputs = fixture_inputs(homogeneous_portfolio()?);
    let basis = DemandFieldBasis::new(&inputs.portfolio, &inputs.demand_correlation)
        .map_err(|e| e.to_string())?;
    let opts = EnsembleOptions { n_realizations: 2000, keep_spins: true, ..Default::default() };
    let coords = CellCoords { t_idx: 0, mw_idx: fx.mw_idx, sigma_idx: 0 };
    let cell = run_cell(&inputs, &basis, &fx.grid, coords, &opts, SEED_C5)
        .map_err(|e| e.to_string())?;
    let spins = cell.spins.as_ref().ok_or("cell kept no spins")?;
    let pca = pca_order_parameter(spins, &cell.damage_fraction).map_err(|e| e.to_string())?;
    let corr = pearson(&pca.pc1_scores, &cell.damage_fraction).abs();
    require!(
        corr >= MIN_PCA_CORRELATION,
        "|corr(PC1, m_d)| = {corr:.4} below {MIN_PCA_CORRELATION} at mw={}",
        cell.mw
    );
    Ok(format!(
        "|corr(PC1, m_d)| = {corr:.4}, PC1 explains {:.0}% of variance",
        pca.explained[0] * 100.0
    ))
}

/// (a) Pooling fragilities by class must lower the fitted disorder; (b)
/// dropping capacity dependence must thin the cost tail while leaving the
/// mean nearly unchanged.
fn c12_engineering_simplification() -> Check {
    let portfolio = two_class_portfolio()?;
    let pooled = Arc::new(pool_by_class(&portfolio, &[]).map_err(|e| e.to_string())?);
    let inputs = fixture_inputs(Arc::clone(&portfolio));
    let inputs_pooled = fixture_inputs(pooled);

    // A wide ladder pins both erf flanks, and pooling two quenched
    // diversity draws per cell halves the draw-to-draw wobble that
    // otherwise rivals the pooling signal.
    let fit_grid = GridSpec {
        mw: ladder(4.6, 8.4, 0.2).map_err(|e| e.to_string())?,
        sigma: vec![0.65, 0.75, 0.85, 0.95],
        temperature: vec![0.0],
    };
    let fit_opts = EnsembleOptions {
        n_realizations: 2000,
        n_portfolio_replicas: 2,
        ..Default::default()
    };
    let fit_individual = fitted_map(&inputs, &fit_grid, &fit_opts, SEED_C12A)?;
    let fit_pooled = fitted_map(&inputs_pooled, &fit_grid, &fit_opts, SEED_C12A)?;
    let sigma_ref = 0.8;
    let a2_individual = fit_individual.a2(sigma_ref);
    let a2_pooled = fit_pooled.a2(sigma_ref);
    require!(
        a2_pooled < a2_individual,
        "pooled a2({sigma_ref}) = {a2_pooled:.4} is not below individual {a2_individual:.4}"
    );

    let pilot_grid = GridSpec {
        mw: ladder(5.0, 7.0, 0.2).map_err(|e| e.to_string())?,
        sigma: vec![0.0],
        temperature: vec![0.0],
    };
    let pilot_opts = EnsembleOptions { n_realizations: 400, ..Default::default() };
    let pilot = sweep_grid(&inputs, &pilot_grid, &pilot_opts, SEED_C12B)
        .map_err(|e| e.to_string())?;
    let mw_idx = pilot
        .cells
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            (a.mean - 0.5)
                .abs()
                .partial_cmp(&(b.mean - 0.5).abs())
                .expect("finite means")
        })
        .map(|(i, _)| i)
        .expect("nonempty pilot");
    let mw_t = pilot_grid.mw[mw_idx];

    let cell_grid = GridSpec { mw: vec![mw_t], sigma: vec![0.0], temperature: vec![0.0] };
    let run_mode = |mode: CapacityMode| -> std::result::Result<CellResult, String> {
        let opts = EnsembleOptions {
            n_realizations: 10_000,
            capacity_mode: mode,
            ..Default::default()
        };
        sweep_grid(&inputs, &cell_grid, &opts, SEED_C12B)
            .map(|r| r.cells.into_iter().next().expect("one cell"))
            .map_err(|e| e.to_string())
    };
    let dependent = run_mode(CapacityMode::Dependent)?;
    let independent = run_mode(CapacityMode::ConditionallyIndependent)?;
    let q99 = |cell: &CellResult| {
        let mut v = cell.cost_fraction.clone();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite costs"));
        quantile(&v, 0.99)
    };
    let q_dep = q99(&dependent);
    let q_ind = q99(&independent);
    require!(
        q_ind < q_dep,
        "independent q99 {q_ind:.4} is not below dependent {q_dep:.4} at mw={mw_t}"
    );
    let mean_dep = mean(&dependent.cost_fraction);
    let mean_ind = mean(&independent.cost_fraction);
    let rel = (mean_ind - mean_dep).abs() / mean_dep;
    require!(
        rel < TOL_MEAN_COST_REL,
        "mean cost fractions {mean_dep:.4} vs {mean_ind:.4} differ by {:.1}%",
        rel * 100.0
    );
    Ok(format!(
        "a2 {a2_individual:.3} -> {a2_pooled:.3} pooled; q99 {q_dep:.4} -> {q_ind:.4} \
         independent with means {:.1}% apart",
        rel * 100.0
    ))
}

/// The same sweep run under 1-thread and 4-thread pools must leave
/// byte-identical files, manifest included.
fn c13_determinism() -> Check {
    let spec = SyntheticSpec {
        count: 50,
        layout: LayoutKind::Uniform,
        extent_km: (2.0, 2.0),
        origin_km: (0.0, 0.0),
        classes: vec![ClassSpec {
            name: "W1".to_string(),
            weight: 1.0,
            mu: ValueDist::Fixed { value: 0.2f64.ln() },
            beta: ValueDist::Fixed { value: 0.2 },
        }],
        stories: (1, 3),
        year_range: (1950, 2010),
        vs30: 760.0,
        cost: ValueDist::Fixed { value: 1.0 },
        occupancy: "residential".to_string(),
    };
    let portfolio = generate_synthetic_portfolio(&spec, FIXTURE_SEED)
        .map_err(|e| e.to_string())?
        .with_capacity_correlation(&CapacityCorrelationSpec {
            rho_class: 0.8,
            length_km: 1000.0,
        })
        .map_err(|e| e.to_string())?;
    let inputs = fixture_inputs(Arc::new(portfolio));
    let grid = GridSpec {
        mw: vec![5.4, 5.8, 6.2],
        sigma: vec![0.0, 0.5],
        temperature: vec![0.0],
    };
    let opts = EnsembleOptions { n_realizations: 200, ..Default::default() };
    let root = std::env::temp_dir().join(format!("urbanphase-acceptance-{}", std::process::id()));
    const FILES: [&str; 3] = ["cells.tsv", "sigma_c.tsv", "manifest.json"];

    let mut runs: Vec<Vec<Vec<u8>>> = Vec::new();
    for workers in [1usize, 4] {
        let pool = ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| format!("pool construction: {e}"))?;
        let result = pool
            .install(|| sweep_grid(&inputs, &grid, &opts, SEED_C13))
            .map_err(|e| e.to_string())?;
        let dir = root.join(format!("workers-{workers}"));
        let mut writer = OutputWriter::new(&dir).map_err(|e| e.to_string())?;
        writer
            .write("cells.tsv", &cells_tsv(&result.cells))
            .map_err(|e| e.to_string())?;
        let mut rows = Vec::new();
        for (t_idx, &temperature) in grid.temperature.iter().enumerate() {
            for (mw_idx, &mw) in grid.mw.iter().enumerate() {
                let flags: Vec<(f64, bool)> = result
                    .sigma_slice(t_idx, mw_idx)
                    .iter()
                    .map(|c| (c.sigma, c.bimodal))
                    .collect();
                rows.push(SigmaCriticalRow {
                    temperature,
                    mw,
                    estimate: critical_diversity_empirical(&flags),
                });
            }
        }
        writer
            .write("sigma_c.tsv", &sigma_c_tsv(&rows))
            .map_err(|e| e.to_string())?;
        writer
            .finish(SEED_C13, "acceptance determinism fixture")
            .map_err(|e| e.to_string())?;
        let mut bytes = Vec::new();
        for name in FILES {
            let contents = std::fs::read(dir.join(name))
                .map_err(|e| format!("reading back {name}: {e}"))?;
            require!(!contents.is_empty(), "{name} is empty");
            bytes.push(contents);
        }
        runs.push(bytes);
    }
    let identical = FILES
        .iter()
        .enumerate()
        .all(|(i, _)| runs[0][i] == runs[1][i]);
    let _ = std::fs::remove_dir_all(&root);
    require!(identical, "files differ between 1-thread and 4-thread runs");
    Ok(format!("{} files byte-identical across worker counts 1 and 4", FILES.len()))
}
