//! C ABI over the simulator: plain functions for the mean-field layer and
//! an opaque handle for full grid sweeps.
//!
//! Every fallible entry point returns an [`UpStatus`]; on failure a
//! thread-local message readable through [`up_last_error`] says what went
//! wrong. No call unwinds across the boundary: panics are caught and
//! reported as `UP_STATUS_PANIC`. The generated header lands in
//! `include/urbanphase.h` at build time.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use urbanphase::config::RunConfig;
use urbanphase::ensemble::{sweep_grid, SweepInputs, SweepResult};
use urbanphase::error::Error;
use urbanphase::rfim::{
    critical_disorder_zero_field, free_energy, mean_field_susceptibility, self_consistency_gap,
    stable_solutions, MeanFieldParams, SolverOptions,
};

/// Call outcome. Nonzero values reuse the CLI exit codes where one
/// exists: invalid input or configuration 2, numeric failure 3, i/o 4.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpStatus {
    Ok = 0,
    NullArgument = 1,
    Invalid = 2,
    Numeric = 3,
    Io = 4,
    Panic = 5,
}

/// The two stable branches of the self-consistency relation at one
/// parameter point. Outside the bistable wedge both fields agree.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct UpBranches {
    pub lower: f64,
    pub upper: f64,
    pub bistable: bool,
}

/// Susceptibilities at a point on the magnetization curve. `q` is the
/// map slope; both chis diverge as q approaches 1.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct UpSusceptibility {
    pub q: f64,
    pub chi_linear: f64,
    pub chi_curvature: f64,
}

/// Summary statistics of one grid cell.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct UpCellStats {
    pub mw: f64,
    pub sigma: f64,
    pub temperature: f64,
    /// Mean and standard deviation of the damage fraction.
    pub mean: f64,
    pub std: f64,
    /// Most probable damage fraction (histogram mode).
    pub mode: f64,
    pub bimodal: bool,
}

/// Completed Monte Carlo sweep; create with [`up_sweep_run`], release
/// with [`up_sweep_free`].
pub struct UpSweep {
    result: SweepResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    // Interior nuls would truncate silently; make them visible instead.
    let sanitized = msg.replace('\0', "\\0");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).expect("nul-free"));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::default());
}

fn status_of(err: &Error) -> UpStatus {
    match err.exit_code() {
        2 => UpStatus::Invalid,
        3 => UpStatus::Numeric,
        _ => UpStatus::Io,
    }
}

fn fail(err: Error) -> UpStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn fail_null(name: &str) -> UpStatus {
    set_error(format!("{name} must not be null"));
    UpStatus::NullArgument
}

/// Runs the body with a panic guard; clears the error slot on success.
fn guarded(f: impl FnOnce() -> UpStatus) -> UpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == UpStatus::Ok {
                clear_error();
            }
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic with non-string payload".to_string());
            set_error(format!("internal panic: {msg}"));
            UpStatus::Panic
        }
    }
}

/// Message for the most recent failure on the calling thread; the empty
/// string after a success. The pointer stays valid until the next call
/// into this library from the same thread.
#[no_mangle]
pub extern "C" fn up_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Disorder width closing the zero-field bistable region, sqrt(2/pi).
#[no_mangle]
pub extern "C" fn up_critical_disorder() -> f64 {
    critical_disorder_zero_field()
}

/// Solves the self-consistency relation at (`a1`, `a2`) from both
/// saturated starts and reports the stable branches.
///
/// # Safety
/// `out` must point to a writable `UpBranches`.
#[no_mangle]
pub unsafe extern "C" fn up_mean_field_solve(a1: f64, a2: f64, out: *mut UpBranches) -> UpStatus {
    guarded(|| {
        if out.is_null() {
            return fail_null("out");
        }
        let params = MeanFieldParams { a1, a2 };
        match stable_solutions(&params, &SolverOptions::default()) {
            Ok(s) => {
                out.write(UpBranches {
                    lower: s.lower,
                    upper: s.upper,
                    bistable: s.bistable(),
                });
                UpStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Mean-field free energy at magnetization `m`.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn up_free_energy(a1: f64, a2: f64, m: f64, out: *mut f64) -> UpStatus {
    guarded(|| {
        if out.is_null() {
            return fail_null("out");
        }
        let params = MeanFieldParams { a1, a2 };
        if let Err(e) = params.validate() {
            return fail(e);
        }
        out.write(free_energy(m, &params));
        UpStatus::Ok
    })
}

/// Self-consistency gap m - erf((m + a1) / (sqrt(2) a2)); zero at roots.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn up_self_consistency_gap(
    a1: f64,
    a2: f64,
    m: f64,
    out: *mut f64,
) -> UpStatus {
    guarded(|| {
        if out.is_null() {
            return fail_null("out");
        }
        let params = MeanFieldParams { a1, a2 };
        if let Err(e) = params.validate() {
            return fail(e);
        }
        out.write(self_consistency_gap(m, &params));
        UpStatus::Ok
    })
}

/// Susceptibilities at magnetization `m`.
///
/// # Safety
/// `out` must point to a writable `UpSusceptibility`.
#[no_mangle]
pub unsafe extern "C" fn up_susceptibility(
    a1: f64,
    a2: f64,
    m: f64,
    out: *mut UpSusceptibility,
) -> UpStatus {
    guarded(|| {
        if out.is_null() {
            return fail_null("out");
        }
        let params = MeanFieldParams { a1, a2 };
        if let Err(e) = params.validate() {
            return fail(e);
        }
        let s = mean_field_susceptibility(m, &params);
        out.write(UpSusceptibility {
            q: s.q,
            chi_linear: s.chi_linear,
            chi_curvature: s.chi_curvature,
        });
        UpStatus::Ok
    })
}

fn run_sweep_from_toml(config_toml: &str, base_dir: &Path) -> Result<SweepResult, Error> {
    let cfg = RunConfig::from_str_named(config_toml, Path::new("<memory>"))?;
    let inputs = SweepInputs {
        portfolio: cfg.build_portfolio(base_dir)?,
        scenario: cfg.scenario,
        gmpe: cfg.gmpe.resolve(base_dir)?,
        demand_correlation: cfg.demand_correlation,
    };
    let grid = cfg.grid.resolve()?;
    if cfg.workers == 0 {
        sweep_grid(&inputs, &grid, &cfg.ensemble, cfg.seed)
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::validation(format!("worker pool: {e}")))?;
        pool.install(|| sweep_grid(&inputs, &grid, &cfg.ensemble, cfg.seed))
    }
}

/// Runs the Monte Carlo grid sweep described by a run-configuration TOML
/// document and returns an owning handle. Results are identical to the
/// CLI `sweep` command with the same document and seed. Relative paths in
/// the document resolve against `base_dir`, or against the process
/// working directory when `base_dir` is null.
///
/// # Safety
/// `config_toml` must be a NUL-terminated UTF-8 string; `base_dir`, when
/// non-null, likewise. `out` must point to a writable pointer slot. On
/// success the caller owns the handle and must release it with
/// [`up_sweep_free`].
#[no_mangle]
pub unsafe extern "C" fn up_sweep_run(
    config_toml: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut UpSweep,
) -> UpStatus {
    guarded(|| {
        if out.is_null() {
            return fail_null("out");
        }
        if config_toml.is_null() {
            return fail_null("config_toml");
        }
        let text = match CStr::from_ptr(config_toml).to_str() {
            Ok(t) => t,
            Err(e) => {
                set_error(format!("config_toml is not UTF-8: {e}"));
                return UpStatus::Invalid;
            }
        };
        let base = if base_dir.is_null() {
            Path::new(".")
        } else {
            match CStr::from_ptr(base_dir).to_str() {
                Ok(d) => Path::new(d),
                Err(e) => {
                    set_error(format!("base_dir is not UTF-8: {e}"));
                    return UpStatus::Invalid;
                }
            }
        };
        match run_sweep_from_toml(text, base) {
            Ok(result) => {
                out.write(Box::into_raw(Box::new(UpSweep { result })));
                UpStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a sweep handle. Null is a no-op.
///
/// # Safety
/// `sweep` must be a handle from [`up_sweep_run`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn up_sweep_free(sweep: *mut UpSweep) {
    if !sweep.is_null() {
        drop(Box::from_raw(sweep));
    }
}

/// Grid extent of a sweep: temperature, hazard, and diversity axis sizes.
///
/// # Safety
/// `sweep` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn up_sweep_shape(
    sweep: *const UpSweep,
    n_temperature: *mut usize,
    n_mw: *mut usize,
    n_sigma: *mut usize,
) -> UpStatus {
    guarded(|| {
        if sweep.is_null() {
            return fail_null("sweep");
        }
        if n_temperature.is_null() || n_mw.is_null() || n_sigma.is_null() {
            return fail_null("shape out pointer");
        }
        let grid = &(*sweep).result.grid;
        n_temperature.write(grid.temperature.len());
        n_mw.write(grid.mw.len());
        n_sigma.write(grid.sigma.len());
        UpStatus::Ok
    })
}

unsafe fn cell_at<'a>(
    sweep: *const UpSweep,
    t_idx: usize,
    mw_idx: usize,
    sigma_idx: usize,
) -> Result<&'a urbanphase::ensemble::CellResult, UpStatus> {
    let grid = &(*sweep).result.grid;
    if t_idx >= grid.temperature.len() || mw_idx >= grid.mw.len() || sigma_idx >= grid.sigma.len()
    {
        set_error(format!(
            "cell index ({t_idx}, {mw_idx}, {sigma_idx}) outside grid {}x{}x{}",
            grid.temperature.len(),
            grid.mw.len(),
            grid.sigma.len()
        ));
        return Err(UpStatus::Invalid);
    }
    Ok((*sweep).result.cell(t_idx, mw_idx, sigma_idx))
}

/// Summary statistics of the cell at (`t_idx`, `mw_idx`, `sigma_idx`).
///
/// # Safety
/// `sweep` must be a live handle; `out` must point to a writable
/// `UpCellStats`.
#[no_mangle]
pub unsafe extern "C" fn up_sweep_cell(
    sweep: *const UpSweep,
    t_idx: usize,
    mw_idx: usize,
    sigma_idx: usize,
    out: *mut UpCellStats,
) -> UpStatus {
    guarded(|| {
        if sweep.is_null() {
            return fail_null("sweep");
        }
        if out.is_null() {
            return fail_null("out");
        }
        let cell = match cell_at(sweep, t_idx, mw_idx, sigma_idx) {
            Ok(c) => c,
            Err(status) => return status,
        };
        out.write(UpCellStats {
            mw: cell.mw,
            sigma: cell.sigma,
            temperature: cell.temperature,
            mean: cell.mean,
            std: cell.std,
            mode: cell.mode,
            bimodal: cell.bimodal,
        });
        UpStatus::Ok
    })
}

/// Borrows one cell's per-realization damage fractions (damaged share of
/// buildings). The view lives as long as the handle.
///
/// # Safety
/// `sweep` must be a live handle; `ptr` and `len` must be writable. The
/// returned pointer must not be read after `up_sweep_free`.
#[no_mangle]
pub unsafe extern "C" fn up_sweep_damage_samples(
    sweep: *const UpSweep,
    t_idx: usize,
    mw_idx: usize,
    sigma_idx: usize,
    ptr: *mut *const f64,
    len: *mut usize,
) -> UpStatus {
    sweep_samples(sweep, t_idx, mw_idx, sigma_idx, ptr, len, SampleKind::Damage)
}

/// Borrows one cell's per-realization cost fractions (repair cost share
/// of replacement value). The view lives as long as the handle.
///
/// # Safety
/// Same contract as [`up_sweep_damage_samples`].
#[no_mangle]
pub unsafe extern "C" fn up_sweep_cost_samples(
    sweep: *const UpSweep,
    t_idx: usize,
    mw_idx: usize,
    sigma_idx: usize,
    ptr: *mut *const f64,
    len: *mut usize,
) -> UpStatus {
    sweep_samples(sweep, t_idx, mw_idx, sigma_idx, ptr, len, SampleKind::Cost)
}

enum SampleKind {
    Damage,
    Cost,
}

unsafe fn sweep_samples(
    sweep: *const UpSweep,
    t_idx: usize,
    mw_idx: usize,
    sigma_idx: usize,
    ptr: *mut *const f64,
    len: *mut usize,
    kind: SampleKind,
) -> UpStatus {
    guarded(|| {
        if sweep.is_null() {
            return fail_null("sweep");
        }
        if ptr.is_null() || len.is_null() {
            return fail_null("samples out pointer");
        }
        let cell = match cell_at(sweep, t_idx, mw_idx, sigma_idx) {
            Ok(c) => c,
            Err(status) => return status,
        };
        let samples: &[f64] = match kind {
            SampleKind::Damage => &cell.damage_fraction,
            SampleKind::Cost => &cell.cost_fraction,
        };
        ptr.write(samples.as_ptr());
        len.write(samples.len());
        UpStatus::Ok
    })
}
