//! Mean-field random-field Ising layer: self-consistent magnetization,
//! free-energy landscapes, susceptibilities, and the fit that maps the
//! empirical damage grid onto (field, disorder) coordinates.
//!
//! Conventions: coupling J = 1, so the self-consistency relation reads
//! m = erf((m + a1) / (sqrt(2) a2)) with a1 the applied field and a2 the
//! disorder width. Magnetization lives in [-1, 1]; damage fraction maps
//! through m_d = (m + 1) / 2.

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erf_inv};

use crate::error::{Error, Result};

/// Field (a1) and disorder width (a2) of the mean-field model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldParams {
    pub a1: f64,
    pub a2: f64,
}

impl MeanFieldParams {
    pub fn validate(&self) -> Result<()> {
        if !self.a1.is_finite() {
            return Err(Error::validation(format!("a1 must be finite, got {}", self.a1)));
        }
        if !(self.a2 > 0.0) || !self.a2.is_finite() {
            return Err(Error::validation(format!(
                "a2 must be positive and finite, got {}",
                self.a2
            )));
        }
        Ok(())
    }
}

/// Disorder width at which the zero-field bistable region closes:
/// sqrt(2/pi), from the slope of erf at the origin reaching one.
pub fn critical_disorder_zero_field() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

/// Residual of the self-consistency relation; roots are magnetizations.
pub fn self_consistency_gap(m: f64, params: &MeanFieldParams) -> f64 {
    m - erf((m + params.a1) / (std::f64::consts::SQRT_2 * params.a2))
}

/// Map slope q = sqrt(2/pi) / a2 * exp(-(m + a1)^2 / (2 a2^2)). A fixed
/// point is locally stable when q < 1.
pub fn stability_q(m: f64, params: &MeanFieldParams) -> f64 {
    let v = (m + params.a1) / (std::f64::consts::SQRT_2 * params.a2);
    critical_disorder_zero_field() / params.a2 * (-v * v).exp()
}

/// Mean-field free energy per site:
/// F(m) = m^2/2 - (m + a1) erf(v) - sqrt(2/pi) a2 exp(-v^2),
/// v = (m + a1) / (sqrt(2) a2). Its derivative is the consistency gap.
pub fn free_energy(m: f64, params: &MeanFieldParams) -> f64 {
    let h = m + params.a1;
    let v = h / (std::f64::consts::SQRT_2 * params.a2);
    0.5 * m * m - h * erf(v) - (2.0 / std::f64::consts::PI).sqrt() * params.a2 * (-v * v).exp()
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Convergence tolerance on the iterate; the returned root satisfies
    /// |gap| < 10 * tol.
    pub tol: f64,
    /// Damped-iteration budget before switching to bracketed bisection.
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-12, max_iter: 500 }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::validation(format!("solver tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::validation("solver max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// Solves the self-consistency relation from a starting point.
///
/// Damped iteration m <- (m + erf(v)) / 2 has map slope (1 + q) / 2 > 0,
/// so iterates approach the nearest fixed point monotonically and never
/// cross a root. Near criticality q -> 1 and the iteration stalls; the
/// fallback brackets the first sign change of the gap in the direction of
/// movement and bisects. Bracketing only on that side matters: the gap
/// has up to three roots, and a full-interval bracket can converge to a
/// different branch than the one the iteration was approaching.
pub fn solve_magnetization(
    params: &MeanFieldParams,
    m0: f64,
    opts: &SolverOptions,
) -> Result<f64> {
    params.validate()?;
    opts.validate()?;
    if !(-1.0..=1.0).contains(&m0) {
        return Err(Error::validation(format!("start point {m0} must lie in [-1, 1]")));
    }
    let gap = |m: f64| self_consistency_gap(m, params);

    let mut m = m0;
    for _ in 0..opts.max_iter {
        let g = gap(m);
        if g == 0.0 {
            return Ok(m);
        }
        let next = m - 0.5 * g;
        if (next - m).abs() < opts.tol {
            m = next;
            break;
        }
        m = next;
    }

    let g_here = gap(m);
    if g_here.abs() < 10.0 * opts.tol {
        return Ok(m);
    }

    // Bracket the first root ahead of the stalled iterate. All roots lie
    // in [-1, 1] because |erf| <= 1.
    let dir = -g_here.signum();
    let bound = dir;
    let mut step = 1e-6f64.max(opts.tol);
    let mut a = m;
    let mut b;
    loop {
        b = m + step * dir;
        if (dir > 0.0 && b >= bound) || (dir < 0.0 && b <= bound) {
            b = bound;
        }
        let gb = gap(b);
        if gb == 0.0 {
            return Ok(b);
        }
        if gb.signum() != g_here.signum() {
            break;
        }
        if b == bound {
            return Err(Error::numeric(format!(
                "magnetization solver found no sign change toward {bound} from {m} \
                 (a1={}, a2={})",
                params.a1, params.a2
            )));
        }
        a = b;
        step *= 2.0;
    }

    let mut fa = gap(a);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let fm = gap(mid);
        if fm == 0.0 || (b - a).abs() < opts.tol {
            return finish(mid, fm, opts);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    let mid = 0.5 * (a + b);
    finish(mid, gap(mid), opts)
}

fn finish(m: f64, g: f64, opts: &SolverOptions) -> Result<f64> {
    if g.abs() < 10.0 * opts.tol {
        Ok(m)
    } else {
        Err(Error::numeric(format!(
            "magnetization solver left residual {g} above tolerance at m = {m}"
        )))
    }
}

/// Separation below which the two branch solutions count as one.
pub const BISTABLE_GAP: f64 = 1e-4;

/// Branch solutions obtained from the two saturated starts m0 = -1, +1.
#[derive(Debug, Clone, Copy)]
pub struct StableSolutions {
    pub lower: f64,
    pub upper: f64,
}

impl StableSolutions {
    pub fn bistable(&self) -> bool {
        self.upper - self.lower > BISTABLE_GAP
    }

    /// The unique solution when monostable.
    pub fn single(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Solves from both saturated starts. When the parameters sit inside the
/// bistable wedge the two starts land on distinct branches.
pub fn stable_solutions(params: &MeanFieldParams, opts: &SolverOptions) -> Result<StableSolutions> {
    let lower = solve_magnetization(params, -1.0, opts)?;
    let upper = solve_magnetization(params, 1.0, opts)?;
    Ok(StableSolutions { lower, upper })
}

/// Susceptibilities at a point on the magnetization curve.
#[derive(Debug, Clone, Copy)]
pub struct Susceptibility {
    /// Map slope q at the solution; divergence marker is q -> 1.
    pub q: f64,
    /// dm/da1, equal to q / (1 - q). Infinite at q >= 1.
    pub chi_linear: f64,
    /// Inverse free-energy curvature 1 / (1 - q). Infinite at q >= 1.
    pub chi_curvature: f64,
}

pub fn mean_field_susceptibility(m: f64, params: &MeanFieldParams) -> Susceptibility {
    let q = stability_q(m, params);
    if q >= 1.0 {
        Susceptibility {
            q,
            chi_linear: f64::INFINITY,
            chi_curvature: f64::INFINITY,
        }
    } else {
        Susceptibility {
            q,
            chi_linear: q / (1.0 - q),
            chi_curvature: 1.0 / (1.0 - q),
        }
    }
}

/// Scaling applied to free-energy slices before plotting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum SliceScaling {
    /// Subtract each slice's minimum so every well bottoms at zero.
    MinShift,
    /// Min-shift, then divide by the largest shifted value on the map.
    Unit,
    /// Unit scaling followed by x^gamma to stretch contrast near wells.
    Power { gamma: f64 },
}

/// Free-energy landscape over a magnetization grid, one row per parameter
/// slice, scaled for plotting.
pub fn free_energy_map(
    slices: &[MeanFieldParams],
    m_grid: &[f64],
    scaling: SliceScaling,
) -> Result<Vec<Vec<f64>>> {
    if slices.is_empty() || m_grid.is_empty() {
        return Err(Error::validation("free-energy map needs at least one slice and one m value"));
    }
    if let SliceScaling::Power { gamma } = scaling {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::validation(format!("power scaling gamma must be positive, got {gamma}")));
        }
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(slices.len());
    for params in slices {
        params.validate()?;
        let mut row: Vec<f64> = m_grid.iter().map(|&m| free_energy(m, params)).collect();
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        for v in &mut row {
            *v -= min;
        }
        rows.push(row);
    }
    if matches!(scaling, SliceScaling::Unit | SliceScaling::Power { .. }) {
        let max = rows
            .iter()
            .flat_map(|r| r.iter().copied())
            .fold(0.0f64, f64::max);
        if max > 0.0 {
            for row in &mut rows {
                for v in row {
                    *v /= max;
                }
            }
        }
        if let SliceScaling::Power { gamma } = scaling {
            for row in &mut rows {
                for v in row {
                    *v = v.powf(gamma);
                }
            }
        }
    }
    Ok(rows)
}

/// One grid cell offered to the fit: hazard coordinate, diversity
/// coordinate, and the observed spin order parameter in [-1, 1].
#[derive(Debug, Clone, Copy)]
pub struct FitCell {
    pub mw: f64,
    pub sigma: f64,
    pub m_star: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Cells at or below this diversity are dropped: the low-sigma wing is
    /// deep in the bistable wedge where the branch assignment, not the
    /// parameter map, controls the observed value.
    pub min_sigma: f64,
    /// Ridge weight on the disorder slope, keeping the nearly flat
    /// direction of the loss from drifting.
    pub ridge: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { min_sigma: 0.6, ridge: 1e-3, max_iter: 200 }
    }
}

/// Fitted parameter map: a1 quadratic in hazard, a2 affine in diversity.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MeanFieldFit {
    pub p: [f64; 3],
    pub q: [f64; 2],
    pub rms_residual: f64,
    pub n_cells: usize,
}

/// Floor applied to a2 when the affine map is extrapolated.
pub const A2_FLOOR: f64 = 1e-6;

impl MeanFieldFit {
    pub fn a1(&self, mw: f64) -> f64 {
        self.p[0] + self.p[1] * mw + self.p[2] * mw * mw
    }

    pub fn a2(&self, sigma: f64) -> f64 {
        (self.q[0] + self.q[1] * sigma).max(A2_FLOOR)
    }

    pub fn params(&self, mw: f64, sigma: f64) -> MeanFieldParams {
        MeanFieldParams { a1: self.a1(mw), a2: self.a2(sigma) }
    }
}

const SATURATION_LIMIT: f64 = 0.999;

struct FitProblem<'a> {
    cells: &'a [FitCell],
    ridge_sqrt: f64,
}

impl FitProblem<'_> {
    fn n_residuals(&self) -> usize {
        self.cells.len() + 1
    }

    /// Residuals and Jacobian rows at theta = (p0, p1, p2, q0, q1).
    fn eval(&self, theta: &[f64; 5], r: &mut Vec<f64>, jac: &mut Vec<[f64; 5]>) {
        r.clear();
        jac.clear();
        let sqrt2 = std::f64::consts::SQRT_2;
        let two_over_sqrt_pi = 2.0 / std::f64::consts::PI.sqrt();
        for c in self.cells {
            let a1 = theta[0] + theta[1] * c.mw + theta[2] * c.mw * c.mw;
            let a2_raw = theta[3] + theta[4] * c.sigma;
            let clamped = a2_raw < A2_FLOOR;
            let a2 = a2_raw.max(A2_FLOOR);
            let h = c.m_star + a1;
            let v = h / (sqrt2 * a2);
            r.push(c.m_star - erf(v));
            let derf = two_over_sqrt_pi * (-v * v).exp();
            let dr_da1 = -derf / (sqrt2 * a2);
            let dr_da2 = if clamped { 0.0 } else { derf * h / (sqrt2 * a2 * a2) };
            jac.push([
                dr_da1,
                dr_da1 * c.mw,
                dr_da1 * c.mw * c.mw,
                dr_da2,
                dr_da2 * c.sigma,
            ]);
        }
        r.push(self.ridge_sqrt * theta[4]);
        jac.push([0.0, 0.0, 0.0, 0.0, self.ridge_sqrt]);
    }

    fn cost(&self, theta: &[f64; 5]) -> f64 {
        let mut r = Vec::with_capacity(self.n_residuals());
        let mut jac = Vec::new();
        self.eval(theta, &mut r, &mut jac);
        r.iter().map(|x| x * x).sum::<f64>()
    }
}

/// Levenberg-Marquardt with analytic Jacobian and the slope projection
/// q1 >= 0 applied after every accepted step.
fn lm_minimize(problem: &FitProblem, start: [f64; 5], max_iter: usize) -> ([f64; 5], f64) {
    let mut theta = start;
    theta[4] = theta[4].max(0.0);
    let mut r = Vec::new();
    let mut jac = Vec::new();
    problem.eval(&theta, &mut r, &mut jac);
    let mut cost: f64 = r.iter().map(|x| x * x).sum();
    let mut lambda = 1e-3;

    for _ in 0..max_iter {
        // Normal equations with Marquardt scaling on the diagonal.
        let mut jtj = [[0.0f64; 5]; 5];
        let mut jtr = [0.0f64; 5];
        for (row, &res) in jac.iter().zip(&r) {
            for i in 0..5 {
                jtr[i] += row[i] * res;
                for j in 0..5 {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }
        let mut improved = false;
        for _ in 0..12 {
            let mut lhs = nalgebra::Matrix5::<f64>::zeros();
            let mut rhs = nalgebra::Vector5::<f64>::zeros();
            for i in 0..5 {
                for j in 0..5 {
                    lhs[(i, j)] = jtj[i][j];
                }
                lhs[(i, i)] += lambda * jtj[i][i].max(1e-12);
                rhs[i] = -jtr[i];
            }
            let Some(delta) = lhs.lu().solve(&rhs) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = theta;
            for i in 0..5 {
                trial[i] += delta[i];
            }
            trial[4] = trial[4].max(0.0);
            let trial_cost = problem.cost(&trial);
            if trial_cost < cost {
                let step: f64 = delta.iter().map(|x| x * x).sum::<f64>().sqrt();
                let drop = cost - trial_cost;
                theta = trial;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                problem.eval(&theta, &mut r, &mut jac);
                improved = true;
                if step < 1e-12 || drop < 1e-15 * (1.0 + cost) {
                    return (theta, cost);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (theta, cost)
}

/// Least-squares quadratic a1(mw) implied by a trial disorder width:
/// inverts the consistency relation cellwise and regresses on (1, mw, mw^2).
fn implied_field_start(cells: &[FitCell], a2_bar: f64) -> [f64; 5] {
    let n = cells.len();
    let mut design = nalgebra::DMatrix::<f64>::zeros(n, 3);
    let mut y = nalgebra::DVector::<f64>::zeros(n);
    for (i, c) in cells.iter().enumerate() {
        design[(i, 0)] = 1.0;
        design[(i, 1)] = c.mw;
        design[(i, 2)] = c.mw * c.mw;
        let m = c.m_star.clamp(-SATURATION_LIMIT, SATURATION_LIMIT);
        y[i] = std::f64::consts::SQRT_2 * a2_bar * erf_inv(m) - c.m_star;
    }
    let p = design
        .svd(true, true)
        .solve(&y, 1e-12)
        .unwrap_or_else(|_| nalgebra::DVector::zeros(3));
    [p[0], p[1], p[2], a2_bar, 0.1]
}

/// Fits the parameter map to retained grid cells.
pub fn fit_mean_field(cells: &[FitCell], opts: &FitOptions) -> Result<MeanFieldFit> {
    if !(opts.ridge >= 0.0) {
        return Err(Error::validation("ridge weight must be >= 0"));
    }
    let retained: Vec<FitCell> = cells
        .iter()
        .copied()
        .filter(|c| c.sigma > opts.min_sigma)
        .collect();
    if retained.is_empty() {
        return Err(Error::validation(format!(
            "no cells above the diversity cut {}; the fit is degenerate",
            opts.min_sigma
        )));
    }
    if retained.iter().all(|c| c.m_star.abs() > SATURATION_LIMIT) {
        return Err(Error::validation(
            "every retained cell is saturated (|m| > 0.999); the fit is degenerate",
        ));
    }
    for c in &retained {
        if !(c.m_star.is_finite() && c.mw.is_finite() && c.sigma.is_finite()) {
            return Err(Error::validation("fit cells must be finite"));
        }
        if c.m_star.abs() > 1.0 {
            return Err(Error::validation(format!(
                "order parameter {} at (mw {}, sigma {}) outside [-1, 1]",
                c.m_star, c.mw, c.sigma
            )));
        }
    }

    let problem = FitProblem { cells: &retained, ridge_sqrt: opts.ridge.sqrt() };
    let mut starts: Vec<[f64; 5]> = [0.3, 0.6, 1.0, 1.5]
        .iter()
        .map(|&a2_bar| implied_field_start(&retained, a2_bar))
        .collect();
    starts.push([0.0, 0.0, 0.0, 1.0, 0.1]);

    let mut best: Option<([f64; 5], f64)> = None;
    for start in starts {
        let (theta, cost) = lm_minimize(&problem, start, opts.max_iter);
        if best.as_ref().map_or(true, |(_, c)| cost < *c) {
            best = Some((theta, cost));
        }
    }
    let (theta, _) = best.expect("at least one start");

    let mut r = Vec::new();
    let mut jac = Vec::new();
    problem.eval(&theta, &mut r, &mut jac);
    let data_ss: f64 = r[..retained.len()].iter().map(|x| x * x).sum();
    Ok(MeanFieldFit {
        p: [theta[0], theta[1], theta[2]],
        q: [theta[3], theta[4]],
        rms_residual: (data_ss / retained.len() as f64).sqrt(),
        n_cells: retained.len(),
    })
}

/// One phase-diagram cell: predicted damage fraction and bistability.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PhasePoint {
    pub m_d: f64,
    pub bistable: bool,
}

/// Predicted phase diagram on a (hazard, diversity) grid; `points` is
/// row-major with hazard as the outer index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub mw: Vec<f64>,
    pub sigma: Vec<f64>,
    pub points: Vec<PhasePoint>,
}

impl PhaseDiagram {
    pub fn point(&self, i_mw: usize, i_sigma: usize) -> &PhasePoint {
        &self.points[i_mw * self.sigma.len() + i_sigma]
    }
}

/// Evaluates the fitted map on a grid. Bistable cells report the branch
/// with the lower free energy; an exact tie keeps the lower branch.
pub fn rfim_phase_diagram(
    fit: &MeanFieldFit,
    mw_grid: &[f64],
    sigma_grid: &[f64],
) -> Result<PhaseDiagram> {
    if mw_grid.is_empty() || sigma_grid.is_empty() {
        return Err(Error::validation("phase diagram needs nonempty grids"));
    }
    let opts = SolverOptions::default();
    let mut points = Vec::with_capacity(mw_grid.len() * sigma_grid.len());
    for &mw in mw_grid {
        for &sigma in sigma_grid {
            let params = fit.params(mw, sigma);
            let sols = stable_solutions(&params, &opts)?;
            let bistable = sols.bistable();
            let m = if bistable {
                let f_lower = free_energy(sols.lower, &params);
                let f_upper = free_energy(sols.upper, &params);
                if f_upper < f_lower { sols.upper } else { sols.lower }
            } else {
                sols.single()
            };
            points.push(PhasePoint { m_d: 0.5 * (m + 1.0), bistable });
        }
    }
    Ok(PhaseDiagram {
        mw: mw_grid.to_vec(),
        sigma: sigma_grid.to_vec(),
        points,
    })
}

/// A critical-coordinate estimate that may fall outside the surveyed
/// window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status", content = "value")]
pub enum CriticalEstimate {
    Value(f64),
    OutOfRange,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CriticalPoints {
    /// Smallest zero of the fitted field inside the hazard window: the
    /// magnitude where the tilt between wells changes sign.
    pub mw_c: CriticalEstimate,
    /// Diversity at which the fitted disorder reaches sqrt(2/pi).
    pub sigma_c: CriticalEstimate,
}

/// Critical coordinates implied by a fitted parameter map.
pub fn critical_points(
    fit: &MeanFieldFit,
    mw_range: (f64, f64),
    sigma_range: (f64, f64),
) -> CriticalPoints {
    let mw_c = smallest_quadratic_root(fit.p, mw_range);
    let sigma_c = if fit.q[1] > 1e-12 {
        let s = (critical_disorder_zero_field() - fit.q[0]) / fit.q[1];
        if s >= sigma_range.0 && s <= sigma_range.1 {
            CriticalEstimate::Value(s)
        } else {
            CriticalEstimate::OutOfRange
        }
    } else {
        CriticalEstimate::OutOfRange
    };
    CriticalPoints { mw_c, sigma_c }
}

fn smallest_quadratic_root(p: [f64; 3], range: (f64, f64)) -> CriticalEstimate {
    let (lo, hi) = range;
    let mut roots: Vec<f64> = Vec::new();
    if p[2].abs() < 1e-14 {
        if p[1].abs() > 1e-14 {
            roots.push(-p[0] / p[1]);
        }
    } else {
        let disc = p[1] * p[1] - 4.0 * p[2] * p[0];
        if disc >= 0.0 {
            let sq = disc.sqrt();
            roots.push((-p[1] - sq) / (2.0 * p[2]));
            roots.push((-p[1] + sq) / (2.0 * p[2]));
        }
    }
    roots
        .into_iter()
        .filter(|r| *r >= lo && *r <= hi)
        .fold(None::<f64>, |acc, r| Some(acc.map_or(r, |a| a.min(r))))
        .map_or(CriticalEstimate::OutOfRange, CriticalEstimate::Value)
}
