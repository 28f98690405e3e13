//! On-disk result formats: TSV tables, JSON reports, and a manifest.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! reread reproduces the original bits and a rerun with the same seed and
//! config yields byte-identical files. Writes land in a temp file and are
//! renamed into place, so a crash never leaves a truncated table behind.
//! Nothing here records wall-clock time or worker counts; file contents
//! depend only on inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::critstats::{CorrelationProfile, FreeEnergyCurve, LandauFit};
use crate::ensemble::{CellResult, Heatmap};
use crate::error::{Error, Result};
use crate::numeric::{mean, quantile, sample_std};
use crate::rfim::{CriticalEstimate, CriticalPoints, FitCell, MeanFieldFit, PhaseDiagram};

/// Write `contents` to `path` through a sibling temp file plus rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp_name = path
        .file_name()
        .ok_or_else(|| Error::validation(format!("cannot write to {}: no file name", path.display())))?
        .to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let mut out = String::with_capacity(64);
    for b in hasher.finalize() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Run inventory written alongside the result files. Two runs with the
/// same build, seed, and config must produce identical manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub files: Vec<FileDigest>,
}

/// Collects result files in one directory and finishes with a manifest
/// naming each file, its SHA-256 digest, and its size.
pub struct OutputWriter {
    dir: PathBuf,
    files: Vec<FileDigest>,
}

impl OutputWriter {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(OutputWriter { dir, files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Write one file under the output directory and record its digest.
    /// `name` must be a bare file name, not a path.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(Error::validation(format!(
                "output name must be a bare file name, got {name:?}"
            )));
        }
        let path = self.dir.join(name);
        write_atomic(&path, contents)?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileDigest {
            name: name.to_string(),
            sha256: sha256_hex(contents.as_bytes()),
            bytes: contents.len() as u64,
        });
        Ok(path)
    }

    /// Write `manifest.json` covering every file produced so far, stamped
    /// with the master seed and a digest of the resolved config.
    pub fn finish(mut self, seed: u64, canonical_config: &str) -> Result<PathBuf> {
        self.files.sort_by(|a, b| a.name.cmp(&b.name));
        let manifest = Manifest {
            tool: "urbanphase".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256: sha256_hex(canonical_config.as_bytes()),
            files: self.files,
        };
        let path = self.dir.join("manifest.json");
        write_atomic(&path, &json_pretty(&manifest))?;
        Ok(path)
    }
}

/// Pretty JSON with a trailing newline. Encoding plain data structs
/// cannot fail, so this is infallible.
pub fn json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON encoding of plain data");
    s.push('\n');
    s
}

pub const CELLS_HEADER: &str =
    "temperature\tmw\tsigma\tn\tmean\tstd\tmode\tbimodal\tcost_mean\tcost_std";

/// One row per grid cell: sample count, damage-fraction statistics, the
/// bimodality flag, and repair-cost statistics.
pub fn cells_tsv(cells: &[CellResult]) -> String {
    let mut out = String::with_capacity(64 * (cells.len() + 1));
    out.push_str(CELLS_HEADER);
    out.push('\n');
    for c in cells {
        let cost_mean = mean(&c.cost_fraction);
        let cost_std = sample_std(&c.cost_fraction);
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.temperature,
            c.mw,
            c.sigma,
            c.damage_fraction.len(),
            c.mean,
            c.std,
            c.mode,
            c.bimodal as u8,
            cost_mean,
            cost_std,
        );
    }
    out
}

/// Parsed row of a cells table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellRow {
    pub temperature: f64,
    pub mw: f64,
    pub sigma: f64,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub mode: f64,
    pub bimodal: bool,
    pub cost_mean: f64,
    pub cost_std: f64,
}

pub fn read_cells_tsv(path: &Path) -> Result<Vec<CellRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CELLS_HEADER => {}
        Some((_, header)) => {
            return Err(Error::parse(
                path,
                Some(1),
                format!("expected header {CELLS_HEADER:?}, found {header:?}"),
            ));
        }
        None => return Err(Error::parse(path, None, "empty cells table")),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let row_no = idx + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 10 {
            return Err(Error::parse(
                path,
                Some(row_no),
                format!("expected 10 columns, found {}", fields.len()),
            ));
        }
        rows.push(CellRow {
            temperature: parse_field(fields[0], "temperature", path, row_no)?,
            mw: parse_field(fields[1], "mw", path, row_no)?,
            sigma: parse_field(fields[2], "sigma", path, row_no)?,
            n: parse_field(fields[3], "n", path, row_no)?,
            mean: parse_field(fields[4], "mean", path, row_no)?,
            std: parse_field(fields[5], "std", path, row_no)?,
            mode: parse_field(fields[6], "mode", path, row_no)?,
            bimodal: parse_flag(fields[7], "bimodal", path, row_no)?,
            cost_mean: parse_field(fields[8], "cost_mean", path, row_no)?,
            cost_std: parse_field(fields[9], "cost_std", path, row_no)?,
        });
    }
    Ok(rows)
}

fn parse_field<T: FromStr>(s: &str, col: &str, path: &Path, row: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse()
        .map_err(|e| Error::parse(path, Some(row), format!("column {col}: {e}")))
}

fn parse_flag(s: &str, col: &str, path: &Path, row: usize) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::parse(
            path,
            Some(row),
            format!("column {col}: expected 0 or 1, found {other:?}"),
        )),
    }
}

/// Fit inputs from a cells table: the coldest temperature slice only,
/// with the most probable damage fraction mapped to spin scale 2 m_d - 1.
pub fn fit_cells_from_rows(rows: &[CellRow]) -> Vec<FitCell> {
    let Some(t_min) = rows.iter().map(|r| r.temperature).reduce(f64::min) else {
        return Vec::new();
    };
    rows.iter()
        .filter(|r| r.temperature == t_min)
        .map(|r| FitCell { mw: r.mw, sigma: r.sigma, m_star: 2.0 * r.mode - 1.0 })
        .collect()
}

pub const SAMPLES_HEADER: &str = "temperature\tmw\tsigma\trealization\tdamage_fraction\tcost_fraction";

/// Every retained realization, one row each. Opt-in: this file grows as
/// cells times realizations.
pub fn samples_tsv(cells: &[CellResult]) -> String {
    let mut out = String::new();
    out.push_str(SAMPLES_HEADER);
    out.push('\n');
    for c in cells {
        for (i, (&d, &r)) in c.damage_fraction.iter().zip(&c.cost_fraction).enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}", c.temperature, c.mw, c.sigma, i, d, r);
        }
    }
    out
}

pub const COST_HEADER: &str =
    "temperature\tmw\tsigma\tcost_mean\tcost_std\tcost_q05\tcost_q50\tcost_q95\tcost_q99";

/// Per-cell repair-cost statistics. The upper tail quantiles are the
/// risk-relevant summary: a bimodal cell shows a q99 far above the mean.
pub fn cost_tsv(cells: &[CellResult]) -> String {
    let mut out = String::new();
    out.push_str(COST_HEADER);
    out.push('\n');
    for c in cells {
        let mut sorted = c.cost_fraction.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite cost fractions"));
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.temperature,
            c.mw,
            c.sigma,
            mean(&c.cost_fraction),
            sample_std(&c.cost_fraction),
            quantile(&sorted, 0.05),
            quantile(&sorted, 0.50),
            quantile(&sorted, 0.95),
            quantile(&sorted, 0.99),
        );
    }
    out
}

/// Empirical critical-diversity estimate for one hazard row.
#[derive(Debug, Clone, Copy)]
pub struct SigmaCriticalRow {
    pub temperature: f64,
    pub mw: f64,
    pub estimate: CriticalEstimate,
}

pub const SIGMA_C_HEADER: &str = "temperature\tmw\tstatus\tsigma_c";

/// Out-of-range estimates carry NaN in the value column; the status
/// column is authoritative.
pub fn sigma_c_tsv(rows: &[SigmaCriticalRow]) -> String {
    let mut out = String::new();
    out.push_str(SIGMA_C_HEADER);
    out.push('\n');
    for row in rows {
        let (status, value) = match row.estimate {
            CriticalEstimate::Value(v) => ("value", v),
            CriticalEstimate::OutOfRange => ("out-of-range", f64::NAN),
        };
        let _ = writeln!(out, "{}\t{}\t{}\t{}", row.temperature, row.mw, status, value);
    }
    out
}

pub const PHASE_HEADER: &str = "mw\tsigma\tm_d\tbistable";

pub fn phase_tsv(diagram: &PhaseDiagram) -> String {
    let mut out = String::new();
    out.push_str(PHASE_HEADER);
    out.push('\n');
    for (i, &mw) in diagram.mw.iter().enumerate() {
        for (j, &sigma) in diagram.sigma.iter().enumerate() {
            let p = diagram.point(i, j);
            let _ = writeln!(out, "{}\t{}\t{}\t{}", mw, sigma, p.m_d, p.bistable as u8);
        }
    }
    out
}

/// Matrix TSV: the first column is the damage-fraction bin center, the
/// remaining columns follow the swept axis.
pub fn heatmap_tsv(map: &Heatmap) -> String {
    let n_cols = map.x.len();
    let mut out = String::from("m_d");
    for &x in &map.x {
        let _ = write!(out, "\t{x}");
    }
    out.push('\n');
    for (row, &y) in map.y.iter().enumerate() {
        let _ = write!(out, "{y}");
        for col in 0..n_cols {
            let _ = write!(out, "\t{}", map.values[row * n_cols + col]);
        }
        out.push('\n');
    }
    out
}

/// Matrix TSV of scaled mean-field free energy: the first column is
/// magnetization, the remaining columns follow the slice axis.
pub fn free_energy_map_tsv(
    slice_values: &[f64],
    m_grid: &[f64],
    rows: &[Vec<f64>],
) -> Result<String> {
    if rows.len() != slice_values.len() {
        return Err(Error::validation(format!(
            "{} free-energy slices but {} axis values",
            rows.len(),
            slice_values.len()
        )));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != m_grid.len()) {
        return Err(Error::validation(format!(
            "free-energy slice has {} values but the m grid has {}",
            bad.len(),
            m_grid.len()
        )));
    }
    let mut out = String::from("m");
    for &v in slice_values {
        let _ = write!(out, "\t{v}");
    }
    out.push('\n');
    for (j, &m) in m_grid.iter().enumerate() {
        let _ = write!(out, "{m}");
        for row in rows {
            let _ = write!(out, "\t{}", row[j]);
        }
        out.push('\n');
    }
    Ok(out)
}

pub const CORRELATION_HEADER: &str = "r\tc\tpairs";

pub fn correlation_tsv(profile: &CorrelationProfile) -> String {
    let mut out = String::new();
    out.push_str(CORRELATION_HEADER);
    out.push('\n');
    for ((&r, &c), &pairs) in profile.r.iter().zip(&profile.c).zip(&profile.pairs) {
        let _ = writeln!(out, "{r}\t{c}\t{pairs}");
    }
    out
}

pub const LANDAU_HEADER: &str = "m\tcount\tf_emp\tf_fit";

/// Empirical free-energy curve next to the fitted Landau polynomial,
/// evaluated on the same bin centers.
pub fn landau_tsv(curve: &FreeEnergyCurve, fit: &LandauFit) -> String {
    let mut out = String::new();
    out.push_str(LANDAU_HEADER);
    out.push('\n');
    for ((&m, &f), &count) in curve.m.iter().zip(&curve.f).zip(&curve.counts) {
        let _ = writeln!(out, "{m}\t{count}\t{f}\t{}", fit.evaluate(m));
    }
    out
}

/// Fitted parameter map plus the critical coordinates it implies, with
/// the grid window the estimates were restricted to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub fit: MeanFieldFit,
    pub critical: CriticalPoints,
    pub mw_range: (f64, f64),
    pub sigma_range: (f64, f64),
}

pub fn read_fit_report(path: &Path) -> Result<FitReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        let line = e.line();
        Error::parse(path, (line > 0).then_some(line), e.to_string())
    })
}
