use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Building, FragilityMarginal, Portfolio, Position};

/// Mean Earth radius, km, for the equirectangular projection.
const EARTH_RADIUS_KM: f64 = 6371.0;

/// Fragility parameters applied to rows that do not carry their own
/// frag_mu / frag_beta columns.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FragilityDefaults {
    pub mu: f64,
    pub beta: f64,
}

const REQUIRED: [&str; 9] = [
    "id",
    "lon",
    "lat",
    "stories",
    "year_built",
    "structure_class",
    "occupancy",
    "vs30",
    "replacement_cost",
];

/// Loads a delimited inventory file. Geographic coordinates are converted
/// to the local planar frame by an equirectangular projection about the
/// portfolio centroid; the origin is retained on the portfolio so scenario
/// epicenters given in lon/lat land in the same frame.
pub fn load_inventory(path: &Path, defaults: Option<FragilityDefaults>) -> Result<Portfolio> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
            ),
            _ => Error::parse(path, None, e.to_string()),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, Some(1), e.to_string()))?
        .clone();
    let col: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h, i))
        .collect();
    for name in REQUIRED {
        if !col.contains_key(name) {
            return Err(Error::parse(
                path,
                Some(1),
                format!("missing required column '{name}'"),
            ));
        }
    }
    let has_frag = col.contains_key("frag_mu") && col.contains_key("frag_beta");
    if col.contains_key("frag_mu") != col.contains_key("frag_beta") {
        return Err(Error::parse(
            path,
            Some(1),
            "frag_mu and frag_beta must be given together",
        ));
    }

    struct RawRow {
        id: String,
        lon: f64,
        lat: f64,
        stories: u32,
        year_built: i32,
        structure_class: String,
        occupancy: String,
        vs30: f64,
        replacement_cost: f64,
        frag: Option<(f64, f64)>,
    }

    let mut rows: Vec<RawRow> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 2; // header is row 1
        let record = record.map_err(|e| Error::parse(path, Some(row_no), e.to_string()))?;
        let field = |name: &str| -> Result<&str> {
            record
                .get(col[name])
                .ok_or_else(|| Error::parse(path, Some(row_no), format!("missing field '{name}'")))
        };
        let num = |name: &str| -> Result<f64> {
            field(name)?.parse::<f64>().map_err(|_| {
                Error::parse(
                    path,
                    Some(row_no),
                    format!("column '{name}': expected a number, got '{}'", field(name).unwrap_or("")),
                )
            })
        };
        let int = |name: &str| -> Result<i64> {
            field(name)?.parse::<i64>().map_err(|_| {
                Error::parse(
                    path,
                    Some(row_no),
                    format!("column '{name}': expected an integer, got '{}'", field(name).unwrap_or("")),
                )
            })
        };
        let frag = if has_frag {
            let mu_s = field("frag_mu")?;
            let beta_s = field("frag_beta")?;
            if mu_s.is_empty() && beta_s.is_empty() {
                None
            } else {
                Some((num("frag_mu")?, num("frag_beta")?))
            }
        } else {
            None
        };
        rows.push(RawRow {
            id: field("id")?.to_string(),
            lon: num("lon")?,
            lat: num("lat")?,
            stories: int("stories")? as u32,
            year_built: int("year_built")? as i32,
            structure_class: field("structure_class")?.to_string(),
            occupancy: field("occupancy")?.to_string(),
            vs30: num("vs30")?,
            replacement_cost: num("replacement_cost")?,
            frag,
        });
    }
    if rows.is_empty() {
        return Err(Error::parse(path, None, "inventory has no data rows"));
    }
    for r in &rows {
        if !(-180.0..=180.0).contains(&r.lon) || !(-90.0..=90.0).contains(&r.lat) {
            return Err(Error::validation(format!(
                "building {}: lon/lat ({}, {}) out of range",
                r.id, r.lon, r.lat
            )));
        }
    }

    let lon0 = rows.iter().map(|r| r.lon).sum::<f64>() / rows.len() as f64;
    let lat0 = rows.iter().map(|r| r.lat).sum::<f64>() / rows.len() as f64;

    let buildings = rows
        .into_iter()
        .map(|r| {
            let fragility = match (r.frag, defaults) {
                (Some((mu, beta)), _) => FragilityMarginal::Lognormal { mu, beta },
                (None, Some(d)) => FragilityMarginal::Lognormal {
                    mu: d.mu,
                    beta: d.beta,
                },
                (None, None) => {
                    return Err(Error::validation(format!(
                        "building {}: no fragility columns and no defaults configured",
                        r.id
                    )))
                }
            };
            Ok(Building {
                id: r.id,
                position: project_lonlat(r.lon, r.lat, lon0, lat0),
                stories: r.stories,
                year_built: r.year_built,
                structure_class: r.structure_class,
                occupancy: r.occupancy,
                vs30: r.vs30,
                replacement_cost: r.replacement_cost,
                fragility,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Portfolio::with_origin(buildings, Some((lon0, lat0)))
}

/// Equirectangular projection about (lon0, lat0), output in km.
pub fn project_lonlat(lon: f64, lat: f64, lon0: f64, lat0: f64) -> Position {
    let to_rad = std::f64::consts::PI / 180.0;
    Position {
        x_km: EARTH_RADIUS_KM * lat0.to_radians().cos() * (lon - lon0) * to_rad,
        y_km: EARTH_RADIUS_KM * (lat - lat0) * to_rad,
    }
}
