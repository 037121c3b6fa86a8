//! File formats: CSV matrices/vectors (first row optionally a header) and
//! region files `{"polytopes": [{"A": [[...]], "b": [...]}]}`.

use selektor_core::linalg::Mat;
use selektor_core::{Polytope, SelectionRegion};
use serde::Deserialize;
use std::fs;
use std::path::Path;

#[derive(Debug)]
pub struct IoError(pub String);

impl std::fmt::Display for IoError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for IoError {}

fn parse_row(line: &str) -> Option<Vec<f64>> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.is_empty() || fields.iter().all(|f| f.is_empty()) {
        return Some(vec![]);
    }
    let mut out = Vec::with_capacity(fields.len());
    for f in fields {
        match f.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) => return None,
        }
    }
    Some(out)
}

/// Reads a numeric CSV into rows, skipping an optional header line and
/// blank lines.
pub fn read_csv_rows(path: &Path) -> Result<Vec<Vec<f64>>, IoError> {
    let text = fs::read_to_string(path)
        .map_err(|e| IoError(format!("cannot read {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        match parse_row(line) {
            Some(row) if row.is_empty() => continue,
            Some(row) => rows.push(row),
            None if i == 0 => continue, // header
            None => {
                return Err(IoError(format!(
                    "{}: line {} is not numeric",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    if rows.is_empty() {
        return Err(IoError(format!("{}: no data rows", path.display())));
    }
    let w = rows[0].len();
    if rows.iter().any(|r| r.len() != w) {
        return Err(IoError(format!("{}: ragged rows", path.display())));
    }
    Ok(rows)
}

pub fn read_design(path: &Path) -> Result<Mat, IoError> {
    Ok(Mat::from_rows(read_csv_rows(path)?))
}

pub fn read_response(path: &Path) -> Result<Vec<f64>, IoError> {
    let rows = read_csv_rows(path)?;
    if rows[0].len() != 1 {
        return Err(IoError(format!(
            "{}: response must have one column, found {}",
            path.display(),
            rows[0].len()
        )));
    }
    Ok(rows.into_iter().map(|r| r[0]).collect())
}

#[derive(Deserialize)]
struct RegionFile {
    polytopes: Vec<PolytopeFile>,
}

#[derive(Deserialize)]
struct PolytopeFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

/// Loads a selection region from its JSON file form.
pub fn read_region(path: &Path, dim: usize) -> Result<SelectionRegion, IoError> {
    let text = fs::read_to_string(path)
        .map_err(|e| IoError(format!("cannot read {}: {e}", path.display())))?;
    let parsed: RegionFile = serde_json::from_str(&text)
        .map_err(|e| IoError(format!("{}: bad region JSON: {e}", path.display())))?;
    if parsed.polytopes.is_empty() {
        return Err(IoError(format!("{}: no polytopes", path.display())));
    }
    let mut parts = Vec::with_capacity(parsed.polytopes.len());
    for (i, p) in parsed.polytopes.into_iter().enumerate() {
        let poly = Polytope::new(p.a, p.b, dim)
            .map_err(|e| IoError(format!("{}: polytope {i}: {e}", path.display())))?;
        parts.push(poly);
    }
    Ok(SelectionRegion::new(parts))
}

/// Parses a comma-separated list of 1-based indices into 0-based ones.
pub fn parse_indices(spec: &str) -> Result<Vec<usize>, IoError> {
    spec.split(',')
        .map(|s| {
            let v: usize = s
                .trim()
                .parse()
                .map_err(|_| IoError(format!("bad index `{s}`")))?;
            if v == 0 {
                return Err(IoError("indices are 1-based".into()));
            }
            Ok(v - 1)
        })
        .collect()
}
