//! CSV ingestion and atomic CSV/JSON emission.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a value
//! read back from any emitted file is bit-identical to the one written.

use std::fs;
use std::io::Write;
use std::path::Path;

use incremental_effects::Dataset;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Column roles for ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roles {
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    /// Conditioning covariates `V`; must be a subset of `covariates`.
    pub condition_on: Vec<String>,
}

impl Roles {
    pub fn validate(&self) -> Result<()> {
        if self.outcome == self.treatment {
            return Err(CliError::Config(format!(
                "column '{}' cannot be both outcome and treatment",
                self.outcome
            )));
        }
        if self.covariates.is_empty() {
            return Err(CliError::Config("at least one covariate is required".into()));
        }
        for (i, c) in self.covariates.iter().enumerate() {
            if c == &self.outcome || c == &self.treatment {
                return Err(CliError::Config(format!(
                    "column '{c}' is listed as a covariate and as outcome/treatment"
                )));
            }
            if self.covariates[..i].contains(c) {
                return Err(CliError::Config(format!("covariate '{c}' listed twice")));
            }
        }
        for c in &self.condition_on {
            if !self.covariates.contains(c) {
                return Err(CliError::Config(format!(
                    "conditioning column '{c}' is not among the covariates"
                )));
            }
        }
        if self.condition_on.is_empty() {
            return Err(CliError::Config("at least one conditioning column is required".into()));
        }
        Ok(())
    }

    /// Positions of the conditioning columns within the covariates.
    pub fn condition_indices(&self) -> Vec<usize> {
        self.condition_on
            .iter()
            .map(|c| self.covariates.iter().position(|x| x == c).expect("validated subset"))
            .collect()
    }

    pub fn conditions_on_all(&self) -> bool {
        let mut a = self.condition_on.clone();
        let mut b = self.covariates.clone();
        a.sort();
        b.sort();
        a == b
    }
}

/// Parsed input: the dataset plus the row-major conditioning matrix.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub data: Dataset,
    pub v: Vec<f64>,
}

fn parse_number(raw: &str, column: &str, row: usize) -> Result<Option<f64>> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| CliError::Data(format!("column '{column}' row {row}: '{s}' is not a finite number")))
}

/// Read a headered CSV into a [`Dataset`]. Rows are numbered from 1 after the
/// header. Rows with a missing value in a used column are dropped and counted.
pub fn ingest_csv(path: &Path, roles: &Roles) -> Result<Ingested> {
    roles.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            other => CliError::Data(format!("{}: {other:?}", path.display())),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: unreadable header: {e}", path.display())))?
        .clone();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("column '{name}' not found in {}", path.display())))
    };
    let yi = find(&roles.outcome)?;
    let ai = find(&roles.treatment)?;
    let xi = roles.covariates.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

    let mut x = Vec::new();
    let mut a = Vec::new();
    let mut y = Vec::new();
    let mut dropped = 0usize;
    let mut bad_treatment: Vec<(usize, String)> = Vec::new();
    let mut seen = 0usize;
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| CliError::Data(format!("{} row {row}: {e}", path.display())))?;
        seen += 1;
        let field = |j: usize| record.get(j).unwrap_or("");
        let yv = parse_number(field(yi), &roles.outcome, row)?;
        let av = field(ai).trim();
        let xs = xi
            .iter()
            .zip(&roles.covariates)
            .map(|(&j, c)| parse_number(field(j), c, row))
            .collect::<Result<Vec<_>>>()?;
        if av.is_empty() || yv.is_none() || xs.iter().any(Option::is_none) {
            dropped += 1;
            continue;
        }
        let at = match av.parse::<f64>() {
            Ok(t) if t == 0.0 => 0u8,
            Ok(t) if t == 1.0 => 1u8,
            _ => {
                bad_treatment.push((row, av.to_string()));
                continue;
            }
        };
        a.push(at);
        y.push(yv.expect("checked"));
        x.extend(xs.into_iter().map(|v| v.expect("checked")));
    }
    if seen == 0 {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    if !bad_treatment.is_empty() {
        let listed: Vec<String> = bad_treatment
            .iter()
            .take(5)
            .map(|(r, v)| format!("row {r}: '{v}'"))
            .collect();
        return Err(CliError::Data(format!(
            "treatment column '{}' must be 0 or 1; {} offending value(s): {}{}",
            roles.treatment,
            bad_treatment.len(),
            listed.join(", "),
            if bad_treatment.len() > 5 { ", ..." } else { "" }
        )));
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} row(s) with missing values in used columns");
    }
    if a.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no complete rows ({dropped} rejected for missing values)",
            path.display()
        )));
    }
    let dim = roles.covariates.len();
    let idx = roles.condition_indices();
    let v = x.chunks(dim).flat_map(|row| idx.iter().map(move |&j| row[j])).collect();
    let data = Dataset::new(roles.covariates.clone(), x, a, y)?;
    Ok(Ingested { data, v })
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Write `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(io_err)?;
    for r in rows {
        w.write_record(r).map_err(io_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}
