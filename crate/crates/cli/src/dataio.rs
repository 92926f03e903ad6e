//! Dataset ingestion from CSV.
//!
//! Format: comma-separated real numbers, one observation per row. A header
//! row is optional and detected by the first row failing to parse as
//! numbers. When the model needs a target (regression/classification), the
//! last column is the target and the remaining columns are the observation.

use std::path::Path;

use sovi_core::la::DenseMatrix;
use sovi_core::model::Dataset;

use crate::config::ConfigError;

fn parse_row(line: &str) -> Option<Vec<f64>> {
    let mut out = Vec::new();
    for field in line.split(',') {
        match field.trim().parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) => return None,
        }
    }
    Some(out)
}

/// Read a CSV file into a dataset. `with_target` splits off the last column.
pub fn read_csv(path: &Path, with_target: bool) -> Result<Dataset, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        field: "model.dataset".to_string(),
        message: format!("cannot read `{}`: {e}", path.display()),
    })?;
    let bad = |message: String| ConfigError {
        field: "model.dataset".to_string(),
        message,
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        match parse_row(line) {
            Some(row) => {
                match width {
                    None => width = Some(row.len()),
                    Some(w) if w != row.len() => {
                        return Err(bad(format!(
                            "row {} has {} fields, expected {w}",
                            lineno + 1,
                            row.len()
                        )));
                    }
                    _ => {}
                }
                rows.push(row);
            }
            None if rows.is_empty() && lineno == 0 => {
                // header row; skip
            }
            None => {
                return Err(bad(format!("row {} is not numeric", lineno + 1)));
            }
        }
    }
    if rows.is_empty() {
        return Err(bad("no data rows".to_string()));
    }
    let w = width.unwrap();
    if with_target && w < 2 {
        return Err(bad(
            "need at least two columns (features + target)".to_string()
        ));
    }

    if with_target {
        let mut targets = Vec::with_capacity(rows.len());
        let mut features = Vec::with_capacity(rows.len());
        for mut row in rows {
            targets.push(row.pop().unwrap());
            features.push(row);
        }
        let observations = DenseMatrix::from_rows(&features).expect("uniform width checked");
        Dataset::new(observations, Some(targets)).map_err(|e| bad(e.to_string()))
    } else {
        let observations = DenseMatrix::from_rows(&rows).expect("uniform width checked");
        Dataset::new(observations, None).map_err(|e| bad(e.to_string()))
    }
}
