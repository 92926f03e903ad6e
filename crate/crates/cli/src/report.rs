//! Trace and summary CSV writers and the JSON run manifest.
//!
//! CSV schemas (fixed column order):
//!
//! * trace: `iteration,elbo_estimate,grad_norm,kl_exact,step_norm,wallclock_ms`
//!   followed by the scheme's diagnostic keys in their per-scheme fixed
//!   order. `kl_exact` is empty when the model has no oracle.
//! * summary: `scheme,seed,iterations_to_threshold,final_elbo,total_wallclock_ms`
//!   with `iterations_to_threshold` empty when the threshold was never met.
//!
//! Floats render with 17 significant digits so traces replay bit-exactly.

use std::fmt::Write as _;

use sovi_core::optimizer::TraceRecord;

/// KL threshold that defines "converged" in the summary, where an exact
/// posterior is available.
pub const KL_THRESHOLD: f64 = 1e-2;

/// 17 significant digits, round-trip exact for f64.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// One summary line per (scheme, seed) run.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub scheme: &'static str,
    pub seed: u64,
    pub iterations_to_threshold: Option<usize>,
    pub final_elbo: Option<f64>,
    pub total_wallclock_ms: f64,
}

/// Render a full trace CSV document.
pub fn trace_csv(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    out.push_str("iteration,elbo_estimate,grad_norm,kl_exact,step_norm,wallclock_ms");
    let diag_keys: Vec<&'static str> = records
        .first()
        .map(|r| r.diagnostics.iter().map(|(k, _)| *k).collect())
        .unwrap_or_default();
    for key in &diag_keys {
        out.push(',');
        out.push_str(key);
    }
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            r.iteration,
            format_float(r.elbo_estimate),
            format_float(r.grad_norm),
            r.kl_exact.map(format_float).unwrap_or_default(),
            format_float(r.step_norm),
            format_float(r.wallclock_ms),
        );
        for key in &diag_keys {
            out.push(',');
            let value = r
                .diagnostics
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| format_float(*v))
                .unwrap_or_default();
            out.push_str(&value);
        }
        out.push('\n');
    }
    out
}

/// First iteration at which the run counts as converged: KL at or below
/// [`KL_THRESHOLD`] when the oracle exists, otherwise the gradient-norm
/// falling to `grad_norm_tol`.
pub fn iterations_to_threshold(records: &[TraceRecord], grad_norm_tol: f64) -> Option<usize> {
    let has_oracle = records.iter().any(|r| r.kl_exact.is_some());
    records
        .iter()
        .find(|r| {
            if has_oracle {
                r.kl_exact.map(|k| k <= KL_THRESHOLD).unwrap_or(false)
            } else {
                r.grad_norm <= grad_norm_tol
            }
        })
        .map(|r| r.iteration)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out =
        String::from("scheme,seed,iterations_to_threshold,final_elbo,total_wallclock_ms\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.scheme,
            r.seed,
            r.iterations_to_threshold
                .map(|v| v.to_string())
                .unwrap_or_default(),
            r.final_elbo.map(format_float).unwrap_or_default(),
            format_float(r.total_wallclock_ms),
        );
    }
    out
}

/// Parse a trace CSV back into (header, numeric rows with empty cells as
/// None); used by tests and the summary reader.
pub fn parse_csv(text: &str) -> Option<(Vec<String>, Vec<Vec<Option<f64>>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines.next()?.split(',').map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            if field.is_empty() {
                row.push(None);
            } else {
                row.push(Some(field.parse::<f64>().ok()?));
            }
        }
        if row.len() != header.len() {
            return None;
        }
        rows.push(row);
    }
    Some((header, rows))
}
