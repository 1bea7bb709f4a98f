//! Trace CSV emission and parsing.
//!
//! One row per checkpoint: `iter,markov_err,a_err,c_err,d_err`. The
//! recovery columns stay empty for Markov-only pipelines.

use std::io::Write;
use std::path::Path;

use sysid_core::{Result, SysIdError};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: u64,
    pub markov_err: f64,
    pub a_err: Option<f64>,
    pub c_err: Option<f64>,
    pub d_err: Option<f64>,
}

impl TraceRow {
    pub fn markov_only(iter: u64, markov_err: f64) -> Self {
        Self {
            iter,
            markov_err,
            a_err: None,
            c_err: None,
            d_err: None,
        }
    }

    pub fn full(iter: u64, markov_err: f64, a_err: f64, c_err: f64, d_err: f64) -> Self {
        Self {
            iter,
            markov_err,
            a_err: Some(a_err),
            c_err: Some(c_err),
            d_err: Some(d_err),
        }
    }

    /// Total parameter error when the recovery columns are present.
    pub fn param_err(&self) -> Option<f64> {
        Some(self.a_err? + self.c_err? + self.d_err?)
    }
}

pub const TRACE_HEADER: &str = "iter,markov_err,a_err,c_err,d_err";

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.17e}"));
    for r in rows {
        out.push_str(&format!(
            "{},{:.17e},{},{},{}\n",
            r.iter,
            r.markov_err,
            fmt(r.a_err),
            fmt(r.c_err),
            fmt(r.d_err)
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| SysIdError::Io(e.to_string()))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| SysIdError::Io(e.to_string()))?;
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|e| SysIdError::Io(e.to_string()))
            }
        };
        rows.push(TraceRow {
            iter: rec[0]
                .parse()
                .map_err(|e: std::num::ParseIntError| SysIdError::Io(e.to_string()))?,
            markov_err: rec[1]
                .parse()
                .map_err(|e: std::num::ParseFloatError| SysIdError::Io(e.to_string()))?,
            a_err: parse_opt(&rec[2])?,
            c_err: parse_opt(&rec[3])?,
            d_err: parse_opt(&rec[4])?,
        });
    }
    Ok(rows)
}

/// Bound-curve CSV: `iter,bound_value`, aligned with the trace cadence.
pub fn write_bound_curve(path: &Path, iters: &[u64], values: &[f64]) -> Result<()> {
    let mut out = String::from("iter,bound_value\n");
    for (i, v) in iters.iter().zip(values) {
        out.push_str(&format!("{i},{v:.17e}\n"));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}
