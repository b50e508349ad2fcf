//! Per-step traces and their CSV/JSON encodings.
//!
//! Floats are written in scientific notation with 17 significant digits,
//! which is enough to recover every `f64` bit-for-bit.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const CSV_HEADER: [&str; 7] = [
    "step",
    "loss",
    "grad_norm",
    "criterion_value",
    "switched",
    "step_wall_time_us",
    "cumulative_switches",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    /// `|d̄|`, `ρ`, or steps since the last switch, depending on the policy.
    pub criterion_value: f64,
    pub switched: bool,
    pub step_wall_time_us: u64,
    pub cumulative_switches: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Steps strictly increasing, switch counts nondecreasing and consistent
    /// with the per-step flags.
    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<&TraceRecord> = None;
        for r in &self.records {
            if let Some(p) = prev {
                if r.step <= p.step {
                    return Err(HarnessError::Trace(format!("step {} follows step {}", r.step, p.step)));
                }
                if r.cumulative_switches < p.cumulative_switches {
                    return Err(HarnessError::Trace(format!(
                        "switch count decreases at step {}",
                        r.step
                    )));
                }
                if r.switched != (r.cumulative_switches > p.cumulative_switches) {
                    return Err(HarnessError::Trace(format!(
                        "switch flag inconsistent at step {}",
                        r.step
                    )));
                }
            }
            prev = Some(r);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    Csv,
    Json,
}

impl TraceFormat {
    /// Guesses the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => TraceFormat::Json,
            _ => TraceFormat::Csv,
        }
    }
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn record_fields(r: &TraceRecord) -> [String; 7] {
    [
        r.step.to_string(),
        format_float(r.loss),
        format_float(r.grad_norm),
        format_float(r.criterion_value),
        r.switched.to_string(),
        r.step_wall_time_us.to_string(),
        r.cumulative_switches.to_string(),
    ]
}

pub fn to_csv_string(trace: &RunTrace) -> String {
    let mut out = CSV_HEADER.join(",");
    out.push('\n');
    for r in &trace.records {
        out.push_str(&record_fields(r).join(","));
        out.push('\n');
    }
    out
}

pub fn to_json_string(trace: &RunTrace) -> String {
    if trace.is_empty() {
        return "[]\n".into();
    }
    let mut out = String::from("[\n");
    for (i, r) in trace.records.iter().enumerate() {
        let fields = record_fields(r);
        out.push_str("  {");
        for (k, (name, value)) in CSV_HEADER.iter().zip(&fields).enumerate() {
            let sep = if k == 0 { "" } else { ", " };
            let _ = write!(out, "{sep}\"{name}\": {value}");
        }
        out.push_str(if i + 1 == trace.len() { "}\n" } else { "},\n" });
    }
    out.push_str("]\n");
    out
}

pub fn encode(trace: &RunTrace, format: TraceFormat) -> String {
    match format {
        TraceFormat::Csv => to_csv_string(trace),
        TraceFormat::Json => to_json_string(trace),
    }
}

/// Writes `trace` to `path`.
pub fn emit_trace(trace: &RunTrace, path: &Path, format: TraceFormat) -> Result<()> {
    let io_err = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    w.write_all(encode(trace, format).as_bytes()).map_err(io_err)?;
    w.flush().map_err(io_err)
}

fn parse_field<T: FromStr>(value: &str, name: &str, row: usize) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| HarnessError::Trace(format!("row {row}: cannot parse {name} from {value:?}")))
}

pub fn parse_csv<R: Read>(reader: R, path: &Path) -> Result<RunTrace> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    if headers.iter().ne(CSV_HEADER) {
        return Err(HarnessError::Trace(format!("unexpected header {headers:?}")));
    }
    let mut trace = RunTrace::default();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|source| HarnessError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let f = |k: usize| rec.get(k).unwrap_or("");
        trace.records.push(TraceRecord {
            step: parse_field(f(0), CSV_HEADER[0], row)?,
            loss: parse_field(f(1), CSV_HEADER[1], row)?,
            grad_norm: parse_field(f(2), CSV_HEADER[2], row)?,
            criterion_value: parse_field(f(3), CSV_HEADER[3], row)?,
            switched: parse_field(f(4), CSV_HEADER[4], row)?,
            step_wall_time_us: parse_field(f(5), CSV_HEADER[5], row)?,
            cumulative_switches: parse_field(f(6), CSV_HEADER[6], row)?,
        });
    }
    Ok(trace)
}

pub fn parse_json<R: Read>(reader: R, path: &Path) -> Result<RunTrace> {
    let records: Vec<TraceRecord> = serde_json::from_reader(reader).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(RunTrace { records })
}

/// Reads a trace written by [`emit_trace`].
pub fn read_trace(path: &Path, format: TraceFormat) -> Result<RunTrace> {
    let file = File::open(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        TraceFormat::Csv => parse_csv(file, path),
        TraceFormat::Json => parse_json(file, path),
    }
}
