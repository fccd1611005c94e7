//! CSV persistence of run records.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading a
//! file back yields bit-identical values. Missing values are empty fields.

use std::fs::File;
use std::path::Path;

use les_core::bench::RunRecord;

use crate::error::{CliError, Result};

const TAIL: [&str; 7] = ["y", "best_y", "true_y", "cum_y", "acq", "stopped", "wall_ms"];

/// `seed,iteration,x_0..x_{d-1},y,best_y,true_y,cum_y,acq,stopped,wall_ms`
pub fn header(dim: usize) -> Vec<String> {
    let mut h = vec!["seed".to_string(), "iteration".to_string()];
    h.extend((0..dim).map(|k| format!("x_{k}")));
    h.extend(TAIL.iter().map(|s| s.to_string()));
    h
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn record_fields(r: &RunRecord) -> Vec<String> {
    let mut f = vec![r.seed.to_string(), r.iteration.to_string()];
    f.extend(r.x.iter().map(|v| v.to_string()));
    f.extend([
        r.y.to_string(),
        r.best_y.to_string(),
        opt(r.true_y),
        r.cum_y.to_string(),
        opt(r.acq),
        r.stopped.to_string(),
        r.wall_ms.to_string(),
    ]);
    f
}

/// Writes `records` (all of dimension `dim`) to `path`, replacing it.
pub fn write_records(path: &Path, dim: usize, records: &[RunRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header(dim)).map_err(|e| CliError::csv(path, e))?;
    for r in records {
        if r.x.len() != dim {
            return Err(CliError::Input(format!(
                "record of seed {} has {} coordinates, expected {dim}",
                r.seed,
                r.x.len()
            )));
        }
        w.write_record(record_fields(r)).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Number of input coordinates if `row` is a record header.
pub fn record_dim(row: &csv::StringRecord) -> Option<usize> {
    let n = row.len().checked_sub(2 + TAIL.len())?;
    (row == &csv::StringRecord::from(header(n))).then_some(n)
}

fn parse<T: std::str::FromStr>(path: &Path, line: u64, name: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| CliError::Input(format!("{}:{line}: bad {name} value `{s}`", path.display())))
}

fn parse_opt(path: &Path, line: u64, name: &str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse(path, line, name, s).map(Some)
    }
}

/// Reads a file written by [`write_records`]. Returns `None` when the header
/// is not a record header.
pub fn read_records(path: &Path) -> Result<Option<Vec<RunRecord>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let head = r.headers().map_err(|e| CliError::csv(path, e))?.clone();
    let Some(dim) = record_dim(&head) else {
        return Ok(None);
    };
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| CliError::csv(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let get = |i: usize| &row[i];
        let x = (0..dim)
            .map(|k| parse(path, line, &head[2 + k], get(2 + k)))
            .collect::<Result<Vec<f64>>>()?;
        let t = 2 + dim;
        out.push(RunRecord {
            seed: parse(path, line, "seed", get(0))?,
            iteration: parse(path, line, "iteration", get(1))?,
            x,
            y: parse(path, line, "y", get(t))?,
            best_y: parse(path, line, "best_y", get(t + 1))?,
            true_y: parse_opt(path, line, "true_y", get(t + 2))?,
            cum_y: parse(path, line, "cum_y", get(t + 3))?,
            acq: parse_opt(path, line, "acq", get(t + 4))?,
            stopped: parse(path, line, "stopped", get(t + 5))?,
            wall_ms: parse(path, line, "wall_ms", get(t + 6))?,
        });
    }
    Ok(Some(out))
}
