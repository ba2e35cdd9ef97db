//! Multi-fidelity datasets from CSV: header `x1,...,xd,y,fidelity`, one sample
//! per row, fidelity 1 the lowest.

use std::io::Write;
use std::path::Path;

use mfgp::mf::MultiFidelityDataset;
use mfgp::Dataset;
use nalgebra::{DMatrix, DVector};

use crate::error::{BenchError, Result};

fn expected_header(d: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    h.push("y".into());
    h.push("fidelity".into());
    h
}

/// Parses the per-fidelity levels of CSV text, lowest first. `origin` only labels errors.
pub fn parse_levels(text: &str, d: usize, origin: &str) -> Result<Vec<Dataset>> {
    let parse_err = |line: usize, message: String| BenchError::Parse { path: origin.to_string(), line, message };
    if d == 0 {
        return Err(BenchError::Config("dimension must be at least 1".into()));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.iter().map(str::to_string).collect();
    if header != expected_header(d) {
        return Err(parse_err(1, format!("expected header {}, found {}", expected_header(d).join(","), header.join(","))));
    }
    let mut rows: Vec<(Vec<f64>, f64, usize)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != d + 2 {
            return Err(parse_err(line, format!("expected {} fields, found {}", d + 2, rec.len())));
        }
        let mut vals = Vec::with_capacity(d + 1);
        for (c, field) in rec.iter().take(d + 1).enumerate() {
            let v: f64 = field.parse().map_err(|_| parse_err(line, format!("column {}: '{field}' is not a number", c + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column {}: non-finite value", c + 1)));
            }
            vals.push(v);
        }
        let fid: usize = rec[d + 1]
            .parse()
            .ok()
            .filter(|&f| f >= 1)
            .ok_or_else(|| parse_err(line, format!("fidelity '{}' is not a positive integer", &rec[d + 1])))?;
        let y = vals.pop().expect("d + 1 values");
        rows.push((vals, y, fid));
    }
    let s = rows.iter().map(|r| r.2).max().ok_or_else(|| parse_err(1, "no data rows".into()))?;
    let mut levels = Vec::with_capacity(s);
    for f in 1..=s {
        let sel: Vec<&(Vec<f64>, f64, usize)> = rows.iter().filter(|r| r.2 == f).collect();
        if sel.is_empty() {
            return Err(parse_err(1, format!("fidelity level {f} of 1..{s} has no rows")));
        }
        let x = DMatrix::from_fn(sel.len(), d, |i, j| sel[i].0[j]);
        let y = DVector::from_iterator(sel.len(), sel.iter().map(|r| r.1));
        levels.push(Dataset::new(x, y).map_err(|e| BenchError::Config(e.to_string()))?);
    }
    Ok(levels)
}

/// Parses a multi-fidelity dataset (at least two levels) from CSV text.
pub fn parse_csv(text: &str, d: usize, origin: &str) -> Result<MultiFidelityDataset> {
    let levels = parse_levels(text, d, origin)?;
    if levels.len() < 2 {
        return Err(BenchError::Parse {
            path: origin.to_string(),
            line: 1,
            message: "a multi-fidelity dataset needs at least two fidelity levels".into(),
        });
    }
    MultiFidelityDataset::new(levels).map_err(|e| BenchError::Config(e.to_string()))
}

pub fn ingest_csv(path: &Path, d: usize) -> Result<MultiFidelityDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    parse_csv(&text, d, &path.display().to_string())
}

/// Rows of the highest fidelity present in the file.
pub fn ingest_top_level(path: &Path, d: usize) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    Ok(parse_levels(&text, d, &path.display().to_string())?.pop().expect("at least one level"))
}

/// Writes `data` in the ingestion format with full round-trip precision.
pub fn write_csv<W: Write>(data: &MultiFidelityDataset, out: W) -> std::io::Result<()> {
    let d = data.dim();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(expected_header(d))?;
    for (f, level) in data.levels.iter().enumerate() {
        for i in 0..level.len() {
            let mut rec: Vec<String> = (0..d).map(|j| format!("{:e}", level.x[(i, j)])).collect();
            rec.push(format!("{:e}", level.y[i]));
            rec.push((f + 1).to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()
}

pub fn export_csv(data: &MultiFidelityDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| BenchError::io(path, e))?;
    write_csv(data, file).map_err(|e| BenchError::io(path, e))
}
