//! Per-repetition records, their aggregates, and CSV/JSON persistence.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Format, Method};
use crate::error::{BenchError, Result};

/// Scores of one method on one repetition. Metrics are `None` when training or
/// prediction failed; `error` then holds the message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub method: Method,
    pub n_lf: usize,
    pub n_hf: usize,
    pub rep: usize,
    pub seed: u64,
    pub r2: Option<f64>,
    pub rmse: Option<f64>,
    pub mnll: Option<f64>,
    /// `100 (rmse - rmse_gp_hf) / rmse_gp_hf` on this repetition.
    pub rmse_evolution_pct: Option<f64>,
    pub n_hyperparams: Option<usize>,
    pub error: Option<String>,
}

impl RepRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Mean and population standard deviation over successful repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub problem: String,
    pub method: Method,
    pub n_lf: usize,
    pub n_hf: usize,
    pub r2_mean: Option<f64>,
    pub r2_std: Option<f64>,
    pub rmse_mean: Option<f64>,
    pub rmse_std: Option<f64>,
    pub mnll_mean: Option<f64>,
    pub mnll_std: Option<f64>,
    pub rmse_evolution_pct: Option<f64>,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub problem: String,
    pub config: ExperimentConfig,
    pub aggregates: Vec<Aggregate>,
    pub records: Vec<RepRecord>,
}

pub const CSV_HEADER: [&str; 12] = [
    "problem",
    "method",
    "n_lf",
    "n_hf",
    "r2_mean",
    "r2_std",
    "rmse_mean",
    "rmse_std",
    "mnll_mean",
    "mnll_std",
    "rmse_evolution_pct",
    "n_failed",
];

/// `(mean, population std)`, or `None` for an empty sample.
pub fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (Some(m), Some(var.sqrt()))
}

/// Aggregates `records` per (method, DoE size), in `methods` x `doe_sizes` order.
pub fn aggregate(problem: &str, methods: &[Method], doe_sizes: &[(usize, usize)], records: &[RepRecord]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for &(n_lf, n_hf) in doe_sizes {
        for &method in methods {
            let recs: Vec<&RepRecord> =
                records.iter().filter(|r| r.method == method && r.n_lf == n_lf && r.n_hf == n_hf).collect();
            let ok: Vec<&&RepRecord> = recs.iter().filter(|r| !r.failed()).collect();
            let col = |f: fn(&RepRecord) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
            let (r2_mean, r2_std) = mean_std(&col(|r| r.r2));
            let (rmse_mean, rmse_std) = mean_std(&col(|r| r.rmse));
            let (mnll_mean, mnll_std) = mean_std(&col(|r| r.mnll));
            out.push(Aggregate {
                problem: problem.to_string(),
                method,
                n_lf,
                n_hf,
                r2_mean,
                r2_std,
                rmse_mean,
                rmse_std,
                mnll_mean,
                mnll_std,
                rmse_evolution_pct: mean_std(&col(|r| r.rmse_evolution_pct)).0,
                n_failed: recs.len() - ok.len(),
            });
        }
    }
    out
}

fn sci(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| format!("{x:.3e}"))
}

pub fn write_csv<W: Write>(aggregates: &[Aggregate], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for a in aggregates {
        w.write_record([
            a.problem.clone(),
            a.method.to_string(),
            a.n_lf.to_string(),
            a.n_hf.to_string(),
            sci(a.r2_mean),
            sci(a.r2_std),
            sci(a.rmse_mean),
            sci(a.rmse_std),
            sci(a.mnll_mean),
            sci(a.mnll_std),
            sci(a.rmse_evolution_pct),
            a.n_failed.to_string(),
        ])?;
    }
    w.flush()
}

/// Parses a report CSV back into aggregates.
pub fn read_csv(text: &str) -> Result<Vec<Aggregate>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let err = |line: usize, m: String| BenchError::Parse { path: "report".into(), line, message: m };
    let header: Vec<String> = r.headers().map_err(|e| err(1, e.to_string()))?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(err(1, "unexpected report header".into()));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| err(0, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> Result<Option<f64>> {
            let v: f64 = rec[i].parse().map_err(|_| err(line, format!("bad number '{}'", &rec[i])))?;
            Ok(if v.is_nan() { None } else { Some(v) })
        };
        let int = |i: usize| rec[i].parse::<usize>().map_err(|_| err(line, format!("bad integer '{}'", &rec[i])));
        out.push(Aggregate {
            problem: rec[0].to_string(),
            method: rec[1].parse()?,
            n_lf: int(2)?,
            n_hf: int(3)?,
            r2_mean: num(4)?,
            r2_std: num(5)?,
            rmse_mean: num(6)?,
            rmse_std: num(7)?,
            mnll_mean: num(8)?,
            mnll_std: num(9)?,
            rmse_evolution_pct: num(10)?,
            n_failed: int(11)?,
        });
    }
    Ok(out)
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| BenchError::Parse { path: "report".into(), line: e.line(), message: e.to_string() })
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        write_csv(&self.aggregates, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }

    /// Writes `report.csv` or `report.json` under `dir` and returns its path.
    pub fn emit(&self, format: Format, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
        let (name, body) = match format {
            Format::Csv => ("report.csv", self.to_csv()),
            Format::Json => ("report.json", self.to_json()),
        };
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| BenchError::io(&path, e))?;
        Ok(path)
    }
}
