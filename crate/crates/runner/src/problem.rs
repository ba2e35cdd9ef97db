use std::fmt;
use std::str::FromStr;

use mfgp::bench::{bench_1d, bench_vardim, BenchmarkProblem};
use mfgp::mf::MultiFidelityDataset;
use mfgp::Dataset;

use crate::config::ExperimentConfig;
use crate::error::{BenchError, Result};
use crate::ingest::{ingest_csv, ingest_top_level};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemName {
    Bench1d(u32),
    BenchVardim(usize),
    /// Data ingested from the config's `[data]` table.
    Csv,
}

impl FromStr for ProblemName {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || BenchError::Config(format!("unknown problem '{s}' (see list-problems)"));
        if s == "csv" {
            return Ok(ProblemName::Csv);
        }
        let (name, arg) = s.split_once(':').ok_or_else(bad)?;
        match (name, arg.split_once('=')) {
            ("bench_1d", Some(("a", v))) => match v.parse() {
                Ok(a @ 1..=4) => Ok(ProblemName::Bench1d(a)),
                _ => Err(bad()),
            },
            ("bench_vardim", Some(("d", v))) => match v.parse() {
                Ok(d) if d >= 2 => Ok(ProblemName::BenchVardim(d)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for ProblemName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemName::Bench1d(a) => write!(f, "bench_1d:a={a}"),
            ProblemName::BenchVardim(d) => write!(f, "bench_vardim:d={d}"),
            ProblemName::Csv => f.write_str("csv"),
        }
    }
}

/// One line per available problem, for `list-problems`.
pub fn list_problems() -> Vec<String> {
    let mut v: Vec<String> = (1..=4).map(|a| format!("bench_1d:a={a}\t1-D, [0, 1]; LF/HF relationship set by a")).collect();
    v.push("bench_vardim:d=<d>\tRosenbrock-type, d >= 2, [-3, 3]^d".into());
    v.push("csv\texternal data from the config's [data] table".into());
    v
}

pub enum Problem {
    Analytic(BenchmarkProblem),
    External { data: MultiFidelityDataset, test: Option<Dataset> },
}

impl Problem {
    pub fn resolve(config: &ExperimentConfig) -> Result<Self> {
        match config.problem.parse::<ProblemName>()? {
            ProblemName::Bench1d(a) => Ok(Problem::Analytic(bench_1d(a).map_err(|e| BenchError::Config(e.to_string()))?)),
            ProblemName::BenchVardim(d) => {
                Ok(Problem::Analytic(bench_vardim(d).map_err(|e| BenchError::Config(e.to_string()))?))
            }
            ProblemName::Csv => {
                let dc = config.data.as_ref().ok_or_else(|| BenchError::Config("problem 'csv' needs a [data] table".into()))?;
                let data = ingest_csv(&dc.csv, dc.dim)?;
                let test = match &dc.test_csv {
                    Some(p) => Some(ingest_top_level(p, dc.dim)?),
                    None => None,
                };
                for &(n_lf, n_hf) in &config.doe_sizes {
                    let (lf, hf) = (data.levels[0].len(), data.top().len());
                    // R2 needs at least two held-out points
                    let spare = if test.is_some() { 0 } else { 2 };
                    if n_lf > lf || n_hf + spare > hf {
                        return Err(BenchError::Config(format!(
                            "DoE size ({n_lf}, {n_hf}) exceeds the ingested data ({lf} LF rows, {hf} top-fidelity rows{})",
                            if spare > 0 { ", two of which must remain for testing" } else { "" }
                        )));
                    }
                }
                Ok(Problem::External { data, test })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Problem::Analytic(p) => p.d,
            Problem::External { data, .. } => data.dim(),
        }
    }
}
