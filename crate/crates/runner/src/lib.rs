//! Benchmark harness for the `mfgp` multi-fidelity surrogates: repeated
//! LHS designs, six methods, R2/RMSE/MNLL scores and CSV/JSON reports.

pub mod config;
pub mod error;
pub mod ingest;
pub mod methods;
pub mod problem;
pub mod report;
pub mod runner;
pub mod seed;

pub use config::{ExperimentConfig, Format, Method};
pub use error::{BenchError, Result};
pub use report::{Aggregate, ExperimentReport, RepRecord};
pub use runner::run_experiment;
