//! Experiment configuration, read from TOML. Every top-level key can be
//! overridden by the CLI flag of the same name.
//!
//! ```toml
//! problem = "bench_1d:a=1"
//! methods = ["gp_hf", "lmc", "ar1", "nargp", "nargp_nested", "mfdgp"]
//! doe_sizes = [[30, 10]]
//! reps = 20
//! seed = 0
//! out = "results"
//! format = "csv"
//!
//! [optimizer]          # shared by every method
//! restarts = 10
//!
//! [optimizers.lmc]     # per-method override
//! restarts = 5
//!
//! [mfdgp]
//! iterations = 5000
//!
//! [data]               # only for problem = "csv"
//! csv = "train.csv"
//! dim = 2
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mfgp::mf::MfdgpConfig;
use mfgp::OptConfig;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::problem::ProblemName;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GpHf,
    Lmc,
    Ar1,
    Nargp,
    NargpNested,
    Mfdgp,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::GpHf, Method::Lmc, Method::Ar1, Method::Nargp, Method::NargpNested, Method::Mfdgp];

    pub fn name(self) -> &'static str {
        match self {
            Method::GpHf => "gp_hf",
            Method::Lmc => "lmc",
            Method::Ar1 => "ar1",
            Method::Nargp => "nargp",
            Method::NargpNested => "nargp_nested",
            Method::Mfdgp => "mfdgp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| BenchError::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(BenchError::Config(format!("unknown format '{s}', expected csv or json"))),
        }
    }
}

/// External data for `problem = "csv"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub csv: PathBuf,
    pub dim: usize,
    /// Held-out points; the top fidelity rows are used. Without it the test set
    /// is the top-fidelity rows not drawn for training.
    #[serde(default)]
    pub test_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: String,
    pub methods: Vec<Method>,
    /// `(n_lf, n_hf)` pairs.
    pub doe_sizes: Vec<(usize, usize)>,
    pub reps: usize,
    /// Master seed.
    pub seed: u64,
    pub out: PathBuf,
    /// Parallel repetitions; 0 uses every core.
    pub workers: usize,
    pub format: Format,
    /// Overrides the problem's default test-set size.
    pub test_set_size: Option<usize>,
    /// Monte-Carlo samples for NARGP and MF-DGP prediction.
    pub n_samples: usize,
    /// Standardize test outputs and predictions by the test-set mean and std
    /// before computing RMSE and MNLL.
    pub normalize: bool,
    pub optimizer: OptConfig,
    pub optimizers: BTreeMap<Method, OptConfig>,
    pub mfdgp: MfdgpConfig,
    pub data: Option<DataConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: "bench_1d:a=1".into(),
            methods: Method::ALL.to_vec(),
            doe_sizes: vec![(30, 10)],
            reps: 20,
            seed: 0,
            out: PathBuf::from("results"),
            workers: 0,
            format: Format::Csv,
            test_set_size: None,
            n_samples: 1000,
            normalize: false,
            optimizer: OptConfig::default(),
            optimizers: BTreeMap::new(),
            mfdgp: MfdgpConfig::default(),
            data: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Optimizer settings of `method`.
    pub fn optimizer_for(&self, method: Method) -> &OptConfig {
        self.optimizers.get(&method).unwrap_or(&self.optimizer)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(BenchError::Config(m));
        if self.reps == 0 {
            return cfg("reps must be at least 1".into());
        }
        if self.doe_sizes.is_empty() {
            return cfg("doe_sizes is empty".into());
        }
        for &(n_lf, n_hf) in &self.doe_sizes {
            if n_hf == 0 || n_hf > n_lf {
                return cfg(format!("invalid DoE size ({n_lf}, {n_hf}): need 1 <= n_hf <= n_lf"));
            }
        }
        if self.n_samples < 2 {
            return cfg("n_samples must be at least 2".into());
        }
        if self.test_set_size == Some(0) {
            return cfg("test_set_size must be positive".into());
        }
        if self.mfdgp.n_mc == 0 {
            return cfg("mfdgp.n_mc must be at least 1".into());
        }
        let problem: ProblemName = self.problem.parse()?;
        if problem == ProblemName::Csv && self.data.is_none() {
            return cfg("problem 'csv' needs a [data] table".into());
        }
        Ok(())
    }
}

/// Parses `"30x10,40x8"`.
pub fn parse_doe_sizes(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|pair| {
            let (a, b) = pair
                .trim()
                .split_once('x')
                .ok_or_else(|| BenchError::Config(format!("DoE size '{pair}' is not of the form NLFxNHF")))?;
            let n = |v: &str| v.trim().parse::<usize>().map_err(|_| BenchError::Config(format!("bad DoE size '{pair}'")));
            Ok((n(a)?, n(b)?))
        })
        .collect()
}

pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    s.split(',').filter(|m| !m.trim().is_empty()).map(|m| m.trim().parse()).collect()
}
