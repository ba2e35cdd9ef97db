use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::doe::subset_rows;
use crate::error::{contract, Result};
use crate::gp::Dataset;

/// Tolerance of the row-subset test behind [`MultiFidelityDataset::is_nested`].
pub const NESTING_TOL: f64 = 1e-12;

/// Per-fidelity datasets, lowest fidelity first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiFidelityDataset {
    pub levels: Vec<Dataset>,
}

impl MultiFidelityDataset {
    pub fn new(levels: Vec<Dataset>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(contract(format!("need at least two fidelity levels, got {}", levels.len())));
        }
        let d = levels[0].dim();
        if let Some(t) = levels.iter().position(|l| l.dim() != d) {
            return Err(contract(format!("level {} has dimension {}, level 1 has {d}", t + 1, levels[t].dim())));
        }
        Ok(Self { levels })
    }

    /// Two-level dataset from LF and HF designs and outputs.
    pub fn two_level(x_lf: DMatrix<f64>, y_lf: DVector<f64>, x_hf: DMatrix<f64>, y_hf: DVector<f64>) -> Result<Self> {
        Self::new(vec![Dataset::new(x_lf, y_lf)?, Dataset::new(x_hf, y_hf)?])
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn dim(&self) -> usize {
        self.levels[0].dim()
    }

    pub fn top(&self) -> &Dataset {
        self.levels.last().expect("at least two levels")
    }

    /// `(level, rows)` pairs of points (1-based level numbers, 0-based rows) missing
    /// from the level below.
    pub fn nesting_violations(&self) -> Vec<(usize, Vec<usize>)> {
        let mut out = Vec::new();
        for t in 1..self.levels.len() {
            if let Err(rows) = subset_rows(&self.levels[t - 1].x, &self.levels[t].x, NESTING_TOL) {
                out.push((t + 1, rows));
            }
        }
        out
    }

    /// Every level's inputs are rows of the level below.
    pub fn is_nested(&self) -> bool {
        self.nesting_violations().is_empty()
    }

    pub(crate) fn require_nested(&self) -> Result<()> {
        let v = self.nesting_violations();
        if v.is_empty() {
            return Ok(());
        }
        let detail: Vec<String> = v
            .iter()
            .map(|(t, rows)| format!("level {t} rows {rows:?} are not in level {}", t - 1))
            .collect();
        Err(contract(format!("dataset is not nested: {}", detail.join("; "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nesting_is_detected_with_offending_rows() {
        let lf = DMatrix::from_column_slice(3, 1, &[0.0, 0.5, 1.0]);
        let hf = DMatrix::from_column_slice(2, 1, &[0.5, 0.7]);
        let mf = MultiFidelityDataset::two_level(lf, DVector::zeros(3), hf, DVector::zeros(2)).unwrap();
        assert!(!mf.is_nested());
        assert_eq!(mf.nesting_violations(), vec![(2, vec![1])]);
        let msg = mf.require_nested().unwrap_err().to_string();
        assert!(msg.contains("[1]"), "{msg}");
    }

    #[test]
    fn single_level_is_rejected() {
        let l = Dataset::new(DMatrix::zeros(1, 1), DVector::zeros(1)).unwrap();
        assert!(MultiFidelityDataset::new(vec![l]).is_err());
    }
}
