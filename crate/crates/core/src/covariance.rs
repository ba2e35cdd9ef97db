//! Flat-parameter covariance interface used by the exact and variational engines.
//!
//! Every model in the crate (single-fidelity GP, NARGP levels, LMC, coupled AR1,
//! MF-DGP layers) describes its prior covariance through this trait. Parameters
//! are unconstrained reals (log scale for positive quantities) and each one
//! carries optimization bounds and an initialization range.

use nalgebra::{DMatrix, DVector};

/// Box bounds and multi-start initialization range of one flat parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBound {
    pub lower: f64,
    pub upper: f64,
    pub init_lower: f64,
    pub init_upper: f64,
}

impl ParamBound {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper, init_lower: lower, init_upper: upper }
    }

    pub const fn with_init(lower: f64, upper: f64, init_lower: f64, init_upper: f64) -> Self {
        Self { lower, upper, init_lower, init_upper }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower - 1e-12 && v <= self.upper + 1e-12
    }
}

pub trait Covariance: Send + Sync {
    /// Number of flat covariance parameters (noise and mean excluded).
    fn n_params(&self) -> usize;

    /// Number of input columns the covariance reads.
    fn n_cols(&self) -> usize;

    fn bounds(&self) -> Vec<ParamBound>;

    /// Cross-covariance between the rows of `a` and `b`.
    fn cross(&self, p: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64>;

    /// Prior variance at each row of `a`.
    fn diag(&self, p: &[f64], a: &DMatrix<f64>) -> DVector<f64>;

    /// `d cross(a, b) / d p_j` for every parameter.
    fn cross_grad(&self, p: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<DMatrix<f64>>;

    /// `d diag(a) / d p_j` for every parameter.
    fn diag_grad(&self, p: &[f64], a: &DMatrix<f64>) -> Vec<DVector<f64>>;

    /// Number of independent observation-noise variances.
    fn noise_groups(&self) -> usize {
        1
    }

    /// Noise group of row `row` of `a`.
    fn noise_group(&self, _a: &DMatrix<f64>, _row: usize) -> usize {
        0
    }
}

/// Covariances that are differentiable in their first argument.
pub trait InputGradient: Covariance {
    /// Row `i`, column `c` of the result is `sum_j w[i, j] * d k(a_i, b_j) / d a_ic`.
    fn input_grad(&self, p: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64>;
}
