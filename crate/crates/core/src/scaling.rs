//! Affine input and output standardization applied inside model fitting.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// `x_scaled = (x - offset) / scale`, column-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    pub fn identity(d: usize) -> Self {
        Self { offset: vec![0.0; d], scale: vec![1.0; d] }
    }

    /// Maps the column ranges of `x` onto `[0, 1]`; constant columns are only shifted.
    pub fn unit_box(x: &DMatrix<f64>) -> Self {
        let mut offset = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for c in x.column_iter() {
            let lo = c.min();
            let hi = c.max();
            offset.push(lo);
            scale.push(if hi > lo { hi - lo } else { 1.0 });
        }
        Self { offset, scale }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.offset[j]) / self.scale[j])
    }
}

/// `y_scaled = (y - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputScaling {
    pub mean: f64,
    pub std: f64,
}

impl OutputScaling {
    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    /// Zero mean, unit (population) variance; a constant output keeps `std = 1`.
    pub fn standardize(y: &DVector<f64>) -> Self {
        let n = y.len() as f64;
        let mean = y.sum() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Self { mean, std: if std > 0.0 && std.is_finite() { std } else { 1.0 } }
    }

    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| (v - self.mean) / self.std)
    }

    pub fn invert_mean(&self, m: &DVector<f64>) -> DVector<f64> {
        m.map(|v| v * self.std + self.mean)
    }

    pub fn invert_var(&self, v: &DVector<f64>) -> DVector<f64> {
        v * (self.std * self.std)
    }
}
