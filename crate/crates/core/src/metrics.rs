//! Accuracy and calibration metrics on a test set.

use nalgebra::DVector;

use crate::error::{contract, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

fn same_len(a: &DVector<f64>, b: &DVector<f64>) -> Result<()> {
    if a.len() != b.len() {
        return Err(contract(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn metric_r2(y_test: &DVector<f64>, y_pred: &DVector<f64>) -> Result<f64> {
    same_len(y_test, y_pred)?;
    if y_test.len() < 2 {
        return Err(contract("R2 needs at least two test points"));
    }
    let mean = y_test.mean();
    let ss_tot: f64 = y_test.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("R2 of a constant test set".into()));
    }
    let ss_res: f64 = y_test.iter().zip(y_pred.iter()).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn metric_rmse(y_test: &DVector<f64>, y_pred: &DVector<f64>) -> Result<f64> {
    same_len(y_test, y_pred)?;
    if y_test.is_empty() {
        return Err(contract("RMSE needs at least one test point"));
    }
    let ss: f64 = y_test.iter().zip(y_pred.iter()).map(|(y, p)| (y - p).powi(2)).sum();
    Ok((ss / y_test.len() as f64).sqrt())
}

/// Mean negative Gaussian log-density of the test targets, including the
/// `log(std)` normalization.
pub fn metric_mnll(y_test: &DVector<f64>, y_mean: &DVector<f64>, y_std: &DVector<f64>) -> Result<f64> {
    same_len(y_test, y_mean)?;
    same_len(y_test, y_std)?;
    if y_test.is_empty() {
        return Err(contract("MNLL needs at least one test point"));
    }
    if let Some(i) = y_std.iter().position(|s| !(*s > 0.0)) {
        return Err(contract(format!("predictive std at index {i} is not positive")));
    }
    let total: f64 = (0..y_test.len())
        .map(|i| {
            let s2 = y_std[i] * y_std[i];
            0.5 * (LN_2PI + s2.ln()) + (y_test[i] - y_mean[i]).powi(2) / (2.0 * s2)
        })
        .sum();
    Ok(total / y_test.len() as f64)
}
