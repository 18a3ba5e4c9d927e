//! Prediction error summaries in per-unit voltage space.

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: predictions {pred:?}, truth {truth:?}")]
    Shape { pred: (usize, usize), truth: (usize, usize) },
    #[error("no entries to compare")]
    Empty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub unit: String,
    pub mse: f64,
    pub mae: f64,
    pub max_abs_error: f64,
    pub min_abs_error: f64,
    /// Mean absolute error of each output column.
    pub per_output_mae: Vec<f64>,
    /// Mean absolute error of each query row.
    pub per_sample_mae: Vec<f64>,
}

impl ErrorReport {
    pub fn rmse(&self) -> f64 {
        self.mse.sqrt()
    }
}

pub fn compute_errors<T: Scalar>(pred: ArrayView2<T>, truth: ArrayView2<T>) -> Result<ErrorReport, MetricsError> {
    if pred.dim() != truth.dim() {
        return Err(MetricsError::Shape {
            pred: pred.dim(),
            truth: truth.dim(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    let err = (&pred - &truth).mapv(|v| v.as_f64().abs());
    let n = err.len() as f64;
    let mse = err.iter().map(|e| e * e).sum::<f64>() / n;
    let mae = err.sum() / n;
    let max_abs_error = err.iter().copied().fold(0.0, f64::max);
    let min_abs_error = err.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = |axis| -> Vec<f64> { err.mean_axis(Axis(axis)).map(|a| a.to_vec()).unwrap_or_default() };
    Ok(ErrorReport {
        unit: "pu".into(),
        mse,
        mae,
        max_abs_error,
        min_abs_error,
        per_output_mae: mean(0),
        per_sample_mae: mean(1),
    })
}
