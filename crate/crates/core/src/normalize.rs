//! Input standardization and target scaling shared by the GP and the MLP.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Per-column affine standardization of a design matrix.
///
/// Columns whose training variance is zero (for example phase-nodes that
/// never carry load) are *inactive*: the GP drops them from the kernel and
/// the MLP sees them as constant zeros.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T> {
    pub mean: Array1<T>,
    pub scale: Array1<T>,
    pub active: Vec<usize>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(x: ArrayView2<T>) -> Self {
        let n = T::from_usize_lossy(x.nrows().max(1));
        let mean = x.sum_axis(Axis(0)) / n;
        let mut scale = Array1::from_elem(x.ncols(), T::one());
        let mut active = Vec::new();
        for (c, col) in x.axis_iter(Axis(1)).enumerate() {
            let m = mean[c];
            let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / n;
            let sd = var.sqrt();
            // relative floor keeps round-off in a constant column from looking like signal
            if sd > T::epsilon() * T::lit(64.0) * (T::one() + m.abs()) {
                scale[c] = sd;
                active.push(c);
            }
        }
        Standardizer {
            mean,
            scale,
            active,
        }
    }

    /// Same standardization with every column treated as active.
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: Array1::zeros(dim),
            scale: Array1::from_elem(dim, T::one()),
            active: (0..dim).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// All columns standardized; inactive columns become zero.
    pub fn transform_full(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut out = x.to_owned();
        for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[c], self.scale[c]);
            let keep = self.active.binary_search(&c).is_ok();
            col.mapv_inplace(|v| if keep { (v - m) / s } else { T::zero() });
        }
        out
    }

    /// Only the active columns, standardized and multiplied by `factor`.
    pub fn transform_active(&self, x: ArrayView2<T>, factor: T) -> Array2<T> {
        let mut out = Array2::zeros((x.nrows(), self.active.len()));
        for (k, &c) in self.active.iter().enumerate() {
            let (m, s) = (self.mean[c], self.scale[c]);
            for (o, &v) in out.column_mut(k).iter_mut().zip(x.column(c)) {
                *o = (v - m) / s * factor;
            }
        }
        out
    }
}

/// Per-output centering with one global scale shared by every output.
///
/// A shared scale keeps the relative weight of outputs in a summed likelihood
/// and lets one predictive variance serve all outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler<T> {
    pub mean: Array1<T>,
    pub scale: T,
}

impl<T: Scalar> TargetScaler<T> {
    pub fn fit(y: ArrayView2<T>, rescale: bool) -> Self {
        let n = T::from_usize_lossy(y.nrows().max(1));
        let mean = y.sum_axis(Axis(0)) / n;
        let mut scale = T::one();
        if rescale && !y.is_empty() {
            let total = T::from_usize_lossy(y.len());
            let ss: T = y
                .rows()
                .into_iter()
                .map(|r| {
                    r.iter()
                        .zip(mean.iter())
                        .map(|(&v, &m)| (v - m) * (v - m))
                        .sum::<T>()
                })
                .sum();
            let rms = (ss / total).sqrt();
            if rms > T::min_positive_value() && rms.is_finite() {
                scale = rms;
            }
        }
        TargetScaler { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, y: ArrayView2<T>) -> Array2<T> {
        let mut out = &y - &self.mean.view().insert_axis(Axis(0));
        out.mapv_inplace(|v| v / self.scale);
        out
    }

    pub fn inverse(&self, z: ArrayView2<T>) -> Array2<T> {
        let mut out = z.mapv(|v| v * self.scale);
        out += &self.mean.view().insert_axis(Axis(0));
        out
    }
}
