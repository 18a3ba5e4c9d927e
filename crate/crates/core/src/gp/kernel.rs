//! Covariance functions.
//!
//! Only the ARD squared-exponential ships. Its per-dimension parameter `l_d`
//! divides the squared difference directly:
//! `k(a, b) = s2 * exp(-sum_d (a_d - b_d)^2 / (2 l_d))`.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::GpError;
use crate::scalar::Scalar;

/// A positive-semidefinite covariance function with log-parameterized hyperparameters.
pub trait Kernel<T: Scalar>: Clone + Send + Sync {
    fn eval(&self, a: &[T], b: &[T]) -> T;

    /// `k(a, a)`.
    fn diag(&self, a: &[T]) -> T;

    fn n_params(&self) -> usize;

    fn log_params(&self) -> Vec<T>;

    fn set_log_params(&mut self, p: &[T]);

    /// For each log-hyperparameter `t`, `sum_ij w_ij dK_ij/dt` given the
    /// Gram matrix `k` of `x` and a symmetric weight matrix `w`.
    fn gradient_contraction(&self, x: ArrayView2<T>, k: ArrayView2<T>, w: ArrayView2<T>) -> Vec<T>;

    /// Gram matrix of the rows of `x`.
    fn gram(&self, x: ArrayView2<T>) -> Array2<T> {
        let n = x.nrows();
        let x = x.as_standard_layout();
        let rows: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = x.row(i);
                let xi = xi.as_slice().expect("standard layout");
                (0..=i)
                    .map(|j| {
                        if i == j {
                            self.diag(xi)
                        } else {
                            self.eval(xi, x.row(j).as_slice().expect("standard layout"))
                        }
                    })
                    .collect()
            })
            .collect();
        let mut k = Array2::zeros((n, n));
        for (i, row) in rows.into_iter().enumerate() {
            for (j, v) in row.into_iter().enumerate() {
                k[[i, j]] = v;
                k[[j, i]] = v;
            }
        }
        k
    }

    /// Cross-covariance `K[i, j] = k(a_i, b_j)`.
    fn cross(&self, a: ArrayView2<T>, b: ArrayView2<T>) -> Array2<T> {
        let a = a.as_standard_layout();
        let b = b.as_standard_layout();
        let mut out = Array2::zeros((a.nrows(), b.nrows()));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut row)| {
                let ai = a.row(i);
                let ai = ai.as_slice().expect("standard layout");
                for (j, o) in row.iter_mut().enumerate() {
                    *o = self.eval(ai, b.row(j).as_slice().expect("standard layout"));
                }
            });
        out
    }
}

/// Squared-exponential kernel with one relevance parameter per input dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArdRbf<T> {
    pub lengthscales: Vec<T>,
    pub signal_variance: T,
}

impl<T: Scalar> ArdRbf<T> {
    pub fn new(lengthscales: Vec<T>, signal_variance: T) -> Self {
        ArdRbf {
            lengthscales,
            signal_variance,
        }
    }

    pub fn isotropic(dim: usize, lengthscale: T, signal_variance: T) -> Self {
        ArdRbf::new(vec![lengthscale; dim], signal_variance)
    }
}

impl<T: Scalar> Kernel<T> for ArdRbf<T> {
    #[inline]
    fn eval(&self, a: &[T], b: &[T]) -> T {
        let mut acc = T::zero();
        for ((x, y), l) in a.iter().zip(b).zip(&self.lengthscales) {
            let d = *x - *y;
            acc += d * d / *l;
        }
        self.signal_variance * (-acc / T::lit(2.0)).exp()
    }

    fn diag(&self, _a: &[T]) -> T {
        self.signal_variance
    }

    fn n_params(&self) -> usize {
        self.lengthscales.len() + 1
    }

    fn log_params(&self) -> Vec<T> {
        self.lengthscales
            .iter()
            .map(|l| l.ln())
            .chain(std::iter::once(self.signal_variance.ln()))
            .collect()
    }

    fn set_log_params(&mut self, p: &[T]) {
        let d = self.lengthscales.len();
        for (l, v) in self.lengthscales.iter_mut().zip(&p[..d]) {
            *l = v.exp();
        }
        self.signal_variance = p[d].exp();
    }

    fn gradient_contraction(&self, x: ArrayView2<T>, k: ArrayView2<T>, w: ArrayView2<T>) -> Vec<T> {
        // dK_ij/dlog l_d = K_ij (x_id - x_jd)^2 / (2 l_d), dK/dlog s2 = K.
        // With M = W o K: sum_ij M_ij (x_id - x_jd)^2 = 2 (sum_i r_i x_id^2 - x_d' M x_d).
        let m = &w * &k;
        let row_sums = m.sum_axis(Axis(1));
        let mx = m.dot(&x);
        let mut out = Vec::with_capacity(self.n_params());
        for (d, l) in self.lengthscales.iter().enumerate() {
            let mut acc = T::zero();
            for i in 0..x.nrows() {
                let xi = x[[i, d]];
                acc += xi * (row_sums[i] * xi - mx[[i, d]]);
            }
            out.push(acc / *l);
        }
        out.push(m.sum());
        out
    }
}

/// Hyperparameters of the ARD RBF kernel plus the shared observation noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams<T> {
    pub lengthscales: Vec<T>,
    pub signal_variance: T,
    pub noise_variance: T,
}

impl<T: Scalar> KernelParams<T> {
    pub fn new(lengthscales: Vec<T>, signal_variance: T, noise_variance: T) -> Result<Self, GpError> {
        let p = KernelParams {
            lengthscales,
            signal_variance,
            noise_variance,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GpError> {
        let ok = |v: T| v > T::zero() && v.is_finite();
        if !self.lengthscales.iter().all(|&l| ok(l)) {
            return Err(GpError::InvalidParameter("lengthscales must be positive".into()));
        }
        if !ok(self.signal_variance) {
            return Err(GpError::InvalidParameter("signal variance must be positive".into()));
        }
        if !(self.noise_variance >= T::zero() && self.noise_variance.is_finite()) {
            return Err(GpError::InvalidParameter("noise variance must be non-negative".into()));
        }
        Ok(())
    }

    pub fn kernel(&self) -> ArdRbf<T> {
        ArdRbf::new(self.lengthscales.clone(), self.signal_variance)
    }

    /// `[log l_1 .. log l_d, log s2, log noise]`.
    pub fn to_log(&self) -> Vec<T> {
        let mut v = self.kernel().log_params();
        v.push(self.noise_variance.ln());
        v
    }

    pub fn from_log(p: &[T]) -> Self {
        let d = p.len() - 2;
        KernelParams {
            lengthscales: p[..d].iter().map(|v| v.exp()).collect(),
            signal_variance: p[d].exp(),
            noise_variance: p[d + 1].exp(),
        }
    }
}

/// Evaluates the ARD RBF kernel between two input vectors.
pub fn kernel_eval<T: Scalar>(a: &[T], b: &[T], params: &KernelParams<T>) -> Result<T, GpError> {
    if a.len() != b.len() || a.len() != params.lengthscales.len() {
        return Err(GpError::Dimension {
            expected: params.lengthscales.len(),
            got: if a.len() != params.lengthscales.len() {
                a.len()
            } else {
                b.len()
            },
        });
    }
    params.validate()?;
    Ok(params.kernel().eval(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_distance_gives_signal_variance() {
        let p = KernelParams::new(vec![0.3, 2.0], 1.7, 0.1).unwrap();
        assert_eq!(kernel_eval(&[0.4, -1.0], &[0.4, -1.0], &p).unwrap(), 1.7);
    }

    #[test]
    fn hand_evaluated_value() {
        let p = KernelParams::new(vec![2.0], 1.0, 0.0).unwrap();
        let v = kernel_eval(&[2f64.sqrt()], &[0.0], &p).unwrap();
        assert!((v - 0.606530660).abs() < 1e-9);
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn symmetric() {
        let p = KernelParams::new(vec![0.5, 1.5, 3.0], 2.0, 0.0).unwrap();
        let a = [0.1, -0.7, 2.0];
        let b = [1.1, 0.3, -0.5];
        assert_eq!(kernel_eval(&a, &b, &p).unwrap(), kernel_eval(&b, &a, &p).unwrap());
    }

    #[test]
    fn errors() {
        let p = KernelParams::new(vec![1.0, 1.0], 1.0, 0.0).unwrap();
        assert!(matches!(
            kernel_eval(&[1.0], &[1.0], &p),
            Err(GpError::Dimension { .. })
        ));
        assert!(KernelParams::new(vec![0.0], 1.0, 0.0).is_err());
        assert!(KernelParams::new(vec![1.0], -1.0, 0.0).is_err());
        assert!(KernelParams::new(vec![1.0], 1.0, -1e-3).is_err());
    }

    #[test]
    fn log_round_trip() {
        let p = KernelParams::<f64>::new(vec![0.5, 4.0], 2.0, 1e-3).unwrap();
        let q = KernelParams::from_log(&p.to_log());
        for (a, b) in p.lengthscales.iter().zip(&q.lengthscales) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((p.noise_variance - q.noise_variance).abs() < 1e-18);
    }

    #[test]
    fn gradient_contraction_matches_direct_sum() {
        let x = array![[0.1, 1.0], [0.5, -0.3], [-0.8, 0.2], [1.2, 0.9]];
        let k = ArdRbf::new(vec![0.7, 1.9], 1.3);
        let gram = k.gram(x.view());
        let w = array![
            [1.0, 0.2, -0.3, 0.5],
            [0.2, -1.0, 0.4, 0.1],
            [-0.3, 0.4, 0.6, -0.2],
            [0.5, 0.1, -0.2, 0.3]
        ];
        let got = k.gradient_contraction(x.view(), gram.view(), w.view());
        for d in 0..2 {
            let mut direct = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    let diff: f64 = x[[i, d]] - x[[j, d]];
                    direct += w[[i, j]] * gram[[i, j]] * diff * diff / (2.0 * k.lengthscales[d]);
                }
            }
            assert!((got[d] - direct).abs() < 1e-12, "{d}: {} vs {direct}", got[d]);
        }
        let direct_s: f64 = (&w * &gram).sum();
        assert!((got[2] - direct_s).abs() < 1e-12);
    }
}
