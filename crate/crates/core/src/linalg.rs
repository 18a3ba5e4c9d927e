//! Dense Cholesky factorization and triangular solves.
//!
//! Matrices are row-major `ndarray` arrays. Right-hand sides are passed as the
//! *rows* of a matrix so each one is contiguous and can be solved
//! independently; parallel paths never change the floating-point evaluation
//! order, so results are bitwise deterministic.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use thiserror::Error;

use crate::scalar::Scalar;

const PARALLEL_THRESHOLD: usize = 192;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("Cholesky failed even with jitter {max_jitter:e}")]
    JitterExhausted { max_jitter: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

/// Lower-triangular `L` with `L L^T = a`. Only the lower triangle of `a` is read.
pub fn cholesky<T: Scalar>(a: ArrayView2<T>) -> Result<Array2<T>, LinalgError> {
    let (n, m) = a.dim();
    if n != m {
        return Err(LinalgError::NotSquare { rows: n, cols: m });
    }
    let mut l = vec![T::zero(); n * n];
    let mut pivot_row = vec![T::zero(); n];
    for j in 0..n {
        let (head, tail) = l.split_at_mut((j + 1) * n);
        let row_j = &mut head[j * n..(j + 1) * n];
        let d = a[[j, j]] - dot(&row_j[..j], &row_j[..j]);
        if !(d > T::zero()) || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { pivot: j });
        }
        let ljj = d.sqrt();
        row_j[j] = ljj;
        pivot_row[..j].copy_from_slice(&row_j[..j]);
        let prefix = &pivot_row[..j];
        let update = |(offset, row): (usize, &mut [T])| {
            let i = j + 1 + offset;
            row[j] = (a[[i, j]] - dot(&row[..j], prefix)) / ljj;
        };
        if n - j > PARALLEL_THRESHOLD {
            tail.par_chunks_mut(n).enumerate().for_each(update);
        } else {
            tail.chunks_mut(n).enumerate().for_each(update);
        }
    }
    Ok(Array2::from_shape_vec((n, n), l).expect("n*n buffer"))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JitterLadder<T> {
    /// First diagonal addition tried (zero is allowed).
    pub initial: T,
    /// Largest jitter before giving up; each retry multiplies by ten.
    pub max: T,
}

impl<T: Scalar> Default for JitterLadder<T> {
    fn default() -> Self {
        JitterLadder {
            initial: T::lit(1e-10),
            max: T::lit(1e-4),
        }
    }
}

impl<T: Scalar> JitterLadder<T> {
    fn steps(&self) -> Vec<T> {
        let mut out = vec![self.initial];
        let mut j = if self.initial > T::zero() {
            self.initial
        } else {
            T::lit(1e-10).min(self.max)
        };
        if j <= T::zero() {
            return out;
        }
        if self.initial <= T::zero() {
            out.push(j);
        }
        // tolerate rounding in the last step so the ladder reaches `max`
        let cap = self.max * T::lit(1.0 + 1e-9);
        while j * T::lit(10.0) <= cap {
            j = j * T::lit(10.0);
            out.push(j);
        }
        out
    }
}

/// Cholesky of `a + jitter I`, escalating the jitter along `ladder`.
/// Returns the factor and the jitter that succeeded.
pub fn cholesky_jittered<T: Scalar>(
    a: ArrayView2<T>,
    ladder: &JitterLadder<T>,
) -> Result<(Array2<T>, T), LinalgError> {
    let n = a.nrows();
    let mut work = a.to_owned();
    let mut applied = T::zero();
    for jitter in ladder.steps() {
        if jitter != applied {
            for i in 0..n {
                work[[i, i]] += jitter - applied;
            }
            applied = jitter;
        }
        match cholesky(work.view()) {
            Ok(l) => return Ok((l, jitter)),
            Err(LinalgError::NotPositiveDefinite { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(LinalgError::JitterExhausted {
        max_jitter: ladder.max.as_f64(),
    })
}

fn forward_sub<T: Scalar>(l: &ArrayView2<T>, b: &mut [T]) {
    let n = b.len();
    for i in 0..n {
        let row = l.row(i);
        let row = row.as_slice().expect("standard layout");
        b[i] = (b[i] - dot(&row[..i], &b[..i])) / row[i];
    }
}

fn backward_sub_transposed<T: Scalar>(l: &ArrayView2<T>, b: &mut [T]) {
    // Solves L^T x = b; column i of L^T is row i of L.
    let n = b.len();
    for i in (0..n).rev() {
        b[i] /= l[[i, i]];
        let xi = b[i];
        let row = l.row(i);
        let row = row.as_slice().expect("standard layout");
        for k in 0..i {
            b[k] -= row[k] * xi;
        }
    }
}

fn for_each_rhs<T: Scalar>(rhs_rows: &mut Array2<T>, f: impl Fn(&mut [T]) + Sync) {
    let parallel = rhs_rows.nrows() > 1 && rhs_rows.ncols() > PARALLEL_THRESHOLD / 4;
    if parallel {
        rhs_rows
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .for_each(|mut r| f(r.as_slice_mut().expect("standard layout")));
    } else {
        for mut r in rhs_rows.axis_iter_mut(Axis(0)) {
            f(r.as_slice_mut().expect("standard layout"));
        }
    }
}

fn check_rhs<T: Scalar>(l: &Array2<T>, rhs_rows: &Array2<T>) -> Result<(), LinalgError> {
    if rhs_rows.ncols() != l.nrows() {
        return Err(LinalgError::Dimension {
            expected: l.nrows(),
            got: rhs_rows.ncols(),
        });
    }
    Ok(())
}

/// Overwrites each row `b` of `rhs_rows` with `L^{-1} b`.
pub fn solve_lower_rows<T: Scalar>(l: &Array2<T>, rhs_rows: &mut Array2<T>) -> Result<(), LinalgError> {
    check_rhs(l, rhs_rows)?;
    let lv = l.view();
    let lv = lv.as_standard_layout();
    let lv = lv.view();
    for_each_rhs(rhs_rows, |b| forward_sub(&lv, b));
    Ok(())
}

/// Overwrites each row `b` of `rhs_rows` with `(L L^T)^{-1} b`.
pub fn cholesky_solve_rows<T: Scalar>(
    l: &Array2<T>,
    rhs_rows: &mut Array2<T>,
) -> Result<(), LinalgError> {
    check_rhs(l, rhs_rows)?;
    let lv = l.as_standard_layout();
    let lv = lv.view();
    for_each_rhs(rhs_rows, |b| {
        forward_sub(&lv, b);
        backward_sub_transposed(&lv, b);
    });
    Ok(())
}

/// `(L L^T)^{-1}`.
pub fn cholesky_inverse<T: Scalar>(l: &Array2<T>) -> Array2<T> {
    let mut inv = Array2::eye(l.nrows());
    cholesky_solve_rows(l, &mut inv).expect("square by construction");
    // symmetrize the rounding noise
    let n = inv.nrows();
    for i in 0..n {
        for j in 0..i {
            let m = (inv[[i, j]] + inv[[j, i]]) / T::lit(2.0);
            inv[[i, j]] = m;
            inv[[j, i]] = m;
        }
    }
    inv
}

/// `sum(log(diag(L)))`, i.e. half the log-determinant of `L L^T`.
pub fn half_log_det<T: Scalar>(l: &Array2<T>) -> T {
    l.diag().iter().map(|d| d.ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        b.dot(&b.t()) + Array2::<f64>::eye(n) * (n as f64)
    }

    #[test]
    fn factor_reconstructs_small_and_large() {
        for n in [1, 5, 300] {
            let a = random_spd(n, n as u64);
            let l = cholesky(a.view()).unwrap();
            let err = (&l.dot(&l.t()) - &a).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err / scale < 1e-12, "n={n} rel err {}", err / scale);
            for i in 0..n {
                for j in i + 1..n {
                    assert_eq!(l[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn not_positive_definite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert_eq!(
            cholesky(a.view()).unwrap_err(),
            LinalgError::NotPositiveDefinite { pivot: 1 }
        );
        assert!(matches!(
            cholesky(array![[1.0, 2.0]].view()),
            Err(LinalgError::NotSquare { .. })
        ));
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let (l, jitter): (Array2<f64>, f64) = cholesky_jittered(a.view(), &JitterLadder::default()).unwrap();
        assert!(jitter >= 1e-10 && jitter <= 1e-4);
        let rec = l.dot(&l.t());
        assert!((rec[[0, 1]] - 1.0).abs() < 1e-12);
        let neg = array![[-1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(
            cholesky_jittered(neg.view(), &JitterLadder::default()),
            Err(LinalgError::JitterExhausted { .. })
        ));
    }

    #[test]
    fn ladder_steps() {
        let s = JitterLadder::<f64>::default().steps();
        assert_eq!(s.len(), 7);
        assert_eq!(s[0], 1e-10);
        assert!((s[6] - 1e-4).abs() < 1e-18);
        let z = JitterLadder { initial: 0.0, max: 1e-9 }.steps();
        assert_eq!(z.len(), 3);
        assert_eq!(z[0], 0.0);
        assert_eq!(JitterLadder { initial: 0.0, max: 0.0 }.steps(), vec![0.0]);
    }

    #[test]
    fn solves_and_inverse() {
        let n = 40;
        let a = random_spd(n, 9);
        let l = cholesky(a.view()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = Array2::from_shape_fn((3, n), |_| rng.random_range(-1.0..1.0));
        let mut x = b.clone();
        cholesky_solve_rows(&l, &mut x).unwrap();
        let back = x.dot(&a);
        assert!((&back - &b).iter().all(|v| v.abs() < 1e-10));

        let mut y = b.clone();
        solve_lower_rows(&l, &mut y).unwrap();
        let back = y.dot(&l.t());
        assert!((&back - &b).iter().all(|v| v.abs() < 1e-10));

        let inv = cholesky_inverse(&l);
        let eye = inv.dot(&a);
        for i in 0..n {
            for j in 0..n {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((eye[[i, j]] - e).abs() < 1e-10);
            }
        }
        let logdet: f64 = 2.0 * half_log_det(&l);
        let direct: f64 = (0..n).map(|i| l[[i, i]] * l[[i, i]]).map(f64::ln).sum();
        assert!((logdet - direct).abs() < 1e-10);
    }

    #[test]
    fn rhs_dimension_checked() {
        let l = Array2::<f64>::eye(3);
        let mut b = Array2::<f64>::zeros((2, 4));
        assert!(cholesky_solve_rows(&l, &mut b).is_err());
    }
}
