//! Box-constrained limited-memory quasi-Newton minimizer.
//!
//! Search directions come from the two-loop recursion applied to the projected
//! gradient, with variables pinned at an active bound held fixed. Steps are
//! projected onto the box and accepted by an Armijo backtracking test, so the
//! objective never increases between accepted iterates.

use std::collections::VecDeque;

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsOptions<T> {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when the infinity norm of the projected gradient falls below this.
    pub pgtol: T,
    /// Stop when the relative decrease in one iteration falls below this.
    pub ftol: T,
    pub max_backtracks: usize,
}

impl<T: Scalar> Default for LbfgsOptions<T> {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iterations: 200,
            pgtol: T::lit(1e-7),
            ftol: T::lit(1e-12),
            max_backtracks: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsResult<T> {
    pub x: Vec<T>,
    pub f: T,
    pub gradient: Vec<T>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub message: &'static str,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

fn project<T: Scalar>(x: &mut [T], lo: &[T], hi: &[T]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.max(*l).min(*h);
    }
}

fn projected_gradient<T: Scalar>(x: &[T], g: &[T], lo: &[T], hi: &[T]) -> Vec<T> {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&xi, &gi), (&l, &h))| {
            if (xi <= l && gi > T::zero()) || (xi >= h && gi < T::zero()) {
                T::zero()
            } else {
                gi
            }
        })
        .collect()
}

/// Minimizes `f` over the box `[lower, upper]` starting from `x0` (clamped into the box).
///
/// `f` returns the value and gradient; a non-finite value marks the point as
/// infeasible and makes the line search back off.
pub fn minimize_bounded<T: Scalar>(
    mut f: impl FnMut(&[T]) -> (T, Vec<T>),
    x0: &[T],
    lower: &[T],
    upper: &[T],
    opts: &LbfgsOptions<T>,
) -> LbfgsResult<T> {
    let n = x0.len();
    assert!(lower.len() == n && upper.len() == n, "bound length mismatch");
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let (mut fx, mut g) = f(&x);
    let mut evaluations = 1;
    let mut history: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(opts.memory);
    let c1 = T::lit(1e-4);

    let finish = |x, f, gradient, iterations, evaluations, converged, message| LbfgsResult {
        x,
        f,
        gradient,
        iterations,
        evaluations,
        converged,
        message,
    };

    if !fx.is_finite() {
        return finish(x, fx, g, 0, evaluations, false, "objective not finite at start");
    }

    for it in 0..opts.max_iterations {
        let pg = projected_gradient(&x, &g, lower, upper);
        let pg_norm = pg.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if pg_norm <= opts.pgtol {
            return finish(x, fx, g, it, evaluations, true, "projected gradient below tolerance");
        }

        // two-loop recursion on the free variables
        let mut q = pg.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = *rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * *yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = *rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (*a - b) * *si;
            }
        }
        let mut d: Vec<T> = q
            .iter()
            .zip(&pg)
            .map(|(v, p)| if *p == T::zero() { T::zero() } else { -*v })
            .collect();
        if dot(&d, &pg) >= T::zero() {
            history.clear();
            d = pg.iter().map(|v| -*v).collect();
        }

        let mut step = if history.is_empty() {
            let norm = dot(&pg, &pg).sqrt();
            T::one().min(T::one() / norm)
        } else {
            T::one()
        };

        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let mut xn: Vec<T> = x.iter().zip(&d).map(|(xi, di)| *xi + step * *di).collect();
            project(&mut xn, lower, upper);
            if xn == x {
                break;
            }
            let (fnew, gnew) = f(&xn);
            evaluations += 1;
            let delta: Vec<T> = xn.iter().zip(&x).map(|(a, b)| *a - *b).collect();
            if fnew.is_finite() && fnew <= fx + c1 * dot(&g, &delta) {
                accepted = Some((xn, fnew, gnew, delta));
                break;
            }
            step *= T::lit(0.5);
        }
        let Some((xn, fnew, gnew, s)) = accepted else {
            return finish(x, fx, g, it, evaluations, false, "line search could not decrease the objective");
        };

        let y: Vec<T> = gnew.iter().zip(&g).map(|(a, b)| *a - *b).collect();
        let sy = dot(&s, &y);
        if sy > T::epsilon() * dot(&y, &y) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, T::one() / sy));
        }

        let decrease = fx - fnew;
        let scale = fx.abs().max(fnew.abs()).max(T::one());
        x = xn;
        fx = fnew;
        g = gnew;
        if decrease <= opts.ftol * scale {
            return finish(x, fx, g, it + 1, evaluations, true, "relative decrease below tolerance");
        }
    }
    finish(x, fx, g, opts.max_iterations, evaluations, false, "iteration limit reached")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        (f, g)
    }

    #[test]
    fn unconstrained_rosenbrock() {
        let opts = LbfgsOptions {
            max_iterations: 500,
            ..Default::default()
        };
        let r = minimize_bounded(rosenbrock, &[-1.2, 1.0], &[-10.0; 2], &[10.0; 2], &opts);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{r:?}");
    }

    #[test]
    fn active_bound() {
        // minimum of (x-3)^2 + (y+1)^2 on [0,2]x[0,2] is (2,0)
        let f = |x: &[f64]| {
            (
                (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2),
                vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 1.0)],
            )
        };
        let r = minimize_bounded(f, &[1.0, 1.0], &[0.0; 2], &[2.0; 2], &LbfgsOptions::default());
        assert!(r.converged);
        assert_eq!(r.x, vec![2.0, 0.0]);
        assert_eq!(r.f, 2.0);
    }

    #[test]
    fn never_increases_and_backs_off_infeasible_points() {
        let f = |x: &[f64]| {
            if x[0] > 0.5 {
                (f64::NAN, vec![0.0])
            } else {
                (x[0] * x[0] - x[0], vec![2.0 * x[0] - 1.0])
            }
        };
        let start = f(&[-2.0]).0;
        let r = minimize_bounded(f, &[-2.0], &[-5.0], &[5.0], &LbfgsOptions::default());
        assert!(r.f <= start);
        assert!(r.x[0] <= 0.5 && (r.x[0] - 0.5).abs() < 1e-3, "{r:?}");
    }
}
