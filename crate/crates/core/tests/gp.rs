use gppf::gp::{log_marginal_likelihood, ArdRbf, GpConfig, GpModel, Kernel, KernelParams};
use gppf::linalg::{cholesky, JitterLadder};
use ndarray::{s, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

mod common;
use common::{min_eigenvalue, uniform};

/// Columns drawn from N(0, K + noise I) through a Cholesky factor.
fn gp_sample(x: &Array2<f64>, params: &KernelParams<f64>, outputs: usize, seed: u64) -> Array2<f64> {
    let mut k = params.kernel().gram(x.view());
    k.diag_mut().mapv_inplace(|v| v + params.noise_variance);
    let l = cholesky(k.view()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Array2::from_shape_fn((x.nrows(), outputs), |_| rng.sample::<f64, _>(StandardNormal));
    l.dot(&z)
}

#[test]
fn marginal_likelihood_gradient_matches_central_differences() {
    let x = uniform(10, 3, -1.0, 1.0, 11);
    let y = uniform(10, 2, -1.0, 1.0, 12);
    let params = KernelParams::new(vec![0.4, 1.3, 2.2], 0.9, 0.05).unwrap();
    let ladder = JitterLadder { initial: 0.0, max: 0.0 };
    let (_, grad) = log_marginal_likelihood(x.view(), y.view(), &params, &ladder).unwrap();
    let theta = params.to_log();
    let h = 1e-5;
    for k in 0..theta.len() {
        let eval = |delta: f64| {
            let mut t = theta.clone();
            t[k] += delta;
            log_marginal_likelihood(x.view(), y.view(), &KernelParams::from_log(&t), &ladder)
                .unwrap()
                .0
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let rel = (grad[k] - fd).abs() / fd.abs().max(1e-8);
        assert!(rel < 1e-4, "param {k}: analytic {} fd {fd} rel {rel}", grad[k]);
    }
}

#[test]
fn vanishing_signal_gives_pure_noise_likelihood() {
    let x = uniform(12, 2, -1.0, 1.0, 3);
    let mut y = uniform(12, 1, -1.0, 1.0, 4);
    let mean = y.mean().unwrap();
    y.mapv_inplace(|v| v - mean);
    let noise: f64 = 0.2;
    let params = KernelParams::new(vec![1.0, 1.0], 1e-12, noise).unwrap();
    let (value, _) =
        log_marginal_likelihood(x.view(), y.view(), &params, &JitterLadder { initial: 0.0, max: 0.0 }).unwrap();
    let n = 12.0;
    let ss: f64 = y.iter().map(|v| v * v).sum();
    let expected = -ss / (2.0 * noise) - n / 2.0 * (2.0 * std::f64::consts::PI * noise).ln();
    assert!((value - expected).abs() < 1e-9, "{value} vs {expected}");
}

#[test]
fn recovers_generating_hyperparameters() {
    let x = uniform(50, 2, -3.0, 3.0, 21);
    let truth = KernelParams::new(vec![1.0, 1.0], 1.0, 1e-4).unwrap();
    let y = gp_sample(&x, &truth, 8, 22);
    let m = GpModel::fit(x.view(), y.view(), &GpConfig::unnormalized()).unwrap();
    let got = m.params().to_log();
    let want = truth.to_log();
    for (k, (g, w)) in got.iter().zip(&want).enumerate() {
        assert!((g - w).abs() < 0.5, "log-param {k}: recovered {g:.3}, true {w:.3}");
    }
}

#[test]
fn doubling_lengthscales_after_fit_does_not_help() {
    let x = uniform(40, 2, -2.0, 2.0, 31);
    let y = gp_sample(&x, &KernelParams::new(vec![0.8, 1.5], 1.0, 1e-3).unwrap(), 3, 32);
    let m = GpModel::fit(x.view(), y.view(), &GpConfig::unnormalized()).unwrap();
    let mut doubled = m.params().clone();
    doubled.lengthscales.iter_mut().for_each(|l| *l *= 2.0);
    let (at_fit, _) = m.log_marginal_likelihood_at(m.params()).unwrap();
    let (at_double, _) = m.log_marginal_likelihood_at(&doubled).unwrap();
    assert!(at_double <= at_fit, "{at_double} > {at_fit}");
    assert!((at_fit - m.log_marginal_likelihood()).abs() < 1e-8);
}

#[test]
fn noise_free_model_interpolates_training_targets() {
    let x = uniform(20, 3, -2.0, 2.0, 41);
    let y = uniform(20, 4, 0.9, 1.05, 42);
    let cfg = GpConfig {
        jitter: JitterLadder { initial: 0.0, max: 1e-12 },
        ..GpConfig::unnormalized()
    };
    let params = KernelParams::new(vec![0.5; 3], 1.0, 0.0).unwrap();
    let m = GpModel::condition(x.view(), y.view(), params, &cfg).unwrap();
    assert!(m.jitter() <= 1e-12);
    let p = m.predict(x.view()).unwrap();
    let worst = (&p.mean - &y).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(worst < 1e-6, "{worst}");
    assert!(p.variance.iter().all(|v| *v >= 0.0 && *v < 1e-6));
}

#[test]
fn prior_reversion_far_from_data() {
    let x = uniform(15, 2, -1.0, 1.0, 51);
    let y = uniform(15, 3, 0.95, 1.0, 52);
    let params = KernelParams::new(vec![0.3, 0.7], 0.5, 2e-3).unwrap();
    let m = GpModel::condition(x.view(), y.view(), params, &GpConfig::unnormalized()).unwrap();
    let q = ndarray::array![[50.0, -80.0], [1e4, 1e4]];
    let p = m.predict(q.view()).unwrap();
    let mean = y.mean_axis(ndarray::Axis(0)).unwrap();
    for r in 0..2 {
        assert!((p.variance[r] - 0.502).abs() < 1e-12);
        for o in 0..3 {
            assert!((p.mean[[r, o]] - mean[o]).abs() < 1e-12);
        }
    }
}

#[test]
fn joint_prediction_equals_per_output_prediction() {
    let x = uniform(25, 4, -1.0, 1.0, 61);
    let y = uniform(25, 5, 0.9, 1.05, 62);
    let q = uniform(9, 4, -1.2, 1.2, 63);
    let cfg = GpConfig::default();
    let joint = GpModel::fit(x.view(), y.view(), &cfg).unwrap();
    let pj = joint.predict(q.view()).unwrap();
    for o in 0..5 {
        let single = GpModel::condition(x.view(), y.slice(s![.., o..o + 1]), joint.params().clone(), &cfg).unwrap();
        let ps = single.predict(q.view()).unwrap();
        for r in 0..9 {
            let d = (ps.mean[[r, 0]] - pj.mean[[r, o]]).abs();
            assert!(d < 1e-12, "output {o} row {r}: {d:e}");
        }
    }
}

#[test]
fn constant_targets_are_reproduced_exactly() {
    let x = uniform(24, 6, 0.0, 1.0, 71);
    let y = Array2::from_shape_fn((24, 3), |(_, o)| 0.97 + 0.01 * o as f64);
    let m = GpModel::fit(x.view(), y.view(), &GpConfig::default()).unwrap();
    let p = m.predict_mean(uniform(6, 6, 0.0, 1.0, 72).view()).unwrap();
    for r in 0..6 {
        for o in 0..3 {
            assert!((p[[r, o]] - y[[0, o]]).abs() < 1e-12);
        }
    }
}

#[test]
fn concurrent_predictions_agree() {
    let x = uniform(30, 3, -1.0, 1.0, 81);
    let y = uniform(30, 2, -1.0, 1.0, 82);
    let m = GpModel::fit(x.view(), y.view(), &GpConfig::default()).unwrap();
    let q = uniform(10, 3, -1.0, 1.0, 83);
    let reference = m.predict(q.view()).unwrap();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..4).map(|_| scope.spawn(|| m.predict(q.view()).unwrap())).collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), reference);
        }
    });
}

#[test]
fn fit_is_deterministic() {
    let x = uniform(30, 3, -1.0, 1.0, 91);
    let y = uniform(30, 2, -1.0, 1.0, 92);
    let cfg = GpConfig {
        restarts: 2,
        seed: 7,
        ..Default::default()
    };
    let a = GpModel::fit(x.view(), y.view(), &cfg).unwrap();
    let b = GpModel::fit(x.view(), y.view(), &cfg).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gram_is_symmetric_psd(
        seed in any::<u64>(),
        dims in 1usize..5,
        log_l in prop::collection::vec(-2.0f64..2.0, 4),
        log_s in -2.0f64..2.0,
    ) {
        let x = uniform(30, dims, -2.0, 2.0, seed);
        let k = ArdRbf::new(log_l[..dims].iter().map(|v| v.exp()).collect(), log_s.exp());
        let g = k.gram(x.view());
        for i in 0..30 {
            for j in 0..30 {
                prop_assert_eq!(g[[i, j]], g[[j, i]]);
            }
        }
        prop_assert!(gppf::linalg::cholesky_jittered(g.view(), &JitterLadder::default()).is_ok());
        prop_assert!(min_eigenvalue(&g) >= -1e-8);
    }

    #[test]
    fn kernel_is_symmetric_and_bounded(
        a in prop::collection::vec(-5.0f64..5.0, 3),
        b in prop::collection::vec(-5.0f64..5.0, 3),
        l in prop::collection::vec(0.01f64..10.0, 3),
        s2 in 0.01f64..10.0,
    ) {
        let p = KernelParams::new(l, s2, 0.0).unwrap();
        let ab = gppf::gp::kernel_eval(&a, &b, &p).unwrap();
        prop_assert_eq!(ab, gppf::gp::kernel_eval(&b, &a, &p).unwrap());
        prop_assert!(ab >= 0.0 && ab <= s2);
    }
}
