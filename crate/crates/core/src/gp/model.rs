use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{Kernel, KernelParams};
use super::optimize::{minimize_bounded, LbfgsOptions};
use super::GpError;
use crate::linalg::{cholesky_inverse, cholesky_jittered, cholesky_solve_rows, half_log_det, solve_lower_rows, JitterLadder};
use crate::normalize::{Standardizer, TargetScaler};
use crate::scalar::Scalar;

pub const GP_FORMAT_VERSION: u32 = 1;

/// Box constraints on the log-hyperparameters, as `(low, high)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds<T> {
    pub log_lengthscale: (T, T),
    pub log_signal_variance: (T, T),
    pub log_noise_variance: (T, T),
}

impl<T: Scalar> Default for ParamBounds<T> {
    fn default() -> Self {
        ParamBounds {
            log_lengthscale: (T::lit(-5.0), T::lit(10.0)),
            log_signal_variance: (T::lit(-12.0), T::lit(5.0)),
            log_noise_variance: (T::lit(-12.0), T::lit(5.0)),
        }
    }
}

impl<T: Scalar> ParamBounds<T> {
    fn vectors(&self, dims: usize) -> (Vec<T>, Vec<T>) {
        let mut lo = vec![self.log_lengthscale.0; dims];
        let mut hi = vec![self.log_lengthscale.1; dims];
        lo.push(self.log_signal_variance.0);
        hi.push(self.log_signal_variance.1);
        lo.push(self.log_noise_variance.0);
        hi.push(self.log_noise_variance.1);
        (lo, hi)
    }
}

/// Starting point of the optimizer, in the standardized space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialParams<T> {
    pub lengthscale: T,
    pub signal_variance: T,
    pub noise_variance: T,
}

impl<T: Scalar> Default for InitialParams<T> {
    fn default() -> Self {
        InitialParams {
            lengthscale: T::one(),
            signal_variance: T::one(),
            noise_variance: T::lit(1e-2),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpConfig<T> {
    /// Random restarts in addition to the start at `init`.
    pub restarts: usize,
    pub seed: u64,
    pub bounds: ParamBounds<T>,
    pub init: InitialParams<T>,
    pub jitter: JitterLadder<T>,
    pub max_iterations: usize,
    /// Standardize inputs and drop constant columns. When off, raw inputs feed the kernel.
    pub standardize_inputs: bool,
    /// Divide centered targets by their pooled standard deviation.
    pub scale_targets: bool,
}

impl<T: Scalar> Default for GpConfig<T> {
    fn default() -> Self {
        GpConfig {
            restarts: 0,
            seed: 0,
            bounds: ParamBounds::default(),
            init: InitialParams::default(),
            jitter: JitterLadder::default(),
            max_iterations: 200,
            standardize_inputs: true,
            scale_targets: true,
        }
    }
}

impl<T: Scalar> GpConfig<T> {
    /// Raw inputs, centered but unscaled targets.
    pub fn unnormalized() -> Self {
        GpConfig {
            standardize_inputs: false,
            scale_targets: false,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub initial_log_likelihood: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub optimizer_message: String,
    pub restarts_failed: usize,
    pub duplicate_rows: usize,
    pub pruned_dims: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpPrediction<T> {
    /// `m x D` predictive means in target units.
    pub mean: Array2<T>,
    /// Predictive variance per query, shared by every output.
    pub variance: Array1<T>,
}

/// Fitted exact GP. Immutable after construction and safe to share across threads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpModel<T> {
    format_version: u32,
    input: Standardizer<T>,
    input_factor: T,
    target: TargetScaler<T>,
    train_inputs: Array2<T>,
    train_targets: Array2<T>,
    params: KernelParams<T>,
    jitter: T,
    chol_factor: Array2<T>,
    alpha: Array2<T>,
    log_marginal_likelihood: T,
    diagnostics: FitDiagnostics,
}

struct Factorization<T> {
    gram: Array2<T>,
    chol: Array2<T>,
    jitter: T,
    /// `D x n`: row `o` holds alpha for output `o`.
    alpha_rows: Array2<T>,
    value: T,
}

fn factorize<T: Scalar, K: Kernel<T>>(
    kernel: &K,
    noise: T,
    x: ArrayView2<T>,
    y: ArrayView2<T>,
    ladder: &JitterLadder<T>,
) -> Result<Factorization<T>, GpError> {
    let n = x.nrows();
    let gram = kernel.gram(x);
    let mut ky = gram.clone();
    ky.diag_mut().mapv_inplace(|v| v + noise);
    let (chol, jitter) = cholesky_jittered(ky.view(), ladder)?;
    let mut alpha_rows = y.t().as_standard_layout().into_owned();
    cholesky_solve_rows(&chol, &mut alpha_rows)?;
    let d = T::from_usize_lossy(y.ncols());
    let fit_term: T = alpha_rows
        .rows()
        .into_iter()
        .zip(y.columns())
        .map(|(a, yc)| a.dot(&yc))
        .sum();
    let two_pi = T::lit(2.0 * std::f64::consts::PI);
    let value = -fit_term / T::lit(2.0)
        - d * half_log_det(&chol)
        - d * T::from_usize_lossy(n) / T::lit(2.0) * two_pi.ln();
    Ok(Factorization {
        gram,
        chol,
        jitter,
        alpha_rows,
        value,
    })
}

fn lml_with_gradient<T: Scalar, K: Kernel<T>>(
    kernel: &K,
    noise: T,
    x: ArrayView2<T>,
    y: ArrayView2<T>,
    ladder: &JitterLadder<T>,
) -> Result<(T, Vec<T>), GpError> {
    let f = factorize(kernel, noise, x, y, ladder)?;
    // W = sum_o alpha_o alpha_o' - D (K + s2n I)^-1; dLML/dt = tr(W dK/dt) / 2
    let mut w = f.alpha_rows.t().dot(&f.alpha_rows);
    let inv = cholesky_inverse(&f.chol);
    w.scaled_add(-T::from_usize_lossy(y.ncols()), &inv);
    let half = T::lit(0.5);
    let mut grad: Vec<T> = kernel
        .gradient_contraction(x, f.gram.view(), w.view())
        .into_iter()
        .map(|g| g * half)
        .collect();
    grad.push(half * noise * w.diag().sum());
    Ok((f.value, grad))
}

/// Summed log marginal likelihood over the columns of `y` and its gradient with
/// respect to `[log l_1 .. log l_d, log s2, log noise]`.
///
/// Works directly on the given matrices; no standardization is applied.
pub fn log_marginal_likelihood<T: Scalar>(
    x: ArrayView2<T>,
    y: ArrayView2<T>,
    params: &KernelParams<T>,
    ladder: &JitterLadder<T>,
) -> Result<(T, Vec<T>), GpError> {
    if x.nrows() != y.nrows() {
        return Err(GpError::Dimension {
            expected: x.nrows(),
            got: y.nrows(),
        });
    }
    if x.ncols() != params.lengthscales.len() {
        return Err(GpError::Dimension {
            expected: params.lengthscales.len(),
            got: x.ncols(),
        });
    }
    params.validate()?;
    lml_with_gradient(&params.kernel(), params.noise_variance, x, y, ladder)
}

fn check_finite<T: Scalar>(m: ArrayView2<T>, what: &'static str) -> Result<(), GpError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GpError::NonFinite(what))
    }
}

fn count_duplicates<T: Scalar>(x: &Array2<T>) -> usize {
    let mut seen = HashSet::with_capacity(x.nrows());
    x.rows()
        .into_iter()
        .filter(|r| !seen.insert(r.iter().map(|v| v.as_f64().to_bits()).collect::<Vec<u64>>()))
        .count()
}

struct Prepared<T> {
    input: Standardizer<T>,
    input_factor: T,
    target: TargetScaler<T>,
    xs: Array2<T>,
    ys: Array2<T>,
}

fn prepare<T: Scalar>(x: ArrayView2<T>, y: ArrayView2<T>, config: &GpConfig<T>) -> Result<Prepared<T>, GpError> {
    if x.nrows() != y.nrows() {
        return Err(GpError::Dimension {
            expected: x.nrows(),
            got: y.nrows(),
        });
    }
    check_finite(x, "training inputs")?;
    check_finite(y, "training targets")?;
    let (input, input_factor) = if config.standardize_inputs {
        let s = Standardizer::fit(x);
        let a = s.active.len().max(1);
        (s, T::one() / T::from_usize_lossy(a).sqrt())
    } else {
        (Standardizer::identity(x.ncols()), T::one())
    };
    let xs = input.transform_active(x, input_factor);
    let target = TargetScaler::fit(y, config.scale_targets);
    let ys = target.transform(y);
    Ok(Prepared {
        input,
        input_factor,
        target,
        xs,
        ys,
    })
}

impl<T: Scalar> GpModel<T> {
    /// Maximizes the summed marginal likelihood over the hyperparameters and
    /// conditions on the training data.
    pub fn fit(x: ArrayView2<T>, y: ArrayView2<T>, config: &GpConfig<T>) -> Result<Self, GpError> {
        if x.nrows() < 2 {
            return Err(GpError::InsufficientData {
                needed: 2,
                got: x.nrows(),
            });
        }
        let prep = prepare(x, y, config)?;
        let dims = prep.xs.ncols();
        let (lo, hi) = config.bounds.vectors(dims);
        let mut theta0 = vec![config.init.lengthscale.ln(); dims];
        theta0.push(config.init.signal_variance.ln());
        theta0.push(config.init.noise_variance.ln());
        if theta0.iter().any(|v| !v.is_finite()) {
            return Err(GpError::InvalidParameter("initial hyperparameters must be positive".into()));
        }
        let norm = T::from_usize_lossy(prep.xs.nrows() * prep.ys.ncols().max(1));

        let mut kernel = super::ArdRbf::new(vec![T::one(); dims], T::one());
        let (xs, ys) = (prep.xs.view(), prep.ys.view());
        let mut objective = |theta: &[T]| -> (T, Vec<T>) {
            kernel.set_log_params(&theta[..=dims]);
            let noise = theta[dims + 1].exp();
            match lml_with_gradient(&kernel, noise, xs, ys, &config.jitter) {
                Ok((v, g)) => (-v / norm, g.into_iter().map(|gi| -gi / norm).collect()),
                Err(_) => (T::infinity(), vec![T::zero(); theta.len()]),
            }
        };

        let mut starts = vec![theta0.clone()];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for _ in 0..config.restarts {
            let t: Vec<T> = theta0
                .iter()
                .zip(lo.iter().zip(&hi))
                .map(|(&c, (&l, &h))| {
                    let off: f64 = rng.random_range(-2.0..2.0);
                    (c + T::lit(off)).max(l).min(h)
                })
                .collect();
            starts.push(t);
        }

        let opts = LbfgsOptions {
            max_iterations: config.max_iterations,
            ..Default::default()
        };
        let mut diagnostics = FitDiagnostics {
            pruned_dims: x.ncols() - dims,
            duplicate_rows: count_duplicates(&prep.xs),
            ..Default::default()
        };
        let (f_init, _) = objective(&theta0);
        diagnostics.initial_log_likelihood = (-f_init * norm).as_f64();
        let mut best: Option<(Vec<T>, T)> = None;
        for start in &starts {
            let r = minimize_bounded(&mut objective, start, &lo, &hi, &opts);
            if !r.converged || !r.f.is_finite() {
                diagnostics.restarts_failed += 1;
            }
            if r.f.is_finite() && best.as_ref().map_or(true, |(_, f)| r.f < *f) {
                diagnostics.iterations = r.iterations;
                diagnostics.evaluations = r.evaluations;
                diagnostics.converged = r.converged;
                diagnostics.optimizer_message = r.message.to_string();
                best = Some((r.x, r.f));
            }
        }
        let theta = match best {
            Some((t, _)) => t,
            None => {
                diagnostics
                    .warnings
                    .push("optimizer found no finite objective; keeping initial hyperparameters".into());
                theta0
            }
        };
        if diagnostics.restarts_failed == starts.len() {
            diagnostics
                .warnings
                .push(format!("optimizer did not converge: {}", diagnostics.optimizer_message));
        }
        if diagnostics.duplicate_rows > 0 {
            diagnostics
                .warnings
                .push(format!("{} duplicate training rows", diagnostics.duplicate_rows));
        }
        for w in &diagnostics.warnings {
            log::warn!("gp fit: {w}");
        }
        Self::assemble(prep, KernelParams::from_log(&theta), &config.jitter, diagnostics)
    }

    /// Conditions on the training data with fixed hyperparameters (no optimization).
    ///
    /// `params` live in the model's working space: one lengthscale per active
    /// input column after standardization.
    pub fn condition(
        x: ArrayView2<T>,
        y: ArrayView2<T>,
        params: KernelParams<T>,
        config: &GpConfig<T>,
    ) -> Result<Self, GpError> {
        if x.nrows() == 0 {
            return Err(GpError::InsufficientData { needed: 1, got: 0 });
        }
        params.validate()?;
        let prep = prepare(x, y, config)?;
        if params.lengthscales.len() != prep.xs.ncols() {
            return Err(GpError::Dimension {
                expected: prep.xs.ncols(),
                got: params.lengthscales.len(),
            });
        }
        let diagnostics = FitDiagnostics {
            pruned_dims: x.ncols() - prep.xs.ncols(),
            duplicate_rows: count_duplicates(&prep.xs),
            converged: true,
            optimizer_message: "hyperparameters fixed".into(),
            ..Default::default()
        };
        Self::assemble(prep, params, &config.jitter, diagnostics)
    }

    fn assemble(
        prep: Prepared<T>,
        params: KernelParams<T>,
        ladder: &JitterLadder<T>,
        diagnostics: FitDiagnostics,
    ) -> Result<Self, GpError> {
        let f = factorize(
            &params.kernel(),
            params.noise_variance,
            prep.xs.view(),
            prep.ys.view(),
            ladder,
        )?;
        Ok(GpModel {
            format_version: GP_FORMAT_VERSION,
            input: prep.input,
            input_factor: prep.input_factor,
            target: prep.target,
            train_inputs: prep.xs,
            train_targets: prep.ys,
            params,
            jitter: f.jitter,
            chol_factor: f.chol,
            alpha: f.alpha_rows.t().as_standard_layout().into_owned(),
            log_marginal_likelihood: f.value,
            diagnostics,
        })
    }

    pub fn predict(&self, queries: ArrayView2<T>) -> Result<GpPrediction<T>, GpError> {
        if queries.ncols() != self.input_dim() {
            return Err(GpError::Dimension {
                expected: self.input_dim(),
                got: queries.ncols(),
            });
        }
        check_finite(queries, "queries")?;
        let xq = self.input.transform_active(queries, self.input_factor);
        let kernel = self.params.kernel();
        let mut ks = kernel.cross(xq.view(), self.train_inputs.view());
        let mean = self.target.inverse(ks.dot(&self.alpha).view());

        solve_lower_rows(&self.chol_factor, &mut ks)?;
        let prior = self.params.signal_variance + self.params.noise_variance;
        let scale2 = self.target.scale * self.target.scale;
        let mut clamped = 0usize;
        let variance = ks
            .rows()
            .into_iter()
            .map(|v| {
                let var = prior - v.dot(&v);
                if var < T::zero() {
                    clamped += 1;
                    T::zero()
                } else {
                    var * scale2
                }
            })
            .collect::<Array1<T>>();
        if clamped > 0 {
            log::warn!("gp predict: {clamped} negative variances clamped to zero");
        }
        Ok(GpPrediction { mean, variance })
    }

    /// Predictive means only.
    pub fn predict_mean(&self, queries: ArrayView2<T>) -> Result<Array2<T>, GpError> {
        if queries.ncols() != self.input_dim() {
            return Err(GpError::Dimension {
                expected: self.input_dim(),
                got: queries.ncols(),
            });
        }
        let xq = self.input.transform_active(queries, self.input_factor);
        let ks = self.params.kernel().cross(xq.view(), self.train_inputs.view());
        Ok(self.target.inverse(ks.dot(&self.alpha).view()))
    }

    /// Marginal likelihood and gradient at `params` on this model's training data.
    pub fn log_marginal_likelihood_at(&self, params: &KernelParams<T>) -> Result<(T, Vec<T>), GpError> {
        log_marginal_likelihood(
            self.train_inputs.view(),
            self.train_targets.view(),
            params,
            &JitterLadder {
                initial: self.jitter,
                max: self.jitter.max(T::lit(1e-4)),
            },
        )
    }

    pub fn input_dim(&self) -> usize {
        self.input.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.target.dim()
    }

    pub fn n_train(&self) -> usize {
        self.train_inputs.nrows()
    }

    /// Raw input columns that feed the kernel.
    pub fn active_dims(&self) -> &[usize] {
        &self.input.active
    }

    pub fn params(&self) -> &KernelParams<T> {
        &self.params
    }

    pub fn log_marginal_likelihood(&self) -> T {
        self.log_marginal_likelihood
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn chol_factor(&self) -> &Array2<T> {
        &self.chol_factor
    }

    /// `n x D` weights `(K + s2n I)^-1 y`.
    pub fn alpha(&self) -> &Array2<T> {
        &self.alpha
    }

    pub fn train_inputs(&self) -> &Array2<T> {
        &self.train_inputs
    }

    pub fn target_scaler(&self) -> &TargetScaler<T> {
        &self.target
    }

    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.diagnostics
    }

    /// Kernel Gram matrix of the stored training inputs (no noise, no jitter).
    pub fn gram(&self) -> Array2<T> {
        self.params.kernel().gram(self.train_inputs.view())
    }

    pub fn to_json(&self) -> Result<String, GpError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, GpError> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let found = v.get("format_version").and_then(|f| f.as_u64()).unwrap_or(0) as u32;
        if found != GP_FORMAT_VERSION {
            return Err(GpError::FormatVersion {
                found,
                expected: GP_FORMAT_VERSION,
            });
        }
        let model: GpModel<T> = serde_json::from_value(v)?;
        if model.alpha.dim() != (model.n_train(), model.output_dim())
            || model.chol_factor.dim() != (model.n_train(), model.n_train())
            || model.train_inputs.ncols() != model.input.active.len()
        {
            return Err(GpError::InvalidParameter("inconsistent snapshot shapes".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GpError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GpError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
