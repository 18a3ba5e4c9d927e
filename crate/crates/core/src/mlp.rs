//! Fully connected feed-forward regression network trained from scratch.
//!
//! GELU hidden layers, linear output, mean-squared-error loss, AdamW updates
//! on shuffled mini-batches, optional Gaussian input noise during training.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normalize::{Standardizer, TargetScaler};
use crate::scalar::Scalar;

pub const MLP_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty training set")]
    Empty,
    #[error("loss became non-finite at epoch {epoch} (last finite loss {last_loss:e}); lower the learning rate or check normalization")]
    NonFiniteLoss { epoch: usize, last_loss: f64 },
    #[error("unsupported model format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
    #[error("model snapshot: {0}")]
    Snapshot(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MlpInit {
    /// Uniform in `+-1/sqrt(fan_in)` for weights, zero biases.
    FanInUniform,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig<T> {
    /// Hidden widths; `None` gives `[input_dim, output_dim]`.
    pub hidden: Option<Vec<usize>>,
    pub learning_rate: T,
    pub batch_size: usize,
    pub epochs: usize,
    /// Decoupled weight decay coefficient.
    pub weight_decay: T,
    /// Std of Gaussian noise added to standardized inputs in each training batch.
    pub input_noise: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub init: MlpInit,
    pub seed: u64,
}

impl<T: Scalar> Default for MlpConfig<T> {
    fn default() -> Self {
        MlpConfig {
            hidden: None,
            learning_rate: T::lit(1e-4),
            batch_size: 32,
            epochs: 400,
            weight_decay: T::lit(1e-4),
            input_noise: T::lit(0.05),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
            init: MlpInit::FanInUniform,
            seed: 0,
        }
    }
}

impl<T: Scalar> MlpConfig<T> {
    pub fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        match &self.hidden {
            Some(h) => w.extend(h),
            None => w.extend([input, output]),
        }
        w.push(output);
        w
    }

    fn validate(&self) -> Result<(), MlpError> {
        let bad = |m: &str| Err(MlpError::Config(m.into()));
        if !(self.learning_rate > T::zero()) {
            return bad("learning rate must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be at least 1");
        }
        if self.hidden.as_ref().is_some_and(|h| h.contains(&0)) {
            return bad("layer widths must be positive");
        }
        if self.weight_decay < T::zero() || self.input_noise < T::zero() {
            return bad("weight decay and input noise must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    /// `fan_in x fan_out`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_K) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_K) * x * x * x);
    let t = u.tanh();
    let du = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_K) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * du
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel<T> {
    format_version: u32,
    config: MlpConfig<T>,
    layers: Vec<Dense<T>>,
    input: Standardizer<T>,
    target: TargetScaler<T>,
    /// Mean mini-batch loss per epoch (standardized target space).
    history: Vec<T>,
    initial_loss: T,
    final_loss: T,
}

struct Gradients<T> {
    weight: Vec<Array2<T>>,
    bias: Vec<Array1<T>>,
}

impl<T: Scalar> MlpModel<T> {
    /// Normalization fitted to the data and freshly initialized weights; no training.
    pub fn untrained(x: ArrayView2<T>, y: ArrayView2<T>, config: &MlpConfig<T>) -> Result<Self, MlpError> {
        config.validate()?;
        if x.nrows() == 0 {
            return Err(MlpError::Empty);
        }
        if x.nrows() != y.nrows() {
            return Err(MlpError::Dimension {
                expected: x.nrows(),
                got: y.nrows(),
            });
        }
        let widths = config.widths(x.ncols(), y.ncols());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weight = match config.init {
                    MlpInit::Zeros => Array2::zeros((fan_in, fan_out)),
                    MlpInit::FanInUniform => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        Array2::from_shape_simple_fn((fan_in, fan_out), || T::lit(rng.random_range(-bound..=bound)))
                    }
                };
                Dense {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(MlpModel {
            format_version: MLP_FORMAT_VERSION,
            config: config.clone(),
            layers,
            input: Standardizer::fit(x),
            target: TargetScaler::fit(y, true),
            history: Vec::new(),
            initial_loss: T::nan(),
            final_loss: T::nan(),
        })
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].weight.nrows()];
        w.extend(self.layers.iter().map(|l| l.weight.ncols()));
        w
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn config(&self) -> &MlpConfig<T> {
        &self.config
    }

    pub fn history(&self) -> &[T] {
        &self.history
    }

    /// Full-batch loss on the training set before the first update.
    pub fn initial_loss(&self) -> T {
        self.initial_loss
    }

    /// Full-batch loss on the training set after the last update.
    pub fn final_loss(&self) -> T {
        self.final_loss
    }

    pub fn input_dim(&self) -> usize {
        self.input.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.target.dim()
    }

    /// Inputs in the network's standardized space.
    pub fn normalize_inputs(&self, x: ArrayView2<T>) -> Array2<T> {
        self.input.transform_full(x)
    }

    pub fn normalize_targets(&self, y: ArrayView2<T>) -> Array2<T> {
        self.target.transform(y)
    }

    fn forward_normalized(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(gelu);
            }
            h = z;
        }
        h
    }

    /// Mean squared error and its gradient for standardized inputs and targets,
    /// returned as one flat vector in [`MlpModel::parameters`] order.
    pub fn loss_and_gradient(&self, x: ArrayView2<T>, y: ArrayView2<T>) -> (T, Vec<T>) {
        let (loss, g) = self.backprop(x, y);
        let mut flat = Vec::with_capacity(self.parameter_count());
        for (w, b) in g.weight.iter().zip(&g.bias) {
            flat.extend(w.iter().copied());
            flat.extend(b.iter().copied());
        }
        (loss, flat)
    }

    pub fn loss(&self, x: ArrayView2<T>, y: ArrayView2<T>) -> T {
        mse(&self.forward_normalized(x), y)
    }

    fn backprop(&self, x: ArrayView2<T>, y: ArrayView2<T>) -> (T, Gradients<T>) {
        let last = self.layers.len() - 1;
        // activations[i] feeds layer i; pre[i] is layer i's pre-activation
        let mut activations = vec![x.to_owned()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = activations[i].dot(&layer.weight);
            z += &layer.bias;
            let h = if i < last { z.mapv(gelu) } else { z.clone() };
            pre.push(z);
            activations.push(h);
        }
        let out = &activations[last + 1];
        let loss = mse(out, y);
        let scale = T::lit(2.0) / T::from_usize_lossy(y.len().max(1));
        let mut delta = (out - &y).mapv(|v| v * scale);

        let mut weight = Vec::with_capacity(self.layers.len());
        let mut bias = Vec::with_capacity(self.layers.len());
        for i in (0..=last).rev() {
            if i < last {
                delta.zip_mut_with(&pre[i], |d, &z| *d *= gelu_grad(z));
            }
            weight.push(activations[i].t().dot(&delta));
            bias.push(delta.sum_axis(Axis(0)));
            if i > 0 {
                delta = delta.dot(&self.layers[i].weight.t());
            }
        }
        weight.reverse();
        bias.reverse();
        (loss, Gradients { weight, bias })
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All weights and biases, layer by layer, weights row-major before biases.
    pub fn parameters(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_parameters(&mut self, values: &[T]) -> Result<(), MlpError> {
        if values.len() != self.parameter_count() {
            return Err(MlpError::Dimension {
                expected: self.parameter_count(),
                got: values.len(),
            });
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().expect("length checked"));
            l.bias.iter_mut().for_each(|b| *b = it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn predict(&self, queries: ArrayView2<T>) -> Result<Array2<T>, MlpError> {
        if queries.ncols() != self.input_dim() {
            return Err(MlpError::Dimension {
                expected: self.input_dim(),
                got: queries.ncols(),
            });
        }
        let xn = self.input.transform_full(queries);
        Ok(self.target.inverse(self.forward_normalized(xn.view()).view()))
    }

    pub fn to_json(&self) -> Result<String, MlpError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, MlpError> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let found = v.get("format_version").and_then(|f| f.as_u64()).unwrap_or(0) as u32;
        if found != MLP_FORMAT_VERSION {
            return Err(MlpError::FormatVersion {
                found,
                expected: MLP_FORMAT_VERSION,
            });
        }
        Ok(serde_json::from_value(v)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MlpError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MlpError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn mse<T: Scalar>(pred: &Array2<T>, y: ArrayView2<T>) -> T {
    let n = T::from_usize_lossy(y.len().max(1));
    pred.iter().zip(y.iter()).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<T>() / n
}

struct AdamState<T> {
    m_w: Vec<Array2<T>>,
    v_w: Vec<Array2<T>>,
    m_b: Vec<Array1<T>>,
    v_b: Vec<Array1<T>>,
    step: i32,
}

impl<T: Scalar> AdamState<T> {
    fn new(layers: &[Dense<T>]) -> Self {
        AdamState {
            m_w: layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            v_w: layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            m_b: layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
            v_b: layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
            step: 0,
        }
    }

    fn apply(&mut self, layers: &mut [Dense<T>], g: &Gradients<T>, cfg: &MlpConfig<T>) {
        self.step += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = T::one() - b1.powi(self.step);
        let c2 = T::one() - b2.powi(self.step);
        let lr = cfg.learning_rate;
        let decay = T::one() - lr * cfg.weight_decay;
        let update = |p: &mut T, m: &mut T, v: &mut T, grad: T| {
            *m = b1 * *m + (T::one() - b1) * grad;
            *v = b2 * *v + (T::one() - b2) * grad * grad;
            let mh = *m / c1;
            let vh = *v / c2;
            *p = *p * decay - lr * mh / (vh.sqrt() + cfg.epsilon);
        };
        for (i, layer) in layers.iter_mut().enumerate() {
            ndarray::Zip::from(&mut layer.weight)
                .and(&mut self.m_w[i])
                .and(&mut self.v_w[i])
                .and(&g.weight[i])
                .for_each(|p, m, v, &gr| update(p, m, v, gr));
            ndarray::Zip::from(&mut layer.bias)
                .and(&mut self.m_b[i])
                .and(&mut self.v_b[i])
                .and(&g.bias[i])
                .for_each(|p, m, v, &gr| update(p, m, v, gr));
        }
    }
}

/// Trains a network on raw inputs `x` (`n x 2D`) and targets `y` (`n x D`).
pub fn train_mlp<T: Scalar>(x: ArrayView2<T>, y: ArrayView2<T>, config: &MlpConfig<T>) -> Result<MlpModel<T>, MlpError> {
    let mut model = MlpModel::untrained(x, y, config)?;
    let xn = model.input.transform_full(x);
    let yn = model.target.transform(y);
    let n = xn.nrows();
    model.initial_loss = model.loss(xn.view(), yn.view());

    // separate stream from the initializer so noise/shuffle do not depend on widths
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = AdamState::new(&model.layers);
    let mut last = model.initial_loss.as_f64();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = T::zero();
        for batch in order.chunks(config.batch_size) {
            let mut bx = xn.select(Axis(0), batch);
            if config.input_noise > T::zero() {
                bx.mapv_inplace(|v| v + config.input_noise * T::lit(rng.sample::<f64, _>(StandardNormal)));
            }
            let by = yn.select(Axis(0), batch);
            let (loss, grads) = model.backprop(bx.view(), by.view());
            if !loss.is_finite() {
                return Err(MlpError::NonFiniteLoss { epoch, last_loss: last });
            }
            total += loss * T::from_usize_lossy(batch.len());
            adam.apply(&mut model.layers, &grads, config);
        }
        let epoch_loss = total / T::from_usize_lossy(n);
        last = epoch_loss.as_f64();
        model.history.push(epoch_loss);
    }
    model.final_loss = model.loss(xn.view(), yn.view());
    if !model.final_loss.is_finite() {
        return Err(MlpError::NonFiniteLoss {
            epoch: config.epochs,
            last_loss: last,
        });
    }
    if model.final_loss > model.initial_loss {
        log::warn!(
            "mlp training ended above its initial loss ({:e} > {:e})",
            model.final_loss.as_f64(),
            model.initial_loss.as_f64()
        );
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gelu_matches_reference_values() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(1.0f64) - 0.841_191_990_607_477).abs() < 1e-12);
        assert!((gelu(-1.0f64) + 0.158_808_009_392_523).abs() < 1e-12);
        for x in [-2.5f64, -0.3, 0.0, 0.7, 3.1] {
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((gelu_grad(x) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn default_widths_follow_input_and_output() {
        let c = MlpConfig::<f64>::default();
        assert_eq!(c.widths(556, 278), vec![556, 556, 278, 278]);
        let c = MlpConfig::<f64> {
            hidden: Some(vec![4, 2]),
            ..Default::default()
        };
        assert_eq!(c.widths(4, 2), vec![4, 4, 2, 2]);
    }

    #[test]
    fn config_validation() {
        let x = array![[1.0], [2.0]];
        let bad = MlpConfig::<f64> {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(matches!(train_mlp(x.view(), x.view(), &bad), Err(MlpError::Config(_))));
        let bad = MlpConfig::<f64> {
            hidden: Some(vec![3, 0]),
            ..Default::default()
        };
        assert!(matches!(train_mlp(x.view(), x.view(), &bad), Err(MlpError::Config(_))));
        let empty = Array2::<f64>::zeros((0, 1));
        assert!(matches!(
            train_mlp(empty.view(), empty.view(), &MlpConfig::default()),
            Err(MlpError::Empty)
        ));
    }

    #[test]
    fn exploding_learning_rate_is_reported() {
        let x = Array2::from_shape_fn((16, 3), |(i, j)| (i * 3 + j) as f64);
        let y = Array2::from_shape_fn((16, 2), |(i, j)| ((i + j) as f64).sin() * 1e3);
        let cfg = MlpConfig {
            learning_rate: 1e300,
            epochs: 50,
            ..Default::default()
        };
        assert!(matches!(
            train_mlp(x.view(), y.view(), &cfg),
            Err(MlpError::NonFiniteLoss { .. })
        ));
    }
}
