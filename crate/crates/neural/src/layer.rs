use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, NeuralError, Result};
use crate::ops::{self, LstmCache, LstmGrads, LstmWeights, NormCache};
use crate::real::Real;
use crate::tensor::Tensor;

/// Epsilon inside the instance-norm square root.
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Declarative description of one layer. Shapes of the parameters follow
/// from the spec and the layer's input shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    Conv1D { kernel_size: usize, n_filters: usize },
    Conv2D { kernel_size: usize, n_filters: usize },
    InstanceNorm,
    ReLU,
    Dropout { rate: f64 },
    /// Non-overlapping pooling along the listed spatial axes.
    MaxPool { kernel_size: usize, axes: Vec<usize> },
    Dense { units: usize },
    Sigmoid,
    /// Runs over axis 0 of its input (remaining axes are flattened into the
    /// feature vector) and emits the final hidden state.
    LSTM { units: usize },
    Flatten,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1D { .. } => "Conv1D",
            LayerSpec::Conv2D { .. } => "Conv2D",
            LayerSpec::InstanceNorm => "InstanceNorm",
            LayerSpec::ReLU => "ReLU",
            LayerSpec::Dropout { .. } => "Dropout",
            LayerSpec::MaxPool { .. } => "MaxPool",
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::Sigmoid => "Sigmoid",
            LayerSpec::LSTM { .. } => "LSTM",
            LayerSpec::Flatten => "Flatten",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NeuralError::InvalidSpec(msg));
        match *self {
            LayerSpec::Conv1D { kernel_size, n_filters } | LayerSpec::Conv2D { kernel_size, n_filters } => {
                if kernel_size == 0 || n_filters == 0 {
                    return bad(format!("{}: kernel_size and n_filters must be ≥ 1", self.name()));
                }
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return bad(format!("Dropout: rate {rate} outside [0, 1)"));
                }
            }
            LayerSpec::MaxPool { kernel_size, .. } => {
                if kernel_size == 0 {
                    return bad("MaxPool: kernel_size must be ≥ 1".into());
                }
            }
            LayerSpec::Dense { units } | LayerSpec::LSTM { units } => {
                if units == 0 {
                    return bad(format!("{}: units must be ≥ 1", self.name()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// What a layer remembers from the forward pass for its backward pass.
#[derive(Clone, Debug)]
pub enum Cache<T> {
    None,
    Mask(Option<Vec<T>>),
    Norm(NormCache<T>),
    Argmax(Vec<usize>),
    Lstm(LstmCache<T>),
}

/// A layer instance: spec, resolved shapes and parameters.
#[derive(Clone, Debug)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub params: Vec<Tensor<T>>,
}

fn he_uniform<T: Real, R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-limit..limit))).collect();
    Tensor::new(shape, data).expect("init shape")
}

impl<T: Real> Layer<T> {
    /// Resolves shapes for `in_shape` and draws initial parameters.
    pub fn build<R: Rng + ?Sized>(spec: LayerSpec, in_shape: &[usize], rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let n_in: usize = in_shape.iter().product();
        let name = spec.name();
        let (out_shape, params) = match spec {
            LayerSpec::Conv1D { kernel_size: k, n_filters: f } => {
                let [len, cin] = *in_shape else {
                    return shape_err("Conv1D", format!("needs [len, ch] input, got {in_shape:?}"));
                };
                if len < k {
                    return shape_err("Conv1D", format!("length {len} < kernel {k}"));
                }
                (
                    vec![len - k + 1, f],
                    vec![he_uniform(vec![k, cin, f], k * cin, rng), Tensor::zeros(vec![f])],
                )
            }
            LayerSpec::Conv2D { kernel_size: k, n_filters: f } => {
                let [h, w, cin] = *in_shape else {
                    return shape_err("Conv2D", format!("needs [h, w, ch] input, got {in_shape:?}"));
                };
                if h < k || w < k {
                    return shape_err("Conv2D", format!("{h}×{w} smaller than kernel {k}"));
                }
                (
                    vec![h - k + 1, w - k + 1, f],
                    vec![he_uniform(vec![k, k, cin, f], k * k * cin, rng), Tensor::zeros(vec![f])],
                )
            }
            LayerSpec::InstanceNorm => {
                let ch = *in_shape.last().unwrap();
                let gamma = Tensor::new(vec![ch], vec![T::one(); ch])?;
                (in_shape.to_vec(), vec![gamma, Tensor::zeros(vec![ch])])
            }
            LayerSpec::ReLU | LayerSpec::Sigmoid | LayerSpec::Dropout { .. } => (in_shape.to_vec(), vec![]),
            LayerSpec::MaxPool { kernel_size, ref axes } => {
                if !(2..=3).contains(&in_shape.len()) || axes.iter().any(|&a| a + 1 >= in_shape.len()) {
                    return shape_err("MaxPool", format!("axes {axes:?} invalid for {in_shape:?}"));
                }
                (ops::maxpool_shape(in_shape, kernel_size, axes), vec![])
            }
            LayerSpec::Dense { units } => (
                vec![units],
                vec![he_uniform(vec![n_in, units], n_in, rng), Tensor::zeros(vec![units])],
            ),
            LayerSpec::LSTM { units } => {
                if in_shape.len() < 2 {
                    return shape_err("LSTM", format!("needs [steps, features..] input, got {in_shape:?}"));
                }
                let d = n_in / in_shape[0];
                (
                    vec![units],
                    vec![
                        he_uniform(vec![d, 4 * units], d, rng),
                        he_uniform(vec![units, 4 * units], units, rng),
                        Tensor::zeros(vec![4 * units]),
                    ],
                )
            }
            LayerSpec::Flatten => (vec![n_in], vec![]),
        };
        log::trace!("{name}: {in_shape:?} -> {out_shape:?}");
        Ok(Self {
            spec,
            in_shape: in_shape.to_vec(),
            out_shape,
            params,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn lstm_weights(&self) -> LstmWeights<'_, T> {
        let LayerSpec::LSTM { units } = self.spec else { unreachable!() };
        LstmWeights {
            wx: self.params[0].data(),
            wh: self.params[1].data(),
            bias: self.params[2].data(),
            units,
        }
    }

    fn lstm_input(&self, input: &Tensor<T>) -> Tensor<T> {
        let steps = self.in_shape[0];
        input.clone().reshape(vec![steps, input.len() / steps]).expect("lstm reshape")
    }

    pub fn forward<R: Rng + ?Sized>(&self, input: &Tensor<T>, training: bool, rng: &mut R) -> Result<(Tensor<T>, Cache<T>)> {
        if input.shape() != self.in_shape.as_slice() {
            return shape_err(
                self.spec.name(),
                format!("expected input {:?}, got {:?}", self.in_shape, input.shape()),
            );
        }
        let p = &self.params;
        Ok(match self.spec {
            LayerSpec::Conv1D { .. } => (ops::conv1d(input, &p[0], p[1].data())?, Cache::None),
            LayerSpec::Conv2D { .. } => (ops::conv2d(input, &p[0], p[1].data())?, Cache::None),
            LayerSpec::InstanceNorm => {
                let (y, cache) =
                    ops::instance_norm_cached(input, p[0].data(), p[1].data(), T::lit(INSTANCE_NORM_EPS))?;
                (y, Cache::Norm(cache))
            }
            LayerSpec::ReLU => (ops::relu(input), Cache::None),
            LayerSpec::Sigmoid => (ops::sigmoid(input), Cache::None),
            LayerSpec::Dropout { rate } => {
                let (y, mask) = ops::dropout(input, rate, training, rng);
                (y, Cache::Mask(mask))
            }
            LayerSpec::MaxPool { kernel_size, ref axes } => {
                let (y, argmax) = ops::maxpool(input, kernel_size, axes)?;
                (y, Cache::Argmax(argmax))
            }
            LayerSpec::Dense { .. } => (ops::dense(input, &p[0], p[1].data())?, Cache::None),
            LayerSpec::LSTM { .. } => {
                let (h, cache) = ops::lstm_sequence(&self.lstm_input(input), self.lstm_weights())?;
                (h, Cache::Lstm(cache))
            }
            LayerSpec::Flatten => (ops::flatten(input), Cache::None),
        })
    }

    /// Accumulates parameter gradients into `grads` (same layout as
    /// `params`) and returns the gradient with respect to `input`.
    pub fn backward(
        &self,
        input: &Tensor<T>,
        output: &Tensor<T>,
        cache: &Cache<T>,
        grad_out: &Tensor<T>,
        grads: &mut [Tensor<T>],
    ) -> Tensor<T> {
        let p = &self.params;
        match (&self.spec, cache) {
            (LayerSpec::Conv1D { .. }, _) => {
                let (gk, gb) = grads.split_at_mut(1);
                ops::conv1d_backward(input, &p[0], grad_out, gk[0].data_mut(), gb[0].data_mut())
            }
            (LayerSpec::Conv2D { .. }, _) => {
                let (gk, gb) = grads.split_at_mut(1);
                ops::conv2d_backward(input, &p[0], grad_out, gk[0].data_mut(), gb[0].data_mut())
            }
            (LayerSpec::InstanceNorm, Cache::Norm(nc)) => {
                let (gg, gb) = grads.split_at_mut(1);
                ops::instance_norm_backward(nc, p[0].data(), grad_out, gg[0].data_mut(), gb[0].data_mut())
            }
            (LayerSpec::ReLU, _) => ops::relu_backward(input, grad_out),
            (LayerSpec::Sigmoid, _) => ops::sigmoid_backward(output, grad_out),
            (LayerSpec::Dropout { .. }, Cache::Mask(mask)) => ops::dropout_backward(mask.as_deref(), grad_out),
            (LayerSpec::MaxPool { .. }, Cache::Argmax(argmax)) => {
                ops::maxpool_backward(&self.in_shape, argmax, grad_out)
            }
            (LayerSpec::Dense { .. }, _) => {
                let (gw, gb) = grads.split_at_mut(1);
                ops::dense_backward(input, &p[0], grad_out, gw[0].data_mut(), gb[0].data_mut())
            }
            (LayerSpec::LSTM { .. }, Cache::Lstm(lc)) => {
                let [gx, gh, gb] = grads else { unreachable!("LSTM has three parameter tensors") };
                let dx = ops::lstm_sequence_backward(
                    &self.lstm_input(input),
                    self.lstm_weights(),
                    lc,
                    grad_out,
                    LstmGrads {
                        wx: gx.data_mut(),
                        wh: gh.data_mut(),
                        bias: gb.data_mut(),
                    },
                );
                dx.reshape(self.in_shape.clone()).expect("lstm grad reshape")
            }
            (LayerSpec::Flatten, _) => grad_out.clone().reshape(self.in_shape.clone()).expect("flatten grad"),
            (spec, _) => unreachable!("cache does not match layer {}", spec.name()),
        }
    }
}
