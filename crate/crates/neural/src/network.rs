use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, NeuralError, Result};
use crate::layer::{Cache, Layer, LayerSpec};
use crate::ops::{bce_with_logits, sigmoid_scalar};
use crate::real::Real;
use crate::tensor::Tensor;

/// A feed-forward stack of layers ending (for training) in a scalar sigmoid.
#[derive(Clone, Debug)]
pub struct Network<T> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

/// Parameter gradients, laid out exactly like the network's parameters.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub layers: Vec<Vec<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_for(net: &Network<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| l.params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect())
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.layers.iter_mut().flatten() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn reset(&mut self) {
        for t in self.layers.iter_mut().flatten() {
            t.data_mut().fill(T::zero());
        }
    }

    /// All gradient values in declaration order.
    pub fn flat(&self) -> Vec<T> {
        self.layers.iter().flatten().flat_map(|t| t.data().iter().copied()).collect()
    }
}

/// Activations and caches of one training-mode forward pass.
struct Recording<T> {
    activations: Vec<Tensor<T>>,
    caches: Vec<Cache<T>>,
}

impl<T: Real> Network<T> {
    /// Builds the stack for `input_shape`, drawing initial weights from `seed`.
    pub fn build(input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let layer = Layer::build(spec.clone(), &shape, &mut rng)?;
            shape = layer.out_shape.clone();
            layers.push(layer);
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers.last().map_or(&self.input_shape, |l| &l.out_shape)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    /// `(layer name, output shape)` for every layer, in order.
    pub fn shape_trace(&self) -> Vec<(&'static str, Vec<usize>)> {
        self.layers.iter().map(|l| (l.spec.name(), l.out_shape.clone())).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Parameter values in declaration order.
    pub fn flat_params(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.params.iter())
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.num_params() {
            return shape_err("set_flat_params", format!("{} values for {} parameters", values.len(), self.num_params()));
        }
        let mut offset = 0;
        for t in self.layers.iter_mut().flat_map(|l| l.params.iter_mut()) {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec.clone(),
                    in_shape: l.in_shape.clone(),
                    out_shape: l.out_shape.clone(),
                    params: l.params.iter().map(Tensor::cast).collect(),
                })
                .collect(),
        }
    }

    /// Inference-mode forward pass (dropout disabled).
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.forward(&x, false, &mut rng)?.0;
        }
        Ok(x)
    }

    /// Scalar output of a sigmoid-terminated network.
    pub fn predict(&self, input: &Tensor<T>) -> Result<f64> {
        let y = self.forward(input)?;
        if y.len() != 1 {
            return shape_err("predict", format!("network emits {:?}, not a scalar", y.shape()));
        }
        Ok(y.data()[0].as_f64())
    }

    fn record<R: Rng + ?Sized>(&self, input: &Tensor<T>, training: bool, rng: &mut R, upto: usize) -> Result<Recording<T>> {
        let mut activations = Vec::with_capacity(upto + 1);
        let mut caches = Vec::with_capacity(upto);
        activations.push(input.clone());
        for layer in &self.layers[..upto] {
            let (y, cache) = layer.forward(activations.last().unwrap(), training, rng)?;
            activations.push(y);
            caches.push(cache);
        }
        Ok(Recording { activations, caches })
    }

    fn check_head(&self) -> Result<usize> {
        match self.layers.last() {
            Some(l) if l.spec == LayerSpec::Sigmoid && l.out_shape.iter().product::<usize>() == 1 => {
                Ok(self.layers.len() - 1)
            }
            _ => Err(NeuralError::InvalidTraining(
                "loss needs a network ending in a scalar Sigmoid".into(),
            )),
        }
    }

    /// Binary cross-entropy of the network output against `target`. With
    /// `training` set, dropout masks are drawn from `rng`.
    pub fn loss<R: Rng + ?Sized>(&self, input: &Tensor<T>, target: f64, training: bool, rng: &mut R) -> Result<f64> {
        let head = self.check_head()?;
        let rec = self.record(input, training, rng, head)?;
        Ok(bce_with_logits(rec.activations[head].data()[0].as_f64(), target))
    }

    /// Reverse-mode pass: adds d(loss)/d(params) into `grads` and returns the
    /// loss. Loss and gradient are taken through the logit, so saturated
    /// sigmoids still produce the exact `p - y` error signal.
    pub fn accumulate_gradients<R: Rng + ?Sized>(
        &self,
        input: &Tensor<T>,
        target: f64,
        rng: &mut R,
        grads: &mut Gradients<T>,
    ) -> Result<f64> {
        let head = self.check_head()?;
        let rec = self.record(input, true, rng, head)?;
        let logit = rec.activations[head].data()[0];
        let loss = bce_with_logits(logit.as_f64(), target);
        let dz = sigmoid_scalar(logit) - T::lit(target);
        let mut grad = Tensor::new(rec.activations[head].shape().to_vec(), vec![dz])?;
        for i in (0..head).rev() {
            grad = self.layers[i].backward(
                &rec.activations[i],
                &rec.activations[i + 1],
                &rec.caches[i],
                &grad,
                &mut grads.layers[i],
            );
        }
        Ok(loss)
    }

    pub fn gradients<R: Rng + ?Sized>(&self, input: &Tensor<T>, target: f64, rng: &mut R) -> Result<(f64, Gradients<T>)> {
        let mut grads = Gradients::zeros_for(self);
        let loss = self.accumulate_gradients(input, target, rng, &mut grads)?;
        Ok((loss, grads))
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_sigmoid_gradient_is_p_minus_y_times_x() {
        let mut net = Network::<f64>::build(&[3], &[LayerSpec::Dense { units: 1 }, LayerSpec::Sigmoid], 1).unwrap();
        net.set_flat_params(&[0.2, -0.4, 0.1, 0.05]).unwrap();
        let x = Tensor::from_vec(vec![1.5, -2.0, 0.5]);
        let z: f64 = 0.2 * 1.5 + 0.4 * 2.0 + 0.05 + 0.05;
        let p = 1.0 / (1.0 + (-z).exp());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for y in [0.0, 1.0] {
            let (_, g) = net.gradients(&x, y, &mut rng).unwrap();
            let flat = g.flat();
            for (i, &xi) in x.data().iter().enumerate() {
                assert!((flat[i] - (p - y) * xi).abs() < 1e-12);
            }
            assert!((flat[3] - (p - y)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_gives_zero_first_layer_weight_gradients() {
        let specs = [
            LayerSpec::Dense { units: 4 },
            LayerSpec::ReLU,
            LayerSpec::Dense { units: 1 },
            LayerSpec::Sigmoid,
        ];
        let net = Network::<f64>::build(&[5], &specs, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, g) = net.gradients(&Tensor::zeros(vec![5]), 1.0, &mut rng).unwrap();
        assert!(g.layers[0][0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_requires_sigmoid_head() {
        let net = Network::<f64>::build(&[2], &[LayerSpec::Dense { units: 1 }], 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(net.loss(&Tensor::zeros(vec![2]), 1.0, false, &mut rng).is_err());
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let net = Network::<f32>::build(&[4, 1], &[LayerSpec::Conv1D { kernel_size: 2, n_filters: 3 }], 0).unwrap();
        assert!(net.forward(&Tensor::zeros(vec![5, 1])).is_err());
        assert_eq!(net.forward(&Tensor::zeros(vec![4, 1])).unwrap().shape(), &[3, 3]);
    }
}
