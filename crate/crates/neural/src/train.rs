use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::network::{Gradients, Network};
use crate::optim::{Adam, AdamConfig};
use crate::real::Real;
use crate::tensor::Tensor;

/// Mini-batch training settings. The loss is always binary cross-entropy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Stop once an epoch's mean training loss falls below this value.
    pub early_stop_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 32,
            max_epochs: 10,
            seed: 0,
            early_stop_loss: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample training loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains `net` with shuffled mini-batches and Adam. Batch gradients are
/// averaged over the batch; a trailing partial batch is kept. Deterministic
/// for a given seed.
pub fn train<T: Real>(
    net: &mut Network<T>,
    inputs: &[Tensor<T>],
    labels: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with_callback(net, inputs, labels, cfg, |_, _| {})
}

pub fn train_with_callback<T: Real>(
    net: &mut Network<T>,
    inputs: &[Tensor<T>],
    labels: &[f64],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(NeuralError::InvalidTraining(format!(
            "{} inputs for {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(NeuralError::InvalidTraining(format!("label {bad} is not 0 or 1")));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(NeuralError::InvalidTraining("batch_size and max_epochs must be ≥ 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam, net);
    let mut grads = Gradients::zeros_for(net);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.reset();
            for &i in batch {
                total += net.accumulate_gradients(&inputs[i], labels[i], &mut rng, &mut grads)?;
            }
            grads.scale(T::lit(1.0 / batch.len() as f64));
            adam.step(net, &grads);
        }
        let mean = total / inputs.len() as f64;
        if !mean.is_finite() {
            return Err(NeuralError::Diverged { epoch });
        }
        log::info!("epoch {}: mean loss {mean:.6}", epoch + 1);
        report.epoch_losses.push(mean);
        on_epoch(epoch, mean);
        if cfg.early_stop_loss.is_some_and(|target| mean < target) {
            break;
        }
    }
    Ok(report)
}
