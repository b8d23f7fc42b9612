use serde::{Deserialize, Serialize};

use crate::network::{Gradients, Network};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `param` in place. `step` counts from 1.
pub fn adam_step<T: Real>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], step: u64, cfg: &AdamConfig) {
    assert!(step >= 1, "Adam step counter starts at 1");
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    let corr1 = T::lit(1.0 / (1.0 - cfg.beta1.powi(step as i32)));
    let corr2 = T::lit(1.0 / (1.0 - cfg.beta2.powi(step as i32)));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + one_b1 * g;
        v[i] = b2 * v[i] + one_b2 * g * g;
        let m_hat = m[i] * corr1;
        let v_hat = v[i] * corr2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam moments for every parameter of a network.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, net: &Network<T>) -> Self {
        let zeros: Vec<Vec<T>> = net
            .layers()
            .iter()
            .flat_map(|l| l.params.iter())
            .map(|p| vec![T::zero(); p.len()])
            .collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>) {
        self.step += 1;
        let grads = grads.layers.iter().flatten();
        for (((param, grad), m), v) in net.params_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            adam_step(param.data_mut(), grad.data(), m, v, self.step, &self.cfg);
        }
    }
}
