//! Central finite-difference gradient checking.
//!
//! The numerical side only calls [`Network::loss`], i.e. forward passes, so
//! it is independent of every backward kernel it validates. Dropout masks are
//! reproduced by reseeding the mask RNG identically for every evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::network::Network;
use crate::tensor::Tensor;

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub n_params: usize,
    pub max_relative_error: f64,
    /// Flat index of the parameter with the largest error.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares reverse-mode gradients of the BCE loss against central
/// differences with step `h` for every parameter of `net`.
pub fn check_gradients(net: &Network<f64>, input: &Tensor<f64>, target: f64, mask_seed: u64, h: f64) -> Result<GradCheckReport> {
    let (_, grads) = net.gradients(input, target, &mut ChaCha8Rng::seed_from_u64(mask_seed))?;
    let analytic = grads.flat();
    let base = net.flat_params();
    let mut probe = net.clone();
    let mut values = base.clone();
    let mut report = GradCheckReport {
        n_params: base.len(),
        max_relative_error: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for i in 0..base.len() {
        values[i] = base[i] + h;
        probe.set_flat_params(&values)?;
        let up = probe.loss(input, target, true, &mut ChaCha8Rng::seed_from_u64(mask_seed))?;
        values[i] = base[i] - h;
        probe.set_flat_params(&values)?;
        let down = probe.loss(input, target, true, &mut ChaCha8Rng::seed_from_u64(mask_seed))?;
        values[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        let err = relative_error(analytic[i], numeric, 1e-6);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_index = i;
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
