//! The two classifiers, the probability smoother and the pose rule.
//!
//! A 1D CNN maps an effective CIR to P(NLOS). Its output is smoothed by an
//! EWMA and thresholded. The LOS/NLOS label then selects one of two
//! CNN-LSTM networks which look at the last 18 IMU samples and decide
//! between the hand pose and the pocket pose of that branch.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use utgpose_neural::io::{load_network, save_network, Manifest};
use utgpose_neural::{train_with_callback, LayerSpec, NeuralError, Network, Tensor, TrainConfig, TrainReport};

use crate::cirproc::{Ecir, ECIR_LEN};
use crate::imusim::{ImuWindow, FEATURES, WINDOW_LEN};

/// Weight of the previous smoothed value in the EWMA.
pub const DEFAULT_ALPHA: f64 = 0.8;
/// Decision threshold; ties go to the positive class.
pub const THRESHOLD: f64 = 0.5;

pub const LOS_KERNELS: [usize; 4] = [5, 11, 17, 5];
pub const LOS_FILTERS: [usize; 4] = [64, 128, 256, 512];
pub const POSE_KERNEL: usize = 2;
pub const POSE_FILTERS: [usize; 3] = [64, 128, 256];
/// Axis pooled by each pose-detector block. Pooling the 5-wide feature axis
/// twice early would leave it narrower than the third kernel.
pub const POSE_POOL_AXES: [usize; 3] = [0, 1, 0];
pub const LSTM_UNITS: usize = 128;
pub const DROPOUT_RATE: f64 = 0.2;

pub const LOS_MODEL: &str = "los_classifier";
pub const POSE_LOS_MODEL: &str = "pose_los";
pub const POSE_NLOS_MODEL: &str = "pose_nlos";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("probability {0} outside [0, 1]")]
    InputRange(f64),
    #[error("invalid smoothing factor {0}")]
    InvalidAlpha(f64),
    #[error("IMU window not ready: {0} of {WINDOW_LEN} samples")]
    WindowNotReady(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("model bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LosLabel {
    #[serde(rename = "LOS")]
    Los,
    #[serde(rename = "NLOS")]
    Nlos,
}

impl LosLabel {
    pub const ALL: [LosLabel; 2] = [LosLabel::Los, LosLabel::Nlos];

    /// Dataset code: 0 = LOS, 1 = NLOS.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Los),
            1 => Some(Self::Nlos),
            _ => None,
        }
    }

    /// NLOS iff `p_nlos ≥ 0.5`.
    pub fn from_probability(p_nlos: f64) -> Self {
        if p_nlos >= THRESHOLD {
            Self::Nlos
        } else {
            Self::Los
        }
    }

    pub fn target(self) -> f64 {
        self.code() as f64
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Los => "LOS",
            Self::Nlos => "NLOS",
        }
    }
}

impl fmt::Display for LosLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pose {
    #[serde(rename = "LOS_HAND")]
    LosHand,
    #[serde(rename = "NLOS_HAND")]
    NlosHand,
    #[serde(rename = "FRONT")]
    Front,
    #[serde(rename = "BACK")]
    Back,
}

impl Pose {
    pub const ALL: [Pose; 4] = [Pose::LosHand, Pose::NlosHand, Pose::Front, Pose::Back];

    /// Dataset code 0–3 in declaration order.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn los_label(self) -> LosLabel {
        match self {
            Pose::LosHand | Pose::Front => LosLabel::Los,
            Pose::NlosHand | Pose::Back => LosLabel::Nlos,
        }
    }

    /// Front or back pocket.
    pub fn in_pocket(self) -> bool {
        matches!(self, Pose::Front | Pose::Back)
    }

    /// The pose within `branch` that is held in the hand or carried in a
    /// pocket.
    pub fn for_branch(branch: LosLabel, pocket: bool) -> Self {
        match (branch, pocket) {
            (LosLabel::Los, false) => Pose::LosHand,
            (LosLabel::Los, true) => Pose::Front,
            (LosLabel::Nlos, false) => Pose::NlosHand,
            (LosLabel::Nlos, true) => Pose::Back,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pose::LosHand => "LOS_HAND",
            Pose::NlosHand => "NLOS_HAND",
            Pose::Front => "FRONT",
            Pose::Back => "BACK",
        }
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pose {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Pose::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::InvalidInput(format!("unknown pose {s:?}")))
    }
}

/// Exponentially weighted moving average over probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EwmaState {
    /// Weight on the previous smoothed value.
    pub alpha: f64,
    pub y: f64,
    pub initialized: bool,
}

impl Default for EwmaState {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            y: 0.0,
            initialized: false,
        }
    }
}

impl EwmaState {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(ModelError::InvalidAlpha(alpha));
        }
        Ok(Self {
            alpha,
            ..Self::default()
        })
    }
}

/// The first input initialises the average; later ones blend in with
/// weight `1 − alpha`.
pub fn ewma_update(state: EwmaState, raw: f64) -> Result<EwmaState> {
    if !(0.0..=1.0).contains(&raw) {
        return Err(ModelError::InputRange(raw));
    }
    let y = if state.initialized {
        state.alpha * state.y + (1.0 - state.alpha) * raw
    } else {
        raw
    };
    Ok(EwmaState {
        y,
        initialized: true,
        ..state
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LosDecision {
    pub raw_p: f64,
    pub smoothed_p: f64,
    pub label: LosLabel,
}

/// Smooths `raw_p` and thresholds the result.
pub fn smooth_decision(raw_p: f64, state: EwmaState) -> Result<(LosDecision, EwmaState)> {
    let next = ewma_update(state, raw_p)?;
    Ok((
        LosDecision {
            raw_p,
            smoothed_p: next.y,
            label: LosLabel::from_probability(next.y),
        },
        next,
    ))
}

fn conv_block(conv: LayerSpec, pool_axes: Vec<usize>) -> [LayerSpec; 5] {
    [
        conv,
        LayerSpec::InstanceNorm,
        LayerSpec::ReLU,
        LayerSpec::Dropout { rate: DROPOUT_RATE },
        LayerSpec::MaxPool {
            kernel_size: 2,
            axes: pool_axes,
        },
    ]
}

fn head() -> [LayerSpec; 3] {
    [LayerSpec::Flatten, LayerSpec::Dense { units: 1 }, LayerSpec::Sigmoid]
}

/// Layer list of the CIR classifier.
pub fn los_classifier_specs() -> Vec<LayerSpec> {
    let mut specs: Vec<LayerSpec> = LOS_KERNELS
        .iter()
        .zip(LOS_FILTERS)
        .flat_map(|(&kernel_size, n_filters)| {
            conv_block(
                LayerSpec::Conv1D {
                    kernel_size,
                    n_filters,
                },
                vec![0],
            )
        })
        .collect();
    specs.extend(head());
    specs
}

/// Layer list of one pose-detector branch.
pub fn pose_detector_specs() -> Vec<LayerSpec> {
    let mut specs: Vec<LayerSpec> = POSE_FILTERS
        .iter()
        .zip(POSE_POOL_AXES)
        .flat_map(|(&n_filters, axis)| {
            conv_block(
                LayerSpec::Conv2D {
                    kernel_size: POSE_KERNEL,
                    n_filters,
                },
                vec![axis],
            )
        })
        .collect();
    specs.push(LayerSpec::LSTM { units: LSTM_UNITS });
    specs.extend(head());
    specs
}

/// CIR classifier over a `135 × 1` eCIR.
pub fn build_los_classifier(seed: u64) -> Result<Network<f32>> {
    build_cir_classifier(ECIR_LEN, seed)
}

/// Same architecture over an arbitrary-length magnitude vector.
pub fn build_cir_classifier(input_len: usize, seed: u64) -> Result<Network<f32>> {
    Ok(Network::build(&[input_len, 1], &los_classifier_specs(), seed)?)
}

pub fn pose_input_shape() -> [usize; 3] {
    [WINDOW_LEN, FEATURES, 1]
}

/// One branch's pose detector; the branch only selects the default seed
/// stream so the two parameter sets differ.
pub fn build_pose_detector(branch: LosLabel, seed: u64) -> Result<Network<f32>> {
    let seed = seed.wrapping_mul(2).wrapping_add(branch.code() as u64);
    Ok(Network::build(&pose_input_shape(), &pose_detector_specs(), seed)?)
}

/// Magnitudes divided by the record's noise ceiling, as a `len × 1` tensor.
pub fn cir_input(magnitudes: &[f64], max_noise: f64) -> Result<Tensor<f32>> {
    if !(max_noise > 0.0) {
        return Err(ModelError::InvalidInput(format!("max_noise {max_noise} must be positive")));
    }
    let data = magnitudes.iter().map(|&m| (m / max_noise) as f32).collect();
    Ok(Tensor::new(vec![magnitudes.len(), 1], data)?)
}

/// Trained CIR classifier with its smoothing settings.
#[derive(Clone, Debug)]
pub struct LosClassifier {
    pub net: Network<f32>,
    pub alpha: f64,
}

impl LosClassifier {
    pub fn new(net: Network<f32>) -> Self {
        Self {
            net,
            alpha: DEFAULT_ALPHA,
        }
    }

    /// P(NLOS) for one window.
    pub fn probability(&self, magnitudes: &[f64], max_noise: f64) -> Result<f64> {
        Ok(self.net.predict(&cir_input(magnitudes, max_noise)?)?)
    }

    pub fn metadata(&self) -> serde_json::Value {
        json!({
            "model": LOS_MODEL,
            "input_len": self.net.input_shape()[0],
            "normalization": "divide_by_max_noise",
            "alpha": self.alpha,
            "threshold": THRESHOLD,
            "positive_class": "NLOS",
        })
    }
}

/// Raw probability, smoothed probability and label for one eCIR.
pub fn classify_los(
    ecir: &Ecir,
    max_noise: f64,
    classifier: &LosClassifier,
    state: EwmaState,
) -> Result<(LosDecision, EwmaState)> {
    let raw_p = classifier.probability(&ecir.values, max_noise)?;
    smooth_decision(raw_p, state)
}

/// Per-feature affine standardisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: [f64; FEATURES],
    pub std: [f64; FEATURES],
}

impl FeatureStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; FEATURES],
            std: [1.0; FEATURES],
        }
    }

    /// Mean and standard deviation of every column across all rows of all
    /// windows. Constant columns get unit scale.
    pub fn fit(windows: &[[[f64; FEATURES]; WINDOW_LEN]]) -> Self {
        let n = (windows.len() * WINDOW_LEN).max(1) as f64;
        let mut mean = [0.0; FEATURES];
        let mut sq = [0.0; FEATURES];
        for row in windows.iter().flatten() {
            for f in 0..FEATURES {
                mean[f] += row[f];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for row in windows.iter().flatten() {
            for f in 0..FEATURES {
                sq[f] += (row[f] - mean[f]).powi(2);
            }
        }
        let std = sq.map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-9 {
                sd
            } else {
                1.0
            }
        });
        Self { mean, std }
    }

    pub fn apply(&self, window: &[[f64; FEATURES]; WINDOW_LEN]) -> Tensor<f32> {
        let data = window
            .iter()
            .flat_map(|row| (0..FEATURES).map(move |f| ((row[f] - self.mean[f]) / self.std[f]) as f32))
            .collect();
        Tensor::new(pose_input_shape().to_vec(), data).expect("pose input shape")
    }
}

/// One branch of the pose detector with its input standardisation.
#[derive(Clone, Debug)]
pub struct PoseDetector {
    pub branch: LosLabel,
    pub net: Network<f32>,
    pub stats: FeatureStats,
}

impl PoseDetector {
    /// P(pocket pose) for a raw 18×6 window.
    pub fn probability(&self, window: &[[f64; FEATURES]; WINDOW_LEN]) -> Result<f64> {
        Ok(self.net.predict(&self.stats.apply(window))?)
    }

    pub fn metadata(&self) -> serde_json::Value {
        let trace: Vec<_> = std::iter::once(self.net.input_shape().to_vec())
            .chain(self.net.layers().iter().map(|l| l.out_shape.clone()))
            .collect();
        json!({
            "model": "pose_detector",
            "branch": self.branch.name(),
            "positive_class": Pose::for_branch(self.branch, true).name(),
            "threshold": THRESHOLD,
            "feature_mean": self.stats.mean,
            "feature_std": self.stats.std,
            "pool_axes": POSE_POOL_AXES,
            "shape_trace": trace,
        })
    }
}

/// Pose from a branch label and that branch's pocket probability.
pub fn decide_pose(label: LosLabel, p_pocket: f64) -> Pose {
    Pose::for_branch(label, p_pocket >= THRESHOLD)
}

/// Runs the branch selected by `decision` on the current IMU window.
pub fn detect_pose(
    decision: &LosDecision,
    window: &ImuWindow,
    los_net: &PoseDetector,
    nlos_net: &PoseDetector,
) -> Result<Pose> {
    let rows = window.rows().ok_or(ModelError::WindowNotReady(window.len()))?;
    let detector = match decision.label {
        LosLabel::Los => los_net,
        LosLabel::Nlos => nlos_net,
    };
    Ok(decide_pose(decision.label, detector.probability(&rows)?))
}

/// All three trained networks.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub los: LosClassifier,
    pub pose_los: PoseDetector,
    pub pose_nlos: PoseDetector,
}

impl ModelBundle {
    pub fn detector(&self, branch: LosLabel) -> &PoseDetector {
        match branch {
            LosLabel::Los => &self.pose_los,
            LosLabel::Nlos => &self.pose_nlos,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_los_classifier(&self.los, dir)?;
        save_pose_detector(&self.pose_los, dir)?;
        save_pose_detector(&self.pose_nlos, dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            los: load_los_classifier(dir)?,
            pose_los: load_pose_detector(dir, LosLabel::Los)?,
            pose_nlos: load_pose_detector(dir, LosLabel::Nlos)?,
        })
    }
}

fn make_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| ModelError::Neural(NeuralError::Io(e)))
}

pub fn save_los_classifier(model: &LosClassifier, dir: &Path) -> Result<()> {
    make_dir(dir)?;
    Ok(save_network(&model.net, dir, LOS_MODEL, model.metadata())?)
}

pub fn load_los_classifier(dir: &Path) -> Result<LosClassifier> {
    let (net, manifest) = load_network::<f32>(dir, LOS_MODEL)?;
    let alpha = meta_f64(&manifest, "alpha")?;
    EwmaState::new(alpha)?;
    Ok(LosClassifier { net, alpha })
}

pub fn pose_model_name(branch: LosLabel) -> &'static str {
    match branch {
        LosLabel::Los => POSE_LOS_MODEL,
        LosLabel::Nlos => POSE_NLOS_MODEL,
    }
}

pub fn save_pose_detector(model: &PoseDetector, dir: &Path) -> Result<()> {
    make_dir(dir)?;
    Ok(save_network(&model.net, dir, pose_model_name(model.branch), model.metadata())?)
}

pub fn load_pose_detector(dir: &Path, branch: LosLabel) -> Result<PoseDetector> {
    let (net, manifest) = load_network::<f32>(dir, pose_model_name(branch))?;
    let stored = manifest.metadata.get("branch").and_then(|b| b.as_str());
    if stored != Some(branch.name()) {
        return Err(ModelError::Bundle(format!("expected {} branch, manifest says {stored:?}", branch.name())));
    }
    let stats = FeatureStats {
        mean: meta_array(&manifest, "feature_mean")?,
        std: meta_array(&manifest, "feature_std")?,
    };
    Ok(PoseDetector { branch, net, stats })
}

fn meta_f64(manifest: &Manifest, key: &str) -> Result<f64> {
    manifest
        .metadata
        .get(key)
        .and_then(|v| v.as_f64())
        .ok_or_else(|| ModelError::Bundle(format!("metadata field {key:?} missing")))
}

fn meta_array(manifest: &Manifest, key: &str) -> Result<[f64; FEATURES]> {
    let v = manifest
        .metadata
        .get(key)
        .cloned()
        .ok_or_else(|| ModelError::Bundle(format!("metadata field {key:?} missing")))?;
    serde_json::from_value(v).map_err(|e| ModelError::Bundle(format!("{key}: {e}")))
}

/// Table defaults for the CIR classifier: batch 50, at most 20 epochs.
pub fn los_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 50,
        max_epochs: 20,
        seed,
        early_stop_loss: Some(0.01),
        ..TrainConfig::default()
    }
}

/// Table defaults for the pose detectors: batch 100, at most 100 epochs.
pub fn pose_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 100,
        max_epochs: 100,
        seed,
        early_stop_loss: Some(0.01),
        ..TrainConfig::default()
    }
}

/// Trains a CIR classifier on `(magnitudes, max_noise, label)` examples.
/// The input length is taken from the first example.
pub fn train_cir_classifier(
    examples: &[(Vec<f64>, f64, LosLabel)],
    cfg: &TrainConfig,
    init_seed: u64,
) -> Result<(LosClassifier, TrainReport)> {
    let first = examples
        .first()
        .ok_or_else(|| ModelError::InvalidInput("no training examples".into()))?;
    let mut net = build_cir_classifier(first.0.len(), init_seed)?;
    let inputs = examples
        .iter()
        .map(|(m, noise, _)| cir_input(m, *noise))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<f64> = examples.iter().map(|e| e.2.target()).collect();
    let report = train_with_callback(&mut net, &inputs, &labels, cfg, |epoch, loss| {
        log::info!("CIR classifier epoch {}: loss {loss:.5}", epoch + 1)
    })?;
    Ok((LosClassifier::new(net), report))
}

/// Trains one branch on raw windows labelled hand (false) or pocket (true).
pub fn train_pose_detector(
    branch: LosLabel,
    windows: &[[[f64; FEATURES]; WINDOW_LEN]],
    pocket: &[bool],
    cfg: &TrainConfig,
    init_seed: u64,
) -> Result<(PoseDetector, TrainReport)> {
    if windows.is_empty() || windows.len() != pocket.len() {
        return Err(ModelError::InvalidInput(format!(
            "{} windows for {} labels",
            windows.len(),
            pocket.len()
        )));
    }
    train_pose_detector_with_stats(branch, windows, pocket, FeatureStats::fit(windows), cfg, init_seed)
}

/// As [`train_pose_detector`], standardizing with `stats` fitted elsewhere.
pub fn train_pose_detector_with_stats(
    branch: LosLabel,
    windows: &[[[f64; FEATURES]; WINDOW_LEN]],
    pocket: &[bool],
    stats: FeatureStats,
    cfg: &TrainConfig,
    init_seed: u64,
) -> Result<(PoseDetector, TrainReport)> {
    if windows.is_empty() || windows.len() != pocket.len() {
        return Err(ModelError::InvalidInput(format!(
            "{} windows for {} labels",
            windows.len(),
            pocket.len()
        )));
    }
    let inputs: Vec<_> = windows.iter().map(|w| stats.apply(w)).collect();
    let labels: Vec<f64> = pocket.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect();
    let mut net = build_pose_detector(branch, init_seed)?;
    let report = train_with_callback(&mut net, &inputs, &labels, cfg, |epoch, loss| {
        log::info!("{branch} pose detector epoch {}: loss {loss:.5}", epoch + 1)
    })?;
    Ok((PoseDetector { branch, net, stats }, report))
}
