//! Synthetic accelerometer and gravity streams and the 18-sample window.
//!
//! Device frame: x to the right of the screen, y up along the screen, z out
//! of the screen. A phone lying flat and face up reads gravity (0, 0, 9.81).
//! Each pose tilts that vector by a fixed pitch (about x) and roll (about y).
//! Walking adds a periodic bounce along the gravity direction and a small
//! attitude wobble, both proportional to the pose's gait amplitude.

use std::collections::VecDeque;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use utgpose_neural::Tensor;

use crate::models::Pose;

pub const WINDOW_LEN: usize = 18;
/// Acceleration xyz then gravity xyz.
pub const FEATURES: usize = 6;
pub const IMU_INTERVAL_MS: f64 = 60.0;
pub const GRAVITY: f64 = 9.81;

pub const FRAME_NOTE: &str =
    "# device frame: x right, y up along the screen, z out of the screen; accel and gravity in m/s^2";

#[derive(Debug, Error)]
pub enum ImuError {
    #[error("trace of {0} ms is shorter than one window")]
    TooShort(f64),
    #[error("sample at {got} ms is not after {prev} ms")]
    OutOfOrder { prev: f64, got: f64 },
    #[error("window holds {0} of {WINDOW_LEN} samples")]
    NotReady(usize),
    #[error("invalid gait parameters: {0}")]
    InvalidParams(String),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ImuError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t_ms: f64,
    /// Linear acceleration with gravity removed.
    pub accel: [f64; 3],
    pub gravity: [f64; 3],
}

impl ImuSample {
    pub fn features(&self) -> [f64; FEATURES] {
        let [ax, ay, az] = self.accel;
        let [gx, gy, gz] = self.gravity;
        [ax, ay, az, gx, gy, gz]
    }
}

/// Device attitude in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    pub pitch_deg: f64,
    pub roll_deg: f64,
}

impl Orientation {
    pub fn gravity(&self) -> [f64; 3] {
        gravity_vector(self.pitch_deg, self.roll_deg)
    }
}

fn gravity_vector(pitch_deg: f64, roll_deg: f64) -> [f64; 3] {
    let (sp, cp) = pitch_deg.to_radians().sin_cos();
    let (sr, cr) = roll_deg.to_radians().sin_cos();
    [GRAVITY * cp * sr, GRAVITY * sp, GRAVITY * cp * cr]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaitParams {
    pub step_rate_hz: f64,
    pub hand_amp: f64,
    pub pocket_amp: f64,
    /// Second-harmonic amplitude relative to the fundamental.
    pub harmonic_ratio: f64,
    pub noise_sigma: f64,
    /// Attitude wobble in degrees per m/s² of gait amplitude.
    pub wobble_deg_per_amp: f64,
    pub los_hand: Orientation,
    pub nlos_hand: Orientation,
    pub front: Orientation,
    pub back: Orientation,
    pub rng_seed: u64,
}

impl Default for GaitParams {
    fn default() -> Self {
        Self {
            step_rate_hz: 3.0,
            hand_amp: 1.0,
            pocket_amp: 2.5,
            harmonic_ratio: 0.5,
            noise_sigma: 0.3,
            wobble_deg_per_amp: 2.0,
            los_hand: Orientation {
                pitch_deg: 40.0,
                roll_deg: 0.0,
            },
            nlos_hand: Orientation {
                pitch_deg: 40.0,
                roll_deg: 15.0,
            },
            front: Orientation {
                pitch_deg: 85.0,
                roll_deg: 0.0,
            },
            // Upside down and facing outward: y and z flip relative to FRONT.
            back: Orientation {
                pitch_deg: 265.0,
                roll_deg: 0.0,
            },
            rng_seed: 0,
        }
    }
}

impl GaitParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ImuError::InvalidParams(m));
        if !(self.step_rate_hz > 0.0) {
            return bad(format!("step_rate_hz {}", self.step_rate_hz));
        }
        if !(self.hand_amp >= 0.0 && self.pocket_amp >= 0.0 && self.noise_sigma >= 0.0) {
            return bad("amplitudes and noise must be non-negative".into());
        }
        if self.pocket_amp <= self.hand_amp && self.pocket_amp > 0.0 {
            return bad("pocket_amp must exceed hand_amp".into());
        }
        if !(self.harmonic_ratio >= 0.0 && self.wobble_deg_per_amp >= 0.0) {
            return bad("harmonic_ratio and wobble must be non-negative".into());
        }
        Ok(())
    }

    pub fn orientation(&self, pose: Pose) -> Orientation {
        match pose {
            Pose::LosHand => self.los_hand,
            Pose::NlosHand => self.nlos_hand,
            Pose::Front => self.front,
            Pose::Back => self.back,
        }
    }

    pub fn amplitude(&self, pose: Pose) -> f64 {
        if pose.in_pocket() {
            self.pocket_amp
        } else {
            self.hand_amp
        }
    }
}

/// Continuous gait state, so a stream may change pose between samples
/// without a phase jump.
#[derive(Clone, Debug)]
pub struct ImuGenerator {
    params: GaitParams,
    phase: f64,
    harmonic_phase: f64,
    wobble_phase: f64,
    noise: Option<Normal<f64>>,
}

impl ImuGenerator {
    pub fn new<R: Rng + ?Sized>(params: GaitParams, rng: &mut R) -> Result<Self> {
        params.validate()?;
        let tau = std::f64::consts::TAU;
        let noise = if params.noise_sigma > 0.0 {
            Some(Normal::new(0.0, params.noise_sigma).map_err(|e| ImuError::InvalidParams(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            phase: rng.random_range(0.0..tau),
            harmonic_phase: rng.random_range(0.0..tau),
            wobble_phase: rng.random_range(0.0..tau),
            params,
            noise,
        })
    }

    pub fn params(&self) -> &GaitParams {
        &self.params
    }

    pub fn sample<R: Rng + ?Sized>(&self, pose: Pose, t_ms: f64, rng: &mut R) -> ImuSample {
        let p = &self.params;
        let w = std::f64::consts::TAU * p.step_rate_hz * t_ms * 1e-3;
        let amp = p.amplitude(pose);
        let base = p.orientation(pose);
        let wobble = p.wobble_deg_per_amp * amp;
        let gravity = gravity_vector(
            base.pitch_deg + wobble * (w + self.wobble_phase).sin(),
            base.roll_deg + 0.5 * wobble * (w + self.wobble_phase).cos(),
        );
        let bounce = amp * ((w + self.phase).sin() + p.harmonic_ratio * (2.0 * w + self.harmonic_phase).sin());
        let up = base.gravity().map(|g| g / GRAVITY);
        let accel = up.map(|u| {
            let n = self.noise.map_or(0.0, |d| d.sample(rng));
            bounce * u + n
        });
        ImuSample { t_ms, accel, gravity }
    }
}

/// Samples at `60, 120, …` ms up to `duration_ms`.
pub fn generate_imu_trace<R: Rng + ?Sized>(
    pose: Pose,
    duration_ms: f64,
    params: &GaitParams,
    rng: &mut R,
) -> Result<Vec<ImuSample>> {
    let min = WINDOW_LEN as f64 * IMU_INTERVAL_MS;
    if !(duration_ms >= min) {
        return Err(ImuError::TooShort(duration_ms));
    }
    let generator = ImuGenerator::new(params.clone(), rng)?;
    let n = (duration_ms / IMU_INTERVAL_MS + 1e-9).floor() as usize;
    Ok((1..=n)
        .map(|k| generator.sample(pose, k as f64 * IMU_INTERVAL_MS, rng))
        .collect())
}

/// The most recent 18 samples, oldest first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImuWindow {
    samples: VecDeque<ImuSample>,
}

impl ImuWindow {
    pub fn new() -> Self {
        Self {
            samples: VecDeque::with_capacity(WINDOW_LEN + 1),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_ready(&self) -> bool {
        self.samples.len() == WINDOW_LEN
    }

    pub fn samples(&self) -> impl Iterator<Item = &ImuSample> {
        self.samples.iter()
    }

    pub fn push(&mut self, sample: ImuSample) -> Result<()> {
        if let Some(last) = self.samples.back() {
            if !(sample.t_ms > last.t_ms) {
                return Err(ImuError::OutOfOrder {
                    prev: last.t_ms,
                    got: sample.t_ms,
                });
            }
        }
        self.samples.push_back(sample);
        if self.samples.len() > WINDOW_LEN {
            self.samples.pop_front();
        }
        Ok(())
    }

    /// Feature rows when ready.
    pub fn rows(&self) -> Option<[[f64; FEATURES]; WINDOW_LEN]> {
        if !self.is_ready() {
            return None;
        }
        let mut out = [[0.0; FEATURES]; WINDOW_LEN];
        for (row, s) in out.iter_mut().zip(&self.samples) {
            *row = s.features();
        }
        Some(out)
    }
}

pub fn push_window(mut window: ImuWindow, sample: ImuSample) -> Result<ImuWindow> {
    window.push(sample)?;
    Ok(window)
}

/// `18 × 6` tensor, one row per timestep.
pub fn window_tensor(window: &ImuWindow) -> Result<Tensor<f64>> {
    let rows = window.rows().ok_or(ImuError::NotReady(window.len()))?;
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Tensor::new(vec![WINDOW_LEN, FEATURES], data).expect("window shape"))
}

/// Every full sliding window of a trace.
pub fn sliding_windows(trace: &[ImuSample]) -> Vec<[[f64; FEATURES]; WINDOW_LEN]> {
    trace
        .windows(WINDOW_LEN)
        .map(|w| {
            let mut out = [[0.0; FEATURES]; WINDOW_LEN];
            for (row, s) in out.iter_mut().zip(w) {
                *row = s.features();
            }
            out
        })
        .collect()
}

/// Root-mean-square of the acceleration vector over a window.
pub fn accel_rms(window: &[[f64; FEATURES]; WINDOW_LEN]) -> f64 {
    let sum: f64 = window.iter().map(|r| r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sum();
    (sum / WINDOW_LEN as f64).sqrt()
}

/// One labelled row of the IMU dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuRow {
    pub sample: ImuSample,
    pub pose: Pose,
}

pub fn imu_csv_header() -> [&'static str; 8] {
    ["t_ms", "ax", "ay", "az", "gx", "gy", "gz", "pose_label"]
}

fn fmt(v: f64) -> String {
    format!("{}", (v * 1e4).round() / 1e4)
}

/// Writes the frame note, the header and one line per sample.
pub fn write_imu_csv<W: Write>(rows: &[ImuRow], mut out: W) -> Result<()> {
    writeln!(out, "{FRAME_NOTE}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(imu_csv_header())?;
    for r in rows {
        let s = &r.sample;
        let mut fields = vec![fmt(s.t_ms)];
        fields.extend(s.accel.iter().chain(&s.gravity).map(|&v| fmt(v)));
        fields.push(r.pose.code().to_string());
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_imu_csv<R: Read>(input: R) -> Result<Vec<ImuRow>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().ne(imu_csv_header()) {
        return Err(ImuError::Parse {
            line: 1,
            msg: "header does not match the IMU dataset schema".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| ImuError::Parse {
                    line,
                    msg: format!("column {} unreadable", imu_csv_header()[i]),
                })
        };
        let code = num(7)?;
        let pose = Pose::from_code(code as u8)
            .filter(|_| code.fract() == 0.0)
            .ok_or_else(|| ImuError::Parse {
                line,
                msg: format!("pose_label {code}"),
            })?;
        rows.push(ImuRow {
            sample: ImuSample {
                t_ms: num(0)?,
                accel: [num(1)?, num(2)?, num(3)?],
                gravity: [num(4)?, num(5)?, num(6)?],
            },
            pose,
        });
    }
    Ok(rows)
}
