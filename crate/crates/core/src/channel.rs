//! Synthetic channel impulse responses and their diagnostics.
//!
//! A record is 1016 complex accumulator taps at 1 ns spacing. Every tap
//! carries complex Gaussian noise. From the first-path index onward a
//! deterministic envelope with random per-tap phase is added:
//!
//! * LOS: one strong path decaying exponentially.
//! * NLOS: a weak first path, a diffuse tail and Poisson-arriving clusters,
//!   cut off after a random excess delay.
//!
//! Envelope amplitudes are expressed as multiples of the record's own noise
//! ceiling (`max_noise`), so the peak-to-noise ratios are exact.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{LosLabel, Pose};

/// Taps per record.
pub const CIR_LEN: usize = 1016;
/// Taps assumed to hold noise only when diagnostics are recomputed.
pub const DEFAULT_NOISE_WINDOW: Range<usize> = 0..600;
/// A first path must exceed `DETECTION_FACTOR × max_noise` ...
pub const DETECTION_FACTOR: f64 = 1.0;
/// ... on this many consecutive taps.
pub const DETECTION_RUN: usize = 2;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
    #[error("expected {CIR_LEN} taps, got {0}")]
    WrongLength(usize),
    #[error("noise window {0:?} does not fit the record")]
    BadNoiseWindow(Range<usize>),
    #[error("no tap exceeds the noise threshold {0:.2}")]
    NoFirstPath(f64),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ChannelError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComplexSample {
    pub re: i16,
    pub im: i16,
}

impl ComplexSample {
    pub fn new(re: i16, im: i16) -> Self {
        Self { re, im }
    }
}

pub fn magnitude(s: ComplexSample) -> f64 {
    (s.re as f64).hypot(s.im as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub fp_index: usize,
    /// Magnitudes at `fp_index + 1 ..= fp_index + 3`.
    pub fp_ampl: [f64; 3],
    pub max_noise: f64,
    pub std_noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CirRecord {
    pub samples: Vec<ComplexSample>,
    pub diagnostics: Diagnostics,
    pub label: Option<LosLabel>,
    pub pose: Option<Pose>,
    /// Set when a tap had to be clipped to the 16-bit range.
    pub saturated: bool,
}

impl CirRecord {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| magnitude(s)).collect()
    }

    /// Dataset form; `None` without a label.
    pub fn to_row(&self) -> Option<CirRow> {
        Some(CirRow {
            label: self.label?,
            pose: self.pose,
            diagnostics: self.diagnostics,
            magnitudes: self.magnitudes(),
        })
    }
}

/// One row of the CIR dataset: magnitudes only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CirRow {
    pub label: LosLabel,
    pub pose: Option<Pose>,
    pub diagnostics: Diagnostics,
    pub magnitudes: Vec<f64>,
}

/// Generator settings. Ratios (`*_snr`) are relative to the record's
/// `max_noise`; intervals are inclusive `(low, high)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub fp_index_range: (usize, usize),
    /// Standard deviation of each noise component.
    pub noise_scale: f64,
    pub los_peak_snr: (f64, f64),
    pub nlos_peak_snr: (f64, f64),
    pub los_decay_ns: f64,
    /// The LOS envelope stops once it falls below this ratio.
    pub los_cutoff_snr: f64,
    pub nlos_first_decay_ns: f64,
    /// Level of the diffuse NLOS tail.
    pub nlos_floor_snr: (f64, f64),
    pub nlos_floor_rise_ns: f64,
    /// Mean cluster arrivals per 100 ns of excess delay.
    pub nlos_cluster_rate: f64,
    pub nlos_cluster_snr: (f64, f64),
    pub nlos_cluster_decay_ns: f64,
    /// Mean NLOS excess delay; drawn uniformly within ± the spread.
    pub nlos_excess_ns: f64,
    pub nlos_excess_spread_ns: f64,
    pub rng_seed: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            fp_index_range: (700, 780),
            noise_scale: 366.0,
            los_peak_snr: (5.0, 10.0),
            nlos_peak_snr: (1.5, 3.0),
            los_decay_ns: 29.0,
            los_cutoff_snr: 0.25,
            nlos_first_decay_ns: 1.5,
            nlos_floor_snr: (2.5, 3.5),
            nlos_floor_rise_ns: 2.0,
            nlos_cluster_rate: 4.0,
            nlos_cluster_snr: (1.5, 4.0),
            nlos_cluster_decay_ns: 8.0,
            nlos_excess_ns: 123.0,
            nlos_excess_spread_ns: 5.0,
            rng_seed: 0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ChannelError::InvalidParams(m));
        let (lo, hi) = self.fp_index_range;
        if lo > hi || lo < 5 {
            return bad(format!("fp_index_range {:?}", self.fp_index_range));
        }
        let interval_ok = |(a, b): (f64, f64)| a > 0.0 && a <= b && b.is_finite();
        for (name, iv) in [
            ("los_peak_snr", self.los_peak_snr),
            ("nlos_peak_snr", self.nlos_peak_snr),
            ("nlos_floor_snr", self.nlos_floor_snr),
            ("nlos_cluster_snr", self.nlos_cluster_snr),
        ] {
            if !interval_ok(iv) {
                return bad(format!("{name} {iv:?}"));
            }
        }
        if self.los_peak_snr.0 <= self.nlos_peak_snr.1 {
            return bad("LOS peak ratio must exceed the NLOS peak ratio".into());
        }
        for (name, v) in [
            ("noise_scale", self.noise_scale),
            ("los_decay_ns", self.los_decay_ns),
            ("los_cutoff_snr", self.los_cutoff_snr),
            ("nlos_first_decay_ns", self.nlos_first_decay_ns),
            ("nlos_floor_rise_ns", self.nlos_floor_rise_ns),
            ("nlos_cluster_rate", self.nlos_cluster_rate),
            ("nlos_cluster_decay_ns", self.nlos_cluster_decay_ns),
            ("nlos_excess_ns", self.nlos_excess_ns),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if !(self.nlos_excess_spread_ns >= 0.0 && self.nlos_excess_spread_ns < self.nlos_excess_ns) {
            return bad(format!("nlos_excess_spread_ns {}", self.nlos_excess_spread_ns));
        }
        let longest = self.max_support();
        if hi + longest >= CIR_LEN {
            return bad(format!("signal support up to {} overruns the record", hi + longest));
        }
        Ok(())
    }

    fn los_support(&self, ratio: f64) -> usize {
        (self.los_decay_ns * (ratio / self.los_cutoff_snr).ln()).max(0.0).floor() as usize
    }

    fn max_support(&self) -> usize {
        let nlos = (self.nlos_excess_ns + self.nlos_excess_spread_ns).round() as usize;
        self.los_support(self.los_peak_snr.1).max(nlos)
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Envelope from the first path onward, in multiples of `max_noise`.
fn envelope<R: Rng + ?Sized>(condition: LosLabel, p: &ChannelParams, rng: &mut R) -> Vec<f64> {
    match condition {
        LosLabel::Los => {
            let a0 = uniform(rng, p.los_peak_snr);
            (0..=p.los_support(a0))
                .map(|t| a0 * (-(t as f64) / p.los_decay_ns).exp())
                .collect()
        }
        LosLabel::Nlos => {
            let a0 = uniform(rng, p.nlos_peak_snr);
            let floor = uniform(rng, p.nlos_floor_snr);
            let spread = p.nlos_excess_spread_ns;
            let excess = uniform(rng, (p.nlos_excess_ns - spread, p.nlos_excess_ns + spread)).round() as usize;
            let mean_clusters = p.nlos_cluster_rate * excess as f64 / 100.0;
            let n_clusters = Poisson::new(mean_clusters).map(|d| d.sample(rng) as usize).unwrap_or(0);
            let clusters: Vec<(f64, f64)> = (0..n_clusters)
                .map(|_| {
                    let arrival = rng.random_range(3.0..excess.max(4) as f64);
                    (arrival, uniform(rng, p.nlos_cluster_snr))
                })
                .collect();
            (0..=excess)
                .map(|t| {
                    let t = t as f64;
                    let first = a0 * (-t / p.nlos_first_decay_ns).exp();
                    let diffuse = floor * (1.0 - (-t / p.nlos_floor_rise_ns).exp());
                    let mut power = first * first + diffuse * diffuse;
                    for &(arrival, amp) in &clusters {
                        if t >= arrival {
                            power += (amp * (-(t - arrival) / p.nlos_cluster_decay_ns).exp()).powi(2);
                        }
                    }
                    power.sqrt()
                })
                .collect()
        }
    }
}

fn quantize(v: f64, saturated: &mut bool) -> i16 {
    let r = v.round();
    if r > i16::MAX as f64 {
        *saturated = true;
        i16::MAX
    } else if r < i16::MIN as f64 {
        *saturated = true;
        i16::MIN
    } else {
        r as i16
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Draws one labelled record. The returned diagnostics are ground truth:
/// `fp_index` is the generated first path and the noise statistics cover
/// every tap outside the signal support.
pub fn generate_cir<R: Rng + ?Sized>(condition: LosLabel, params: &ChannelParams, rng: &mut R) -> Result<CirRecord> {
    params.validate()?;
    let fp = rng.random_range(params.fp_index_range.0..=params.fp_index_range.1);
    let env = envelope(condition, params, rng);
    let support = fp..fp + env.len();

    let normal = Normal::new(0.0, params.noise_scale).map_err(|e| ChannelError::InvalidParams(e.to_string()))?;
    let noise: Vec<(f64, f64)> = (0..CIR_LEN).map(|_| (normal.sample(rng), normal.sample(rng))).collect();

    let mut saturated = false;
    let mut samples: Vec<ComplexSample> = noise
        .iter()
        .map(|&(re, im)| ComplexSample::new(quantize(re, &mut saturated), quantize(im, &mut saturated)))
        .collect();
    let noise_mags = || {
        samples
            .iter()
            .enumerate()
            .filter(|(i, _)| !support.contains(i))
            .map(|(_, &s)| magnitude(s))
    };
    let max_noise = noise_mags().fold(0.0, f64::max);
    let (_, std_noise) = mean_std(noise_mags());

    for (t, &ratio) in env.iter().enumerate() {
        let i = fp + t;
        let amp = ratio * max_noise;
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let (nre, nim) = noise[i];
        samples[i] = ComplexSample::new(
            quantize(amp * phase.cos() + nre, &mut saturated),
            quantize(amp * phase.sin() + nim, &mut saturated),
        );
    }
    if saturated {
        log::warn!("CIR tap clipped to the 16-bit range");
    }
    let fp_ampl = [1, 2, 3].map(|d| magnitude(samples[fp + d]));
    Ok(CirRecord {
        samples,
        diagnostics: Diagnostics {
            fp_index: fp,
            fp_ampl,
            max_noise,
            std_noise,
        },
        label: Some(condition),
        pose: None,
        saturated,
    })
}

/// Record for `pose`, labelled with the pose's LOS class.
pub fn generate_for_pose<R: Rng + ?Sized>(pose: Pose, params: &ChannelParams, rng: &mut R) -> Result<CirRecord> {
    let mut rec = generate_cir(pose.los_label(), params, rng)?;
    rec.pose = Some(pose);
    Ok(rec)
}

/// Diagnostics from complex taps. See [`compute_diagnostics_from_magnitudes`].
pub fn compute_diagnostics(samples: &[ComplexSample], noise_window: Range<usize>) -> Result<Diagnostics> {
    let mags: Vec<f64> = samples.iter().map(|&s| magnitude(s)).collect();
    compute_diagnostics_from_magnitudes(&mags, noise_window)
}

/// Noise statistics over `noise_window`; the first path is the first tap
/// that, together with the next, exceeds `max_noise`.
pub fn compute_diagnostics_from_magnitudes(mags: &[f64], noise_window: Range<usize>) -> Result<Diagnostics> {
    if mags.len() != CIR_LEN {
        return Err(ChannelError::WrongLength(mags.len()));
    }
    if noise_window.is_empty() || noise_window.end > CIR_LEN {
        return Err(ChannelError::BadNoiseWindow(noise_window));
    }
    let window = &mags[noise_window.clone()];
    let max_noise = window.iter().copied().fold(0.0, f64::max);
    let (_, std_noise) = mean_std(window.iter().copied());
    let threshold = DETECTION_FACTOR * max_noise;
    let last_start = CIR_LEN - 4;
    let fp_index = (0..=last_start)
        .find(|&i| mags[i..i + DETECTION_RUN].iter().all(|&m| m > threshold))
        .ok_or(ChannelError::NoFirstPath(threshold))?;
    Ok(Diagnostics {
        fp_index,
        fp_ampl: [1, 2, 3].map(|d| mags[fp_index + d]),
        max_noise,
        std_noise,
    })
}

/// Taps at or after the first path whose magnitude exceeds `max_noise`.
pub fn above_noise_count(mags: &[f64], diag: &Diagnostics) -> usize {
    mags[diag.fp_index..].iter().filter(|&&m| m > diag.max_noise).count()
}

/// Values are written with at most two decimals.
pub fn format_value(v: f64) -> String {
    format!("{}", (v * 100.0).round() / 100.0)
}

pub fn cir_csv_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "label",
        "pose",
        "fp_index",
        "fp_ampl1",
        "fp_ampl2",
        "fp_ampl3",
        "max_noise",
        "std_noise",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..CIR_LEN).map(|i| format!("cir{i}")));
    h
}

/// Streaming writer for the CIR dataset.
pub struct CirCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> CirCsvWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(cir_csv_header())?;
        Ok(Self { inner })
    }

    pub fn write_row(&mut self, row: &CirRow) -> Result<()> {
        if row.magnitudes.len() != CIR_LEN {
            return Err(ChannelError::WrongLength(row.magnitudes.len()));
        }
        let d = &row.diagnostics;
        let w = &mut self.inner;
        w.write_field(row.label.code().to_string())?;
        w.write_field(row.pose.map(|p| p.code().to_string()).unwrap_or_default())?;
        w.write_field(d.fp_index.to_string())?;
        for a in d.fp_ampl {
            w.write_field(format_value(a))?;
        }
        w.write_field(format_value(d.max_noise))?;
        w.write_field(format_value(d.std_noise))?;
        for &m in &row.magnitudes {
            w.write_field(format_value(m))?;
        }
        w.write_record(None::<&[u8]>)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| ChannelError::Io(e.into_error()))
    }
}

/// Rounds the stored values the same way the writer does.
pub fn round_row(row: &CirRow) -> CirRow {
    let r = |v: f64| (v * 100.0).round() / 100.0;
    CirRow {
        label: row.label,
        pose: row.pose,
        diagnostics: Diagnostics {
            fp_index: row.diagnostics.fp_index,
            fp_ampl: row.diagnostics.fp_ampl.map(r),
            max_noise: r(row.diagnostics.max_noise),
            std_noise: r(row.diagnostics.std_noise),
        },
        magnitudes: row.magnitudes.iter().map(|&m| r(m)).collect(),
    }
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, line: u64, name: &str) -> Result<T> {
    let raw = rec.get(idx).ok_or_else(|| ChannelError::Parse {
        line,
        msg: format!("missing column {name}"),
    })?;
    raw.trim().parse().map_err(|_| ChannelError::Parse {
        line,
        msg: format!("{name}: cannot parse {raw:?}"),
    })
}

/// Strict reader for files written by [`CirCsvWriter`].
pub fn read_cir_csv<R: Read>(input: R) -> Result<Vec<CirRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().ne(cir_csv_header().iter().map(String::as_str)) {
        return Err(ChannelError::Parse {
            line: 1,
            msg: "header does not match the CIR dataset schema".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(ChannelError::Parse {
                line,
                msg: format!("{} fields, expected {}", rec.len(), header.len()),
            });
        }
        let label_code: u8 = parse_field(&rec, 0, line, "label")?;
        let label = LosLabel::from_code(label_code).ok_or_else(|| ChannelError::Parse {
            line,
            msg: format!("label {label_code}"),
        })?;
        let pose = match rec.get(1).map(str::trim) {
            Some("") | None => None,
            Some(_) => {
                let code: u8 = parse_field(&rec, 1, line, "pose")?;
                Some(Pose::from_code(code).ok_or_else(|| ChannelError::Parse {
                    line,
                    msg: format!("pose {code}"),
                })?)
            }
        };
        let diagnostics = Diagnostics {
            fp_index: parse_field(&rec, 2, line, "fp_index")?,
            fp_ampl: [
                parse_field(&rec, 3, line, "fp_ampl1")?,
                parse_field(&rec, 4, line, "fp_ampl2")?,
                parse_field(&rec, 5, line, "fp_ampl3")?,
            ],
            max_noise: parse_field(&rec, 6, line, "max_noise")?,
            std_noise: parse_field(&rec, 7, line, "std_noise")?,
        };
        let magnitudes = (0..CIR_LEN)
            .map(|i| parse_field(&rec, 8 + i, line, "cir"))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(CirRow {
            label,
            pose,
            diagnostics,
            magnitudes,
        });
    }
    Ok(rows)
}

pub fn read_cir_file(path: &Path) -> Result<Vec<CirRow>> {
    read_cir_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn magnitude_examples() {
        assert_eq!(magnitude(ComplexSample::new(3, 4)), 5.0);
        assert_eq!(magnitude(ComplexSample::new(0, 0)), 0.0);
        assert_eq!(magnitude(ComplexSample::new(-32768, 0)), 32768.0);
    }

    #[test]
    fn pure_noise_has_no_first_path() {
        let samples = vec![ComplexSample::new(100, -100); CIR_LEN];
        assert!(matches!(
            compute_diagnostics(&samples, DEFAULT_NOISE_WINDOW),
            Err(ChannelError::NoFirstPath(_))
        ));
    }

    #[test]
    fn spike_at_747_is_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut samples: Vec<ComplexSample> = (0..CIR_LEN)
            .map(|_| ComplexSample::new(rng.random_range(-900..900), rng.random_range(-900..900)))
            .collect();
        let max_noise = samples[..600].iter().map(|&s| magnitude(s)).fold(0.0, f64::max);
        // A path at 747 and its first echo sample, both well above noise.
        let peak = (5.0 * max_noise) as i16;
        samples[747] = ComplexSample::new(peak, 0);
        samples[748] = ComplexSample::new(0, (4.0 * max_noise) as i16);
        for s in &mut samples[600..747] {
            *s = ComplexSample::new(s.re / 4, s.im / 4);
        }
        let d = compute_diagnostics(&samples, DEFAULT_NOISE_WINDOW).unwrap();
        assert_eq!(d.fp_index, 747);
        assert_eq!(d.max_noise, max_noise);
        assert_eq!(d.fp_ampl[0], magnitude(samples[748]));
    }

    #[test]
    fn generated_prefix_is_noise() {
        let p = ChannelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for cond in LosLabel::ALL {
            for _ in 0..50 {
                let rec = generate_cir(cond, &p, &mut rng).unwrap();
                let d = rec.diagnostics;
                assert_eq!(rec.samples.len(), CIR_LEN);
                assert!(d.max_noise >= d.std_noise);
                let mags = rec.magnitudes();
                assert!(mags[..d.fp_index - 1].iter().all(|&m| m <= d.max_noise));
                assert_eq!(d.fp_ampl[2], mags[d.fp_index + 3]);
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let p = ChannelParams::default();
        let a = generate_cir(LosLabel::Nlos, &p, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = generate_cir(LosLabel::Nlos, &p, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn params_validation() {
        let mut p = ChannelParams::default();
        p.nlos_peak_snr = (1.5, 6.0);
        assert!(p.validate().is_err());
        let mut p = ChannelParams::default();
        p.noise_scale = 0.0;
        assert!(p.validate().is_err());
        assert!(ChannelParams::default().validate().is_ok());
    }

    #[test]
    fn saturation_is_flagged() {
        let p = ChannelParams {
            noise_scale: 9000.0,
            ..ChannelParams::default()
        };
        let rec = generate_cir(LosLabel::Los, &p, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(rec.saturated);
    }

    #[test]
    fn csv_roundtrip() {
        let p = ChannelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<CirRow> = Pose::ALL
            .iter()
            .map(|&pose| generate_for_pose(pose, &p, &mut rng).unwrap().to_row().unwrap())
            .collect();
        let mut w = CirCsvWriter::new(Vec::new()).unwrap();
        for r in &rows {
            w.write_row(r).unwrap();
        }
        let bytes = w.finish().unwrap();
        let back = read_cir_csv(bytes.as_slice()).unwrap();
        let expected: Vec<CirRow> = rows.iter().map(round_row).collect();
        assert_eq!(back, expected);
    }
}
