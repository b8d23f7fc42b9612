//! Synthetic dataset generation and train/test splitting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::channel::{generate_for_pose, ChannelParams, CirCsvWriter, CirRow};
use crate::cirproc::extract_ecir_from_magnitudes;
use crate::imusim::{sliding_windows, GaitParams, ImuGenerator, ImuRow, ImuSample, FEATURES, IMU_INTERVAL_MS, WINDOW_LEN};
use crate::models::{LosLabel, Pose};

pub const CIR_FILE: &str = "cir.csv";
pub const IMU_FILE: &str = "imu.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_FRACTION: f64 = 0.8;

const CIR_STREAM: u64 = 1;
const IMU_STREAM: u64 = 2;

/// Independent generator stream `index` of family `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetCounts {
    pub cir_per_pose: usize,
    pub imu_per_pose: usize,
}

impl Default for DatasetCounts {
    fn default() -> Self {
        Self {
            cir_per_pose: 2000,
            imu_per_pose: 6600,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic,
    Imported,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_los: usize,
    pub n_nlos: usize,
    pub n_per_pose: usize,
    pub n_imu_per_pose: usize,
    pub split: (f64, f64),
    pub source: DatasetSource,
    pub seed: u64,
    pub channel: ChannelParams,
    pub gait: GaitParams,
}

/// `counts.cir_per_pose` records per pose, grouped by pose in code order.
/// Record `i` of pose `p` has its own generator stream, so the output does
/// not depend on generation order.
pub fn generate_cir_rows(per_pose: usize, params: &ChannelParams, seed: u64) -> Result<Vec<CirRow>> {
    let mut rows = Vec::with_capacity(per_pose * Pose::ALL.len());
    for pose in Pose::ALL {
        for i in 0..per_pose {
            let mut rng = stream_rng(seed, CIR_STREAM, pose.code() as u64 * per_pose as u64 + i as u64);
            let rec = generate_for_pose(pose, params, &mut rng)?;
            rows.push(rec.to_row().expect("generated records are labelled"));
        }
    }
    Ok(rows)
}

/// Samples per recorded walk in the IMU dataset (13.2 s).
pub const IMU_SEGMENT_LEN: usize = 220;

/// `per_pose` samples for each pose, recorded as consecutive walks of
/// [`IMU_SEGMENT_LEN`] samples. Every walk starts a fresh generator, so gait
/// phases differ between walks; timestamps restart at 60 ms.
pub fn generate_imu_rows(per_pose: usize, params: &GaitParams, seed: u64) -> Result<Vec<ImuRow>> {
    let mut rows = Vec::with_capacity(per_pose * Pose::ALL.len());
    for pose in Pose::ALL {
        for (segment, start) in (0..per_pose).step_by(IMU_SEGMENT_LEN).enumerate() {
            let mut rng = stream_rng(seed, IMU_STREAM, ((pose.code() as u64) << 32) | segment as u64);
            let generator = ImuGenerator::new(params.clone(), &mut rng)?;
            for k in 1..=IMU_SEGMENT_LEN.min(per_pose - start) {
                let sample = generator.sample(pose, k as f64 * IMU_INTERVAL_MS, &mut rng);
                rows.push(ImuRow { sample, pose });
            }
        }
    }
    Ok(rows)
}

/// Writes `cir.csv`, `imu.csv` and `manifest.json` into `dir`.
pub fn generate_datasets(
    counts: DatasetCounts,
    channel: &ChannelParams,
    gait: &GaitParams,
    seed: u64,
    dir: &Path,
) -> Result<DatasetManifest> {
    if counts.cir_per_pose == 0 || counts.imu_per_pose < WINDOW_LEN {
        return Err(HarnessError::Invalid(format!(
            "need ≥ 1 CIR record and ≥ {WINDOW_LEN} IMU samples per pose, got {counts:?}"
        )));
    }
    channel.validate()?;
    gait.validate()?;
    std::fs::create_dir_all(dir)?;

    let rows = generate_cir_rows(counts.cir_per_pose, channel, seed)?;
    let mut writer = CirCsvWriter::new(BufWriter::new(File::create(dir.join(CIR_FILE))?))?;
    for r in &rows {
        writer.write_row(r)?;
    }
    writer.finish()?.flush()?;

    let imu = generate_imu_rows(counts.imu_per_pose, gait, seed)?;
    let mut out = BufWriter::new(File::create(dir.join(IMU_FILE))?);
    crate::imusim::write_imu_csv(&imu, &mut out)?;
    out.flush()?;

    let n_los = rows.iter().filter(|r| r.label == LosLabel::Los).count();
    let manifest = DatasetManifest {
        n_los,
        n_nlos: rows.len() - n_los,
        n_per_pose: counts.cir_per_pose,
        n_imu_per_pose: counts.imu_per_pose,
        split: (TRAIN_FRACTION, 1.0 - TRAIN_FRACTION),
        source: DatasetSource::Synthetic,
        seed,
        channel: channel.clone(),
        gait: gait.clone(),
    };
    let mut f = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    writeln!(f)?;
    f.flush()?;
    Ok(manifest)
}

/// Stream key of a row: its pose, or its label for pose-less rows.
fn group_key(row: &CirRow) -> (u8, u8) {
    match row.pose {
        Some(p) => (0, p.code()),
        None => (1, row.label.code()),
    }
}

/// Splits rows per pose (per label when the pose is unknown): the first
/// 80 % of each group, in file order, train; the rest test.
pub fn split_cir_rows(rows: Vec<CirRow>) -> (Vec<CirRow>, Vec<CirRow>) {
    let mut totals = std::collections::BTreeMap::new();
    for r in &rows {
        *totals.entry(group_key(r)).or_insert(0usize) += 1;
    }
    let mut seen = std::collections::BTreeMap::new();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for r in rows {
        let key = group_key(&r);
        let idx = seen.entry(key).or_insert(0usize);
        let cut = (totals[&key] as f64 * TRAIN_FRACTION).round() as usize;
        if *idx < cut {
            train.push(r);
        } else {
            test.push(r);
        }
        *idx += 1;
    }
    (train, test)
}

/// Classifier input for one row: eCIR magnitudes, noise ceiling, label.
pub fn ecir_example(row: &CirRow) -> Result<(Vec<f64>, f64, LosLabel)> {
    let e = extract_ecir_from_magnitudes(&row.magnitudes, row.diagnostics.fp_index)?;
    Ok((e.values, row.diagnostics.max_noise, row.label))
}

/// Same, over the full magnitude vector.
pub fn full_example(row: &CirRow) -> (Vec<f64>, f64, LosLabel) {
    (row.magnitudes.clone(), row.diagnostics.max_noise, row.label)
}

/// Contiguous per-pose traces in file order. A trace ends when the pose
/// changes or time stops increasing.
pub fn imu_traces(rows: &[ImuRow]) -> Vec<(Pose, Vec<ImuSample>)> {
    let mut traces: Vec<(Pose, Vec<ImuSample>)> = Vec::new();
    for r in rows {
        match traces.last_mut() {
            Some((pose, trace)) if *pose == r.pose && trace.last().is_some_and(|s| s.t_ms < r.sample.t_ms) => {
                trace.push(r.sample)
            }
            _ => traces.push((r.pose, vec![r.sample])),
        }
    }
    traces
}

pub type Window = [[f64; FEATURES]; WINDOW_LEN];

/// Windows of one pose, split by time: the first 80 % of each trace feeds
/// training windows and the last 20 % test windows, so no window straddles
/// the two sets.
#[derive(Clone, Debug, Default)]
pub struct PoseWindows {
    pub train: Vec<(Pose, Window)>,
    pub test: Vec<(Pose, Window)>,
}

pub fn split_imu_windows(rows: &[ImuRow]) -> PoseWindows {
    let mut out = PoseWindows::default();
    for (pose, trace) in imu_traces(rows) {
        let cut = (trace.len() as f64 * TRAIN_FRACTION).round() as usize;
        out.train
            .extend(sliding_windows(&trace[..cut]).into_iter().map(|w| (pose, w)));
        out.test
            .extend(sliding_windows(&trace[cut..]).into_iter().map(|w| (pose, w)));
    }
    out
}

/// Windows and pocket labels for one branch.
pub fn branch_examples(windows: &[(Pose, Window)], branch: LosLabel) -> (Vec<Window>, Vec<bool>) {
    windows
        .iter()
        .filter(|(p, _)| p.los_label() == branch)
        .map(|(p, w)| (*w, p.in_pocket()))
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counts() {
        let c = DatasetCounts::default();
        assert_eq!(c.cir_per_pose * 4, 8000);
        assert_eq!(c.imu_per_pose * 4, 26_400);
    }

    #[test]
    fn split_is_disjoint_and_balanced() {
        let rows = generate_cir_rows(10, &ChannelParams::default(), 1).unwrap();
        let (train, test) = split_cir_rows(rows.clone());
        assert_eq!(train.len(), 32);
        assert_eq!(test.len(), 8);
        for pose in Pose::ALL {
            assert_eq!(test.iter().filter(|r| r.pose == Some(pose)).count(), 2);
        }
        for t in &test {
            assert!(!train.contains(t));
        }
    }

    #[test]
    fn imu_split_windows() {
        let rows = generate_imu_rows(100, &GaitParams::default(), 2).unwrap();
        let w = split_imu_windows(&rows);
        // One walk of 100 samples per pose: 80 + 20 give 63 and 3 windows.
        assert_eq!(w.train.len(), 4 * 63);
        assert_eq!(w.test.len(), 4 * 3);
        let (x, y) = branch_examples(&w.train, LosLabel::Nlos);
        assert_eq!(x.len(), 126);
        assert_eq!(y.iter().filter(|&&p| p).count(), 63);
    }

    #[test]
    fn imu_rows_are_segmented_walks() {
        let rows = generate_imu_rows(500, &GaitParams::default(), 3).unwrap();
        assert_eq!(rows.len(), 2000);
        let traces = imu_traces(&rows);
        let lens: Vec<usize> = traces.iter().filter(|(p, _)| *p == Pose::Back).map(|(_, t)| t.len()).collect();
        assert_eq!(lens, [220, 220, 60]);
    }

    #[test]
    fn generation_is_deterministic() {
        let p = ChannelParams::default();
        let a = generate_cir_rows(3, &p, 9).unwrap();
        let b = generate_cir_rows(3, &p, 9).unwrap();
        assert_eq!(a, b);
    }
}
