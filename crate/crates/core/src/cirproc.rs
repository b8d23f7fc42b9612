//! Effective-CIR extraction and the board-to-host transfer latency model.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{CirRecord, CIR_LEN};

/// Taps in the effective CIR.
pub const ECIR_LEN: usize = 135;
/// Taps kept before the first path.
pub const ECIR_MARGIN: usize = 5;
/// Channel diagnostics counted as sample-equivalent units in a full transfer.
pub const DIAGNOSTIC_UNITS: usize = 8;

#[derive(Debug, Error)]
pub enum CirProcError {
    #[error("window [{start}, {end}) does not fit a {CIR_LEN}-tap record")]
    TruncatedWindow { start: i64, end: i64 },
    #[error("latency model defined for n ≥ {min}, got {got}")]
    OutOfDomain { min: f64, got: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CirProcError>;

/// 135 magnitudes starting five taps before the first path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ecir {
    pub values: Vec<f64>,
    pub origin_index: usize,
}

impl Ecir {
    /// Writes the window back into a zeroed full-length magnitude array.
    pub fn embed(&self) -> Vec<f64> {
        let mut full = vec![0.0; CIR_LEN];
        full[self.origin_index..self.origin_index + ECIR_LEN].copy_from_slice(&self.values);
        full
    }

    /// `origin_index` followed by the magnitudes.
    pub fn write_csv_row<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "{}", self.origin_index)?;
        for v in &self.values {
            write!(out, ",{}", crate::channel::format_value(*v))?;
        }
        writeln!(out)?;
        Ok(())
    }
}

pub fn extract_ecir(record: &CirRecord) -> Result<Ecir> {
    extract_ecir_from_magnitudes(&record.magnitudes(), record.diagnostics.fp_index)
}

pub fn extract_ecir_from_magnitudes(mags: &[f64], fp_index: usize) -> Result<Ecir> {
    let start = fp_index as i64 - ECIR_MARGIN as i64;
    let end = start + ECIR_LEN as i64;
    if start < 0 || end > mags.len() as i64 || mags.len() != CIR_LEN {
        return Err(CirProcError::TruncatedWindow { start, end });
    }
    let origin = start as usize;
    Ok(Ecir {
        values: mags[origin..origin + ECIR_LEN].to_vec(),
        origin_index: origin,
    })
}

/// Affine transfer time through two measured operating points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub full_ms: f64,
    pub ecir_ms: f64,
    pub full_units: usize,
    pub ecir_units: usize,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            full_ms: 223.4,
            ecir_ms: 17.8,
            full_units: CIR_LEN + DIAGNOSTIC_UNITS,
            ecir_units: ECIR_LEN,
        }
    }
}

impl LatencyModel {
    pub fn slope_ms_per_unit(&self) -> f64 {
        (self.full_ms - self.ecir_ms) / (self.full_units - self.ecir_units) as f64
    }
}

/// Latency for `n_units` transferred units; exact at both calibration points.
pub fn transfer_latency(n_units: f64, model: &LatencyModel) -> Result<f64> {
    let min = model.ecir_units as f64;
    if !(n_units >= min) {
        return Err(CirProcError::OutOfDomain { min, got: n_units });
    }
    if n_units == model.full_units as f64 {
        return Ok(model.full_ms);
    }
    Ok(model.ecir_ms + (n_units - min) * model.slope_ms_per_unit())
}

/// True iff a transfer finishes strictly within one ranging interval.
pub fn meets_realtime(latency_ms: f64, ranging_interval_ms: f64) -> bool {
    latency_ms < ranging_interval_ms
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_cir, magnitude, ChannelParams, ComplexSample, Diagnostics};
    use crate::models::LosLabel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record_with_fp(fp: usize) -> CirRecord {
        CirRecord {
            samples: (0..CIR_LEN).map(|i| ComplexSample::new(i as i16, 0)).collect(),
            diagnostics: Diagnostics {
                fp_index: fp,
                fp_ampl: [0.0; 3],
                max_noise: 1.0,
                std_noise: 0.0,
            },
            label: None,
            pose: None,
            saturated: false,
        }
    }

    #[test]
    fn window_at_747() {
        let e = extract_ecir(&record_with_fp(747)).unwrap();
        assert_eq!(e.origin_index, 742);
        assert_eq!(e.values.len(), ECIR_LEN);
        assert_eq!(e.values[0], 742.0);
        assert_eq!(*e.values.last().unwrap(), 876.0);
    }

    #[test]
    fn truncated_windows() {
        assert!(matches!(
            extract_ecir(&record_with_fp(4)),
            Err(CirProcError::TruncatedWindow { .. })
        ));
        assert!(extract_ecir(&record_with_fp(5)).is_ok());
        assert!(extract_ecir(&record_with_fp(CIR_LEN - ECIR_LEN + 5)).is_ok());
        assert!(extract_ecir(&record_with_fp(CIR_LEN - ECIR_LEN + 6)).is_err());
    }

    #[test]
    fn los_window_peaks_at_first_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rec = generate_cir(LosLabel::Los, &ChannelParams::default(), &mut rng).unwrap();
        let e = extract_ecir(&rec).unwrap();
        let fp = rec.diagnostics.fp_index;
        assert_eq!(e.values[5], magnitude(rec.samples[fp]));
        let max = e.values.iter().copied().fold(0.0, f64::max);
        assert!(e.values[5] >= 0.7 * max);
    }

    #[test]
    fn latency_points() {
        let m = LatencyModel::default();
        assert_eq!(transfer_latency(135.0, &m).unwrap(), 17.8);
        assert_eq!(transfer_latency(1024.0, &m).unwrap(), 223.4);
        assert!((transfer_latency(579.5, &m).unwrap() - 120.6).abs() < 1e-9);
        assert!(transfer_latency(134.0, &m).is_err());
    }

    #[test]
    fn realtime_boundary() {
        assert!(meets_realtime(17.8, 200.0));
        assert!(!meets_realtime(223.4, 200.0));
        assert!(!meets_realtime(200.0, 200.0));
    }

    #[test]
    fn csv_row() {
        let e = Ecir {
            values: vec![1.5; ECIR_LEN],
            origin_index: 3,
        };
        let mut buf = Vec::new();
        e.write_csv_row(&mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        assert_eq!(fields.len(), ECIR_LEN + 1);
        assert_eq!(fields[0], "3");
        assert_eq!(fields[1], "1.5");
    }
}
