//! Import of externally recorded CIR corpora into the native row format.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::channel::{compute_diagnostics_from_magnitudes, CirRow, Diagnostics, CIR_LEN};
use crate::models::{LosLabel, Pose};

/// Column mapping of a CIR corpus. Diagnostics columns are optional; any
/// diagnostic that is unmapped or empty in a row is recomputed from the
/// magnitudes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaConfig {
    /// 0 = LOS, 1 = NLOS.
    pub label: String,
    /// Pose code 0–3, may be empty.
    pub pose: Option<String>,
    pub fp_index: Option<String>,
    pub fp_ampl: Option<[String; 3]>,
    pub max_noise: Option<String>,
    pub std_noise: Option<String>,
    /// Magnitude columns are `{cir_prefix}0 ..`.
    pub cir_prefix: String,
    /// Taps used when recomputing noise statistics.
    pub noise_window: (usize, usize),
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            label: "label".into(),
            pose: Some("pose".into()),
            fp_index: Some("fp_index".into()),
            fp_ampl: Some(["fp_ampl1".into(), "fp_ampl2".into(), "fp_ampl3".into()]),
            max_noise: Some("max_noise".into()),
            std_noise: Some("std_noise".into()),
            cir_prefix: "cir".into(),
            noise_window: (0, 600),
        }
    }
}

impl SchemaConfig {
    /// Upper-case layout used by the public multi-site LOS/NLOS recordings.
    pub fn public_corpus() -> Self {
        Self {
            label: "NLOS".into(),
            pose: None,
            fp_index: Some("FP_IDX".into()),
            fp_ampl: Some(["FP_AMP1".into(), "FP_AMP2".into(), "FP_AMP3".into()]),
            max_noise: Some("MAX_NOISE".into()),
            std_noise: Some("STDEV_NOISE".into()),
            cir_prefix: "CIR".into(),
            noise_window: (0, 600),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportStats {
    pub rows_read: usize,
    pub imported: usize,
    /// Imported rows with at least one recomputed diagnostic.
    pub healed: usize,
    pub skipped: usize,
    pub skip_reasons: BTreeMap<String, usize>,
}

struct Columns {
    label: usize,
    pose: Option<usize>,
    fp_index: Option<usize>,
    fp_ampl: Option<[usize; 3]>,
    max_noise: Option<usize>,
    std_noise: Option<usize>,
    cir: Vec<usize>,
}

fn resolve(header: &csv::StringRecord, schema: &SchemaConfig) -> Result<Columns> {
    let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let required = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| HarnessError::UnmappedColumn(name.to_string()))
    };
    let optional = |name: &Option<String>| name.as_deref().and_then(|n| index.get(n).copied());
    let cir = (0..CIR_LEN)
        .map(|i| required(&format!("{}{i}", schema.cir_prefix)))
        .collect::<Result<Vec<_>>>()?;
    let fp_ampl = schema.fp_ampl.as_ref().and_then(|cols| {
        let found: Vec<usize> = cols.iter().filter_map(|c| index.get(c.as_str()).copied()).collect();
        <[usize; 3]>::try_from(found).ok()
    });
    Ok(Columns {
        label: required(&schema.label)?,
        pose: optional(&schema.pose),
        fp_index: optional(&schema.fp_index),
        fp_ampl,
        max_noise: optional(&schema.max_noise),
        std_noise: optional(&schema.std_noise),
        cir,
    })
}

enum Outcome {
    Row(CirRow, bool),
    Skip(&'static str),
}

fn cell<'a>(rec: &'a csv::StringRecord, idx: Option<usize>) -> Option<&'a str> {
    idx.and_then(|i| rec.get(i)).map(str::trim).filter(|s| !s.is_empty())
}

fn number(rec: &csv::StringRecord, idx: Option<usize>) -> Option<f64> {
    cell(rec, idx).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite())
}

fn convert(rec: &csv::StringRecord, cols: &Columns, schema: &SchemaConfig, width: usize) -> Outcome {
    if rec.len() != width {
        return Outcome::Skip("wrong field count");
    }
    let label = match number(rec, Some(cols.label)) {
        Some(v) if v == 0.0 => LosLabel::Los,
        Some(v) if v == 1.0 => LosLabel::Nlos,
        _ => return Outcome::Skip("bad label"),
    };
    let pose = match cell(rec, cols.pose) {
        None => None,
        Some(s) => match s.parse::<u8>().ok().and_then(Pose::from_code) {
            Some(p) if p.los_label() == label => Some(p),
            _ => return Outcome::Skip("bad pose"),
        },
    };
    let mut magnitudes = Vec::with_capacity(CIR_LEN);
    for &i in &cols.cir {
        match number(rec, Some(i)) {
            Some(m) if m >= 0.0 => magnitudes.push(m),
            _ => return Outcome::Skip("bad CIR value"),
        }
    }

    let fp_index = number(rec, cols.fp_index).filter(|v| v.fract() == 0.0 && *v >= 0.0).map(|v| v as usize);
    let fp_ampl = cols.fp_ampl.and_then(|c| {
        let vals: Vec<f64> = c.iter().filter_map(|&i| number(rec, Some(i))).collect();
        <[f64; 3]>::try_from(vals).ok()
    });
    let max_noise = number(rec, cols.max_noise);
    let std_noise = number(rec, cols.std_noise);

    let complete = fp_index.is_some() && fp_ampl.is_some() && max_noise.is_some() && std_noise.is_some();
    let diagnostics = if complete {
        Diagnostics {
            fp_index: fp_index.unwrap(),
            fp_ampl: fp_ampl.unwrap(),
            max_noise: max_noise.unwrap(),
            std_noise: std_noise.unwrap(),
        }
    } else {
        let window = schema.noise_window.0..schema.noise_window.1;
        let Ok(computed) = compute_diagnostics_from_magnitudes(&magnitudes, window) else {
            return Outcome::Skip("diagnostics not recoverable");
        };
        let fp = fp_index.unwrap_or(computed.fp_index);
        Diagnostics {
            fp_index: fp,
            fp_ampl: fp_ampl.unwrap_or_else(|| {
                if fp + 3 < CIR_LEN {
                    [1, 2, 3].map(|d| magnitudes[fp + d])
                } else {
                    computed.fp_ampl
                }
            }),
            max_noise: max_noise.unwrap_or(computed.max_noise),
            std_noise: std_noise.unwrap_or(computed.std_noise),
        }
    };
    if diagnostics.fp_index + 3 >= CIR_LEN || diagnostics.max_noise <= 0.0 {
        return Outcome::Skip("diagnostics out of range");
    }
    Outcome::Row(
        CirRow {
            label,
            pose,
            diagnostics,
            magnitudes,
        },
        !complete,
    )
}

/// Streams every valid row of `input` into `sink`. Invalid rows are
/// counted and skipped; a missing label or CIR column fails the import.
pub fn import_cir_reader<R: Read>(
    input: R,
    schema: &SchemaConfig,
    mut sink: impl FnMut(CirRow) -> Result<()>,
) -> Result<ImportStats> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(input);
    let header = reader.headers()?.clone();
    let cols = resolve(&header, schema)?;
    let mut stats = ImportStats::default();
    let mut rec = csv::StringRecord::new();
    while reader.read_record(&mut rec)? {
        stats.rows_read += 1;
        match convert(&rec, &cols, schema, header.len()) {
            Outcome::Row(row, healed) => {
                stats.imported += 1;
                stats.healed += healed as usize;
                sink(row)?;
            }
            Outcome::Skip(reason) => {
                stats.skipped += 1;
                *stats.skip_reasons.entry(reason.to_string()).or_default() += 1;
            }
        }
    }
    if stats.skipped > 0 {
        log::warn!("skipped {} of {} rows: {:?}", stats.skipped, stats.rows_read, stats.skip_reasons);
    }
    Ok(stats)
}

pub fn import_cir_corpus(path: &Path, schema: &SchemaConfig, sink: impl FnMut(CirRow) -> Result<()>) -> Result<ImportStats> {
    let file = std::fs::File::open(path)?;
    import_cir_reader(std::io::BufReader::new(file), schema, sink)
}
