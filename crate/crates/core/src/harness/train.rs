//! Training entry points over dataset rows.

use std::collections::BTreeMap;

use utgpose_neural::{TrainConfig, TrainReport};

use super::dataset::{branch_examples, ecir_example, full_example, Window};
use super::Result;
use crate::channel::CirRow;
use crate::models::{
    train_cir_classifier, train_pose_detector_with_stats, FeatureStats, LosClassifier, LosLabel, Pose, PoseDetector,
};

/// Keeps the first `limit` rows of each pose group (label group for rows
/// without a pose), in order.
pub fn limit_cir_rows(rows: &[CirRow], limit: Option<usize>) -> Vec<CirRow> {
    let Some(limit) = limit else {
        return rows.to_vec();
    };
    let mut seen: BTreeMap<(Option<Pose>, LosLabel), usize> = BTreeMap::new();
    rows.iter()
        .filter(|r| {
            let n = seen.entry((r.pose, r.label)).or_default();
            *n += 1;
            *n <= limit
        })
        .cloned()
        .collect()
}

pub fn limit_windows(windows: &[(Pose, Window)], limit: Option<usize>) -> Vec<(Pose, Window)> {
    let Some(limit) = limit else {
        return windows.to_vec();
    };
    let mut seen: BTreeMap<Pose, usize> = BTreeMap::new();
    windows
        .iter()
        .filter(|(p, _)| {
            let n = seen.entry(*p).or_default();
            *n += 1;
            *n <= limit
        })
        .copied()
        .collect()
}

/// What the CIR classifier sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CirInput {
    /// The 135-tap window around the first path.
    Ecir,
    /// All 1016 magnitudes.
    Full,
}

pub fn train_los(rows: &[CirRow], input: CirInput, cfg: &TrainConfig) -> Result<(LosClassifier, TrainReport)> {
    let examples = match input {
        CirInput::Ecir => rows.iter().map(ecir_example).collect::<Result<Vec<_>>>()?,
        CirInput::Full => rows.iter().map(full_example).collect(),
    };
    log::info!("training CIR classifier on {} examples", examples.len());
    Ok(train_cir_classifier(&examples, cfg, cfg.seed)?)
}

/// Trains both branches; each sees only the windows of its own two poses.
/// Feature statistics come from all windows, so a detector meeting the other
/// branch's poses during a transition still sees inputs on its own scale.
pub fn train_pose(windows: &[(Pose, Window)], cfg: &TrainConfig) -> Result<[(PoseDetector, TrainReport); 2]> {
    let all: Vec<Window> = windows.iter().map(|(_, w)| *w).collect();
    let stats = FeatureStats::fit(&all);
    let branch = |label: LosLabel| -> Result<(PoseDetector, TrainReport)> {
        let (x, y) = branch_examples(windows, label);
        log::info!("training {label} pose detector on {} windows", x.len());
        Ok(train_pose_detector_with_stats(label, &x, &y, stats.clone(), cfg, cfg.seed)?)
    };
    Ok([branch(LosLabel::Los)?, branch(LosLabel::Nlos)?])
}

/// Fraction of rows whose thresholded probability matches the label.
pub fn raw_accuracy(model: &LosClassifier, rows: &[CirRow], input: CirInput) -> Result<f64> {
    let mut correct = 0;
    for r in rows {
        let (mags, noise, label) = match input {
            CirInput::Ecir => ecir_example(r)?,
            CirInput::Full => full_example(r),
        };
        correct += (LosLabel::from_probability(model.probability(&mags, noise)?) == label) as usize;
    }
    Ok(correct as f64 / rows.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelParams;
    use crate::harness::dataset::generate_cir_rows;

    #[test]
    fn limit_keeps_first_of_each_group() {
        let rows = generate_cir_rows(5, &ChannelParams::default(), 1).unwrap();
        let kept = limit_cir_rows(&rows, Some(2));
        assert_eq!(kept.len(), 8);
        for pose in Pose::ALL {
            let first: Vec<_> = rows.iter().filter(|r| r.pose == Some(pose)).take(2).collect();
            let got: Vec<_> = kept.iter().filter(|r| r.pose == Some(pose)).collect();
            assert_eq!(first, got);
        }
        assert_eq!(limit_cir_rows(&rows, None).len(), 20);
    }
}
