//! Accuracy bookkeeping for streamed test sets and simulated walks.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::dataset::{stream_rng, Window};
use super::walk::{PoseEstimate, TransitionStats};
use super::{HarnessError, Result};
use crate::channel::CirRow;
use crate::cirproc::extract_ecir_from_magnitudes;
use crate::models::{decide_pose, smooth_decision, EwmaState, LosLabel, ModelBundle, Pose};

/// Correct-decision counts of one test group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub n: usize,
    pub los: usize,
    pub los_no_lpf: usize,
    pub pose: usize,
    pub pose_no_lpf: usize,
    /// Decisions for which a pose was predicted at all.
    pub n_pose: usize,
}

impl Tally {
    fn ratio(num: usize, den: usize) -> Option<f64> {
        (den > 0).then(|| num as f64 / den as f64)
    }

    fn add(&mut self, other: &Tally) {
        self.n += other.n;
        self.los += other.los;
        self.los_no_lpf += other.los_no_lpf;
        self.pose += other.pose;
        self.pose_no_lpf += other.pose_no_lpf;
        self.n_pose += other.n_pose;
    }
}

/// Accuracies of one group: a pose, or a label for rows without a pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub pose: Option<Pose>,
    pub label: LosLabel,
    pub n: usize,
    pub los_accuracy: f64,
    pub los_accuracy_no_lpf: f64,
    pub pose_accuracy: Option<f64>,
    pub pose_accuracy_no_lpf: Option<f64>,
}

impl GroupAccuracy {
    pub fn name(&self) -> String {
        match self.pose {
            Some(p) => p.name().to_string(),
            None => format!("{} (no pose)", self.label),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `"test-set"` or `"walks"`.
    pub source: String,
    pub groups: Vec<GroupAccuracy>,
    pub los_accuracy: f64,
    pub los_accuracy_no_lpf: f64,
    pub pose_accuracy: Option<f64>,
    pub pose_accuracy_no_lpf: Option<f64>,
    /// Fraction of walks whose most frequent pose estimate is the true pose.
    pub majority_vote_accuracy: Option<f64>,
    /// Fraction of raw probabilities replaced by `1 − p` before smoothing.
    pub outlier_rate: f64,
    pub transitions: Vec<TransitionStats>,
}

impl EvalReport {
    pub fn from_tallies(source: &str, tallies: &BTreeMap<(Option<Pose>, LosLabel), Tally>, outlier_rate: f64) -> Result<Self> {
        let mut total = Tally::default();
        let groups = tallies
            .iter()
            .map(|(&(pose, label), t)| {
                total.add(t);
                GroupAccuracy {
                    pose,
                    label,
                    n: t.n,
                    los_accuracy: t.los as f64 / t.n as f64,
                    los_accuracy_no_lpf: t.los_no_lpf as f64 / t.n as f64,
                    pose_accuracy: Tally::ratio(t.pose, t.n_pose),
                    pose_accuracy_no_lpf: Tally::ratio(t.pose_no_lpf, t.n_pose),
                }
            })
            .collect();
        if total.n == 0 {
            return Err(HarnessError::Invalid("empty test set".into()));
        }
        Ok(Self {
            source: source.to_string(),
            groups,
            los_accuracy: total.los as f64 / total.n as f64,
            los_accuracy_no_lpf: total.los_no_lpf as f64 / total.n as f64,
            pose_accuracy: Tally::ratio(total.pose, total.n_pose),
            pose_accuracy_no_lpf: Tally::ratio(total.pose_no_lpf, total.n_pose),
            majority_vote_accuracy: None,
            outlier_rate,
            transitions: Vec::new(),
        })
    }

    pub fn group(&self, pose: Pose) -> Option<&GroupAccuracy> {
        self.groups.iter().find(|g| g.pose == Some(pose))
    }

    /// Plain-text table.
    pub fn table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.3}", v));
        let mut s = String::new();
        let _ = writeln!(s, "source: {}   outlier rate: {:.2}", self.source, self.outlier_rate);
        let _ = writeln!(
            s,
            "{:<16} {:>6} {:>9} {:>9} {:>9} {:>9}",
            "group", "n", "los", "los_raw", "pose", "pose_raw"
        );
        for g in &self.groups {
            let _ = writeln!(
                s,
                "{:<16} {:>6} {:>9.3} {:>9.3} {:>9} {:>9}",
                g.name(),
                g.n,
                g.los_accuracy,
                g.los_accuracy_no_lpf,
                pct(g.pose_accuracy),
                pct(g.pose_accuracy_no_lpf)
            );
        }
        let n: usize = self.groups.iter().map(|g| g.n).sum();
        let _ = writeln!(
            s,
            "{:<16} {:>6} {:>9.3} {:>9.3} {:>9} {:>9}",
            "overall",
            n,
            self.los_accuracy,
            self.los_accuracy_no_lpf,
            pct(self.pose_accuracy),
            pct(self.pose_accuracy_no_lpf)
        );
        if let Some(m) = self.majority_vote_accuracy {
            let _ = writeln!(s, "per-walk majority-vote pose accuracy: {m:.3}");
        }
        if !self.transitions.is_empty() {
            let _ = writeln!(s, "\ntransition delay (ms)");
            let _ = writeln!(s, "{:<10} {:<10} {:>8} {:>8} {:>5} {:>9}", "from", "to", "mean", "std", "n", "censored");
            for t in &self.transitions {
                let _ = writeln!(
                    s,
                    "{:<10} {:<10} {:>8.1} {:>8.1} {:>5} {:>9}",
                    t.from.name(),
                    t.to.name(),
                    t.mean_ms,
                    t.std_ms,
                    t.n,
                    t.censored
                );
            }
        }
        s
    }
}

/// Replaces `round(rate·n)` randomly chosen probabilities by `1 − p`.
pub fn inject_outliers(probs: &mut [f64], rate: f64, seed: u64, stream: u64) {
    if rate <= 0.0 || probs.is_empty() {
        return;
    }
    let k = ((rate * probs.len() as f64).round() as usize).min(probs.len());
    let mut rng = stream_rng(seed, 40 + stream, 0);
    for i in sample(&mut rng, probs.len(), k) {
        probs[i] = 1.0 - probs[i];
    }
}

/// Options of [`evaluate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    pub outlier_rate: f64,
    pub seed: u64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            outlier_rate: 0.0,
            seed: 0,
        }
    }
}

/// Streams each test group through the classifier and a fresh filter, in
/// file order. Rows with a pose are paired with that pose's test windows
/// (cycled) to score the two-stage pipeline. `raw_override`, when given,
/// supplies P(NLOS) per row instead of the network.
pub fn evaluate(
    bundle: &ModelBundle,
    rows: &[CirRow],
    windows: &[(Pose, Window)],
    params: &EvalParams,
) -> Result<EvalReport> {
    let mut probs = Vec::with_capacity(rows.len());
    for r in rows {
        let e = extract_ecir_from_magnitudes(&r.magnitudes, r.diagnostics.fp_index)?;
        probs.push(bundle.los.probability(&e.values, r.diagnostics.max_noise)?);
    }
    evaluate_probabilities(rows, &probs, windows, params, bundle.los.alpha, |branch, w| {
        Ok(bundle.detector(branch).probability(w)?)
    })
}

/// [`evaluate`] over precomputed P(NLOS) values and a pose-probability
/// callback.
pub fn evaluate_probabilities(
    rows: &[CirRow],
    probs: &[f64],
    windows: &[(Pose, Window)],
    params: &EvalParams,
    alpha: f64,
    mut p_pocket: impl FnMut(LosLabel, &Window) -> Result<f64>,
) -> Result<EvalReport> {
    if rows.is_empty() || rows.len() != probs.len() {
        return Err(HarnessError::Invalid(format!("{} rows for {} probabilities", rows.len(), probs.len())));
    }
    let mut streams: BTreeMap<(Option<Pose>, LosLabel), Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        streams.entry((r.pose, r.label)).or_default().push(i);
    }
    let mut by_pose: BTreeMap<Pose, Vec<&Window>> = BTreeMap::new();
    for (p, w) in windows {
        by_pose.entry(*p).or_default().push(w);
    }

    let mut tallies = BTreeMap::new();
    for (stream_no, (&(pose, truth), idx)) in streams.iter().enumerate() {
        let mut raw: Vec<f64> = idx.iter().map(|&i| probs[i]).collect();
        inject_outliers(&mut raw, params.outlier_rate, params.seed, stream_no as u64);
        let pose_windows = pose.and_then(|p| by_pose.get(&p)).filter(|w| !w.is_empty());
        let mut state = EwmaState::new(alpha)?;
        let mut t = Tally::default();
        for (k, &p) in raw.iter().enumerate() {
            let (decision, next) = smooth_decision(p, state)?;
            state = next;
            let raw_label = LosLabel::from_probability(p);
            t.n += 1;
            t.los += (decision.label == truth) as usize;
            t.los_no_lpf += (raw_label == truth) as usize;
            if let (Some(true_pose), Some(ws)) = (pose, pose_windows) {
                let w = ws[k % ws.len()];
                let smoothed_pose = decide_pose(decision.label, p_pocket(decision.label, w)?);
                let raw_pose = decide_pose(raw_label, p_pocket(raw_label, w)?);
                t.n_pose += 1;
                t.pose += (smoothed_pose == true_pose) as usize;
                t.pose_no_lpf += (raw_pose == true_pose) as usize;
            }
        }
        tallies.insert((pose, truth), t);
    }
    EvalReport::from_tallies("test-set", &tallies, params.outlier_rate)
}

/// Accuracy of single-pose walks, scored per ranging event, plus the
/// per-walk majority vote.
pub fn evaluate_walks(walks: &[(Pose, Vec<PoseEstimate>)]) -> Result<EvalReport> {
    let mut tallies: BTreeMap<(Option<Pose>, LosLabel), Tally> = BTreeMap::new();
    let mut majority_hits = 0;
    for (truth, estimates) in walks {
        let t = tallies.entry((Some(*truth), truth.los_label())).or_default();
        let mut votes: BTreeMap<Pose, usize> = BTreeMap::new();
        for e in estimates {
            t.n += 1;
            t.n_pose += 1;
            t.los += (e.los_label == truth.los_label()) as usize;
            t.los_no_lpf += (LosLabel::from_probability(e.raw_p_los) == truth.los_label()) as usize;
            t.pose += (e.pose == *truth) as usize;
            t.pose_no_lpf += (e.pose_no_lpf == *truth) as usize;
            *votes.entry(e.pose).or_default() += 1;
        }
        let winner = votes.iter().max_by_key(|(p, &c)| (c, std::cmp::Reverse(**p))).map(|(p, _)| *p);
        majority_hits += (winner == Some(*truth)) as usize;
    }
    let mut report = EvalReport::from_tallies("walks", &tallies, 0.0)?;
    report.majority_vote_accuracy = Some(majority_hits as f64 / walks.len() as f64);
    Ok(report)
}
