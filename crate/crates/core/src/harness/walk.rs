//! Event-driven simulation of a user approaching the gate.
//!
//! IMU ticks (every 60 ms) feed the sliding window; ranging ticks (every
//! 200 ms) draw a CIR for the current pose, classify it, smooth the
//! probability and pick a pose. On equal timestamps the IMU tick runs
//! first. A scheduled pose change at `t` applies to ticks strictly after
//! `t`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::stream_rng;
use super::{HarnessError, Result};
use crate::channel::{generate_for_pose, ChannelParams};
use crate::cirproc::extract_ecir;
use crate::imusim::{GaitParams, ImuGenerator, ImuWindow, IMU_INTERVAL_MS, WINDOW_LEN};
use crate::models::{decide_pose, smooth_decision, EwmaState, LosLabel, ModelBundle, Pose, DEFAULT_ALPHA};
use crate::ranging::{approach, Ranger, RangingParams};

const IMU_STREAM: u64 = 10;
const CIR_STREAM: u64 = 11;
const RANGING_STREAM: u64 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub t_ms: f64,
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkScenario {
    pub start_distance_m: f64,
    pub speed_mps: f64,
    /// Pose changes; the first entry also covers everything before it.
    pub pose_schedule: Vec<ScheduleEntry>,
    pub ranging_interval_ms: f64,
    pub imu_interval_ms: f64,
    pub duration_ms: f64,
    pub seed: u64,
}

impl Default for WalkScenario {
    fn default() -> Self {
        Self {
            start_distance_m: 4.0,
            speed_mps: 1.0,
            pose_schedule: vec![ScheduleEntry {
                t_ms: 0.0,
                pose: Pose::LosHand,
            }],
            ranging_interval_ms: 200.0,
            imu_interval_ms: IMU_INTERVAL_MS,
            duration_ms: 4000.0,
            seed: 0,
        }
    }
}

impl WalkScenario {
    pub fn single_pose(pose: Pose, duration_ms: f64, seed: u64) -> Self {
        Self {
            pose_schedule: vec![ScheduleEntry { t_ms: 0.0, pose }],
            duration_ms,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Invalid(m));
        if self.pose_schedule.is_empty() {
            return bad("pose schedule is empty".into());
        }
        if self.pose_schedule.windows(2).any(|w| !(w[1].t_ms > w[0].t_ms)) {
            return bad("pose schedule times must increase".into());
        }
        if !(self.ranging_interval_ms > 0.0 && self.imu_interval_ms > 0.0) {
            return bad("tick intervals must be positive".into());
        }
        if !(self.duration_ms > 0.0 && self.start_distance_m >= 0.0 && self.speed_mps >= 0.0) {
            return bad("duration, distance and speed must be non-negative".into());
        }
        Ok(())
    }

    /// Scheduled pose at a tick at `t_ms`.
    pub fn pose_at(&self, t_ms: f64) -> Pose {
        self.pose_schedule
            .iter()
            .rev()
            .find(|e| e.t_ms < t_ms)
            .unwrap_or(&self.pose_schedule[0])
            .pose
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TickKind {
    Imu,
    Ranging,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    pub t_ms: f64,
    pub kind: TickKind,
}

/// Both tick streams over `(0, duration]` merged in time order, IMU first
/// on ties.
pub fn merged_ticks(scenario: &WalkScenario) -> Vec<Tick> {
    let count = |interval: f64| (scenario.duration_ms / interval + 1e-9).floor() as u64;
    let (n_imu, n_rng) = (count(scenario.imu_interval_ms), count(scenario.ranging_interval_ms));
    let mut ticks = Vec::with_capacity((n_imu + n_rng) as usize);
    let (mut i, mut j) = (1u64, 1u64);
    loop {
        let t_imu = i as f64 * scenario.imu_interval_ms;
        let t_rng = j as f64 * scenario.ranging_interval_ms;
        if i <= n_imu && (j > n_rng || t_imu <= t_rng) {
            ticks.push(Tick {
                t_ms: t_imu,
                kind: TickKind::Imu,
            });
            i += 1;
        } else if j <= n_rng {
            ticks.push(Tick {
                t_ms: t_rng,
                kind: TickKind::Ranging,
            });
            j += 1;
        } else {
            break;
        }
    }
    ticks
}

/// Where the probabilities come from.
#[derive(Clone, Copy, Debug)]
pub enum Classifiers<'a> {
    Learned(&'a ModelBundle),
    /// Ground truth: P(NLOS) and P(pocket) are exactly 0 or 1.
    Oracle,
}

/// Generators shared by every walk.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkEnv {
    pub channel: ChannelParams,
    pub gait: GaitParams,
    pub ranging: RangingParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub t_ms: f64,
    /// Classifier output P(NLOS) before smoothing.
    pub raw_p_los: f64,
    pub smoothed_p_los: f64,
    pub los_label: LosLabel,
    pub pose: Pose,
    /// Pose obtained from the unsmoothed label.
    pub pose_no_lpf: Pose,
    pub distance_m: f64,
    pub true_pose: Pose,
}

fn pocket_probability(classifiers: Classifiers<'_>, branch: LosLabel, rows: &crate::harness::dataset::Window, truth: Pose) -> Result<f64> {
    Ok(match classifiers {
        Classifiers::Learned(bundle) => bundle.detector(branch).probability(rows)?,
        Classifiers::Oracle => truth.in_pocket() as u8 as f64,
    })
}

/// Runs one scenario and returns an estimate for every ranging tick that
/// has a full IMU window. The classifier and filter also run during the
/// warm-up; only emission is held back.
pub fn run_walk(scenario: &WalkScenario, classifiers: Classifiers<'_>, env: &WalkEnv) -> Result<Vec<PoseEstimate>> {
    scenario.validate()?;
    let mut imu_rng = stream_rng(scenario.seed, IMU_STREAM, 0);
    let mut cir_rng = stream_rng(scenario.seed, CIR_STREAM, 0);
    let mut ranging_rng = stream_rng(scenario.seed, RANGING_STREAM, 0);
    let imu = ImuGenerator::new(env.gait.clone(), &mut imu_rng)?;
    let mut ranger = Ranger::new(env.ranging)?;
    let walk = approach(scenario.start_distance_m, scenario.speed_mps);
    let alpha = match classifiers {
        Classifiers::Learned(b) => b.los.alpha,
        Classifiers::Oracle => DEFAULT_ALPHA,
    };
    let mut state = EwmaState::new(alpha)?;
    let mut window = ImuWindow::new();
    let mut out = Vec::new();

    for tick in merged_ticks(scenario) {
        let truth = scenario.pose_at(tick.t_ms);
        match tick.kind {
            TickKind::Imu => window.push(imu.sample(truth, tick.t_ms, &mut imu_rng))?,
            TickKind::Ranging => {
                let range = ranger.range(walk(tick.t_ms), tick.t_ms, &mut ranging_rng)?;
                let raw_p = match classifiers {
                    Classifiers::Learned(bundle) => {
                        let rec = generate_for_pose(truth, &env.channel, &mut cir_rng)?;
                        let ecir = extract_ecir(&rec)?;
                        bundle.los.probability(&ecir.values, rec.diagnostics.max_noise)?
                    }
                    Classifiers::Oracle => truth.los_label().target(),
                };
                let (decision, next) = smooth_decision(raw_p, state)?;
                state = next;
                let Some(rows) = window.rows() else {
                    log::debug!("t = {} ms: window holds {} of {WINDOW_LEN}", tick.t_ms, window.len());
                    continue;
                };
                let p = pocket_probability(classifiers, decision.label, &rows, truth)?;
                let raw_label = LosLabel::from_probability(raw_p);
                let p_raw = if raw_label == decision.label {
                    p
                } else {
                    pocket_probability(classifiers, raw_label, &rows, truth)?
                };
                out.push(PoseEstimate {
                    t_ms: tick.t_ms,
                    raw_p_los: raw_p,
                    smoothed_p_los: decision.smoothed_p,
                    los_label: decision.label,
                    pose: decide_pose(decision.label, p),
                    pose_no_lpf: decide_pose(raw_label, p_raw),
                    distance_m: range.distance_m,
                    true_pose: truth,
                });
            }
        }
    }
    Ok(out)
}

/// Delay of one scheduled switch; `None` when the new pose never appears
/// before the next switch or the end of the walk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchDelay {
    pub from: Pose,
    pub to: Pose,
    pub t_switch_ms: f64,
    pub delay_ms: Option<f64>,
}

pub fn switch_delays(estimates: &[PoseEstimate], schedule: &[ScheduleEntry]) -> Vec<SwitchDelay> {
    schedule
        .windows(2)
        .enumerate()
        .map(|(k, pair)| {
            let (prev, cur) = (pair[0], pair[1]);
            let until = schedule.get(k + 2).map_or(f64::INFINITY, |e| e.t_ms);
            let delay_ms = estimates
                .iter()
                .filter(|e| e.t_ms > cur.t_ms && e.t_ms <= until)
                .find(|e| e.pose == cur.pose)
                .map(|e| e.t_ms - cur.t_ms);
            SwitchDelay {
                from: prev.pose,
                to: cur.pose,
                t_switch_ms: cur.t_ms,
                delay_ms,
            }
        })
        .collect()
}

/// Mean and sample standard deviation of the delays of one ordered pose
/// pair, with the number of censored switches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionStats {
    pub from: Pose,
    pub to: Pose,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub n: usize,
    pub censored: usize,
}

/// Aggregates switch delays over trials, one entry per ordered pose pair
/// that occurs. No switches give an empty matrix.
pub fn measure_transition_delay(trials: &[(Vec<PoseEstimate>, Vec<ScheduleEntry>)]) -> Vec<TransitionStats> {
    let mut groups: std::collections::BTreeMap<(Pose, Pose), (Vec<f64>, usize)> = Default::default();
    for (estimates, schedule) in trials {
        for s in switch_delays(estimates, schedule) {
            let g = groups.entry((s.from, s.to)).or_default();
            match s.delay_ms {
                Some(d) => g.0.push(d),
                None => g.1 += 1,
            }
        }
    }
    groups
        .into_iter()
        .map(|((from, to), (delays, censored))| {
            let n = delays.len();
            let mean = if n > 0 { delays.iter().sum::<f64>() / n as f64 } else { f64::NAN };
            let std = if n > 1 {
                (delays.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            TransitionStats {
                from,
                to,
                mean_ms: mean,
                std_ms: std,
                n,
                censored,
            }
        })
        .collect()
}

/// Settings of the repeated-walk experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentParams {
    pub trials_per_pose: usize,
    /// Length of a single-pose walk.
    pub walk_duration_ms: f64,
    /// Nominal switch instant of a transition walk.
    pub switch_at_ms: f64,
    /// Observation time after the switch.
    pub after_switch_ms: f64,
    /// Draw the switch instant uniformly within one ranging interval after
    /// `switch_at_ms` rather than exactly on a tick.
    pub jitter_switch: bool,
    pub seed: u64,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            trials_per_pose: 50,
            walk_duration_ms: 4000.0,
            switch_at_ms: 2000.0,
            after_switch_ms: 2000.0,
            jitter_switch: true,
            seed: 0,
        }
    }
}

/// `trials_per_pose` single-pose walks for each pose.
pub fn pose_walks(
    classifiers: Classifiers<'_>,
    env: &WalkEnv,
    params: &ExperimentParams,
) -> Result<Vec<(Pose, Vec<PoseEstimate>)>> {
    let mut out = Vec::new();
    for pose in Pose::ALL {
        for trial in 0..params.trials_per_pose {
            let seed = stream_seed(params.seed, pose.code() as u64, trial as u64);
            let scenario = WalkScenario::single_pose(pose, params.walk_duration_ms, seed);
            out.push((pose, run_walk(&scenario, classifiers, env)?));
        }
    }
    Ok(out)
}

fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    stream_rng(seed, 20 + a, b).random()
}

/// Ordered pose pairs that cross the LOS/NLOS boundary.
pub fn cross_class_pairs() -> Vec<(Pose, Pose)> {
    all_pairs().into_iter().filter(|(a, b)| a.los_label() != b.los_label()).collect()
}

pub fn all_pairs() -> Vec<(Pose, Pose)> {
    Pose::ALL
        .iter()
        .flat_map(|&a| Pose::ALL.iter().filter(move |&&b| b != a).map(move |&b| (a, b)))
        .collect()
}

/// `trials_per_pose` walks for every pair, each switching once.
pub fn transition_walks(
    classifiers: Classifiers<'_>,
    env: &WalkEnv,
    params: &ExperimentParams,
    pairs: &[(Pose, Pose)],
) -> Result<Vec<(Vec<PoseEstimate>, Vec<ScheduleEntry>)>> {
    let mut trials = Vec::new();
    for (k, &(from, to)) in pairs.iter().enumerate() {
        for trial in 0..params.trials_per_pose {
            let seed = stream_seed(params.seed, 100 + k as u64, trial as u64);
            let mut t_switch = params.switch_at_ms;
            if params.jitter_switch {
                t_switch += stream_rng(seed, 30, 0).random_range(0.0..200.0);
            }
            let schedule = vec![
                ScheduleEntry { t_ms: 0.0, pose: from },
                ScheduleEntry { t_ms: t_switch, pose: to },
            ];
            let scenario = WalkScenario {
                pose_schedule: schedule.clone(),
                duration_ms: t_switch + params.after_switch_ms,
                seed,
                ..WalkScenario::default()
            };
            trials.push((run_walk(&scenario, classifiers, env)?, schedule));
        }
    }
    Ok(trials)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_interleave_three_or_four_imu() {
        let s = WalkScenario {
            duration_ms: 10_000.0,
            ..WalkScenario::default()
        };
        let ticks = merged_ticks(&s);
        assert!(ticks.windows(2).all(|w| w[0].t_ms <= w[1].t_ms));
        let ranging: Vec<usize> = ticks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.kind == TickKind::Ranging)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(ranging.len(), 50);
        for w in ranging.windows(2) {
            let between = w[1] - w[0] - 1;
            assert!(between == 3 || between == 4, "{between}");
        }
        // 600 ms is both an IMU and a ranging instant.
        let at600: Vec<TickKind> = ticks.iter().filter(|t| t.t_ms == 600.0).map(|t| t.kind).collect();
        assert_eq!(at600, [TickKind::Imu, TickKind::Ranging]);
    }

    #[test]
    fn oracle_walk_warm_up_and_count() {
        let s = WalkScenario::single_pose(Pose::Front, 10_000.0, 1);
        let est = run_walk(&s, Classifiers::Oracle, &WalkEnv::default()).unwrap();
        assert!(est.len() >= 44);
        assert_eq!(est[0].t_ms, 1200.0);
        assert!(est.iter().all(|e| e.pose == Pose::Front));
    }

    #[test]
    fn oracle_switch_is_four_ticks() {
        let schedule = vec![
            ScheduleEntry { t_ms: 0.0, pose: Pose::LosHand },
            ScheduleEntry { t_ms: 5000.0, pose: Pose::Back },
        ];
        let s = WalkScenario {
            pose_schedule: schedule.clone(),
            duration_ms: 8000.0,
            ..WalkScenario::default()
        };
        let est = run_walk(&s, Classifiers::Oracle, &WalkEnv::default()).unwrap();
        let d = switch_delays(&est, &schedule);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].delay_ms, Some(800.0));
        let first_back = est.iter().find(|e| e.pose == Pose::Back).unwrap();
        assert_eq!(first_back.t_ms, 5800.0);
    }

    #[test]
    fn no_switch_gives_empty_matrix() {
        let s = WalkScenario::single_pose(Pose::LosHand, 3000.0, 2);
        let est = run_walk(&s, Classifiers::Oracle, &WalkEnv::default()).unwrap();
        assert!(measure_transition_delay(&[(est, s.pose_schedule.clone())]).is_empty());
    }

    #[test]
    fn censored_switch() {
        let schedule = vec![
            ScheduleEntry { t_ms: 0.0, pose: Pose::LosHand },
            ScheduleEntry { t_ms: 2000.0, pose: Pose::NlosHand },
        ];
        let m = measure_transition_delay(&[(Vec::new(), schedule)]);
        assert_eq!(m[0].censored, 1);
        assert_eq!(m[0].n, 0);
    }

    #[test]
    fn pose_schedule_applies_strictly_after() {
        let s = WalkScenario {
            pose_schedule: vec![
                ScheduleEntry { t_ms: 0.0, pose: Pose::Front },
                ScheduleEntry { t_ms: 400.0, pose: Pose::Back },
            ],
            ..WalkScenario::default()
        };
        assert_eq!(s.pose_at(400.0), Pose::Front);
        assert_eq!(s.pose_at(400.1), Pose::Back);
        assert_eq!(s.pose_at(0.0), Pose::Front);
    }

    #[test]
    fn invalid_schedule() {
        let s = WalkScenario {
            pose_schedule: vec![
                ScheduleEntry { t_ms: 10.0, pose: Pose::Front },
                ScheduleEntry { t_ms: 10.0, pose: Pose::Back },
            ],
            ..WalkScenario::default()
        };
        assert!(run_walk(&s, Classifiers::Oracle, &WalkEnv::default()).is_err());
    }

    #[test]
    fn pairs() {
        assert_eq!(all_pairs().len(), 12);
        assert_eq!(cross_class_pairs().len(), 8);
    }
}
