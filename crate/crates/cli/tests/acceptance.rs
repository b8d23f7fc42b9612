//! Acceptance criteria, one pass/fail line each.
//!
//! Set `ACCEPTANCE_ONLY=1,5,7` to run a subset. Criteria 8 to 10 reuse the
//! models trained for 7 and 9.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use utgpose_core::channel::{compute_diagnostics_from_magnitudes, format_value, generate_cir, ChannelParams, CIR_LEN};
use utgpose_core::cirproc::{meets_realtime, transfer_latency, LatencyModel, ECIR_LEN};
use utgpose_core::harness::dataset::{
    generate_cir_rows, generate_imu_rows, split_cir_rows, split_imu_windows, stream_rng, Window,
};
use utgpose_core::harness::eval::{evaluate, evaluate_walks, EvalParams};
use utgpose_core::harness::import::{import_cir_corpus, SchemaConfig};
use utgpose_core::harness::train::{raw_accuracy, train_los, train_pose, CirInput};
use utgpose_core::harness::walk::{
    cross_class_pairs, measure_transition_delay, pose_walks, transition_walks, Classifiers, ExperimentParams,
    WalkEnv,
};
use utgpose_core::imusim::GaitParams;
use utgpose_core::models::{
    build_los_classifier, build_pose_detector, los_train_config, pose_train_config, LosClassifier, LosLabel,
    ModelBundle, Pose, PoseDetector,
};
use utgpose_core::ranging::{run_session, ClockModel};
use utgpose_neural::gradcheck::check_gradients;
use utgpose_neural::{LayerSpec, Network, Tensor};

const SEED: u64 = 2024;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Models shared between criteria.
#[derive(Default)]
struct Shared {
    los: Option<LosClassifier>,
    pose: Option<(PoseDetector, PoseDetector)>,
}

impl Shared {
    fn los(&mut self) -> &LosClassifier {
        if self.los.is_none() {
            let rows = generate_cir_rows(2000, &ChannelParams::default(), SEED).unwrap();
            let (train, _) = split_cir_rows(rows);
            let (model, report) = train_los(&train, CirInput::Ecir, &los_train_config(SEED)).unwrap();
            println!("  (CIR classifier: {} rows, {} epochs)", train.len(), report.epoch_losses.len());
            self.los = Some(model);
        }
        self.los.as_ref().unwrap()
    }

    fn bundle(&mut self) -> ModelBundle {
        let los = self.los().clone();
        if self.pose.is_none() {
            let imu = generate_imu_rows(6600, &GaitParams::default(), SEED).unwrap();
            let windows = split_imu_windows(&imu);
            let train = thin(&windows.train, POSE_STRIDE);
            let [(a, ra), (b, rb)] = train_pose(&train, &pose_train_config(SEED)).unwrap();
            println!(
                "  (pose detectors: {} windows, {} and {} epochs)",
                train.len(),
                ra.epoch_losses.len(),
                rb.epoch_losses.len()
            );
            self.pose = Some((a, b));
        }
        let (pose_los, pose_nlos) = self.pose.clone().unwrap();
        ModelBundle {
            los,
            pose_los,
            pose_nlos,
        }
    }
}

/// Consecutive sliding windows share 17 of 18 rows; every `POSE_STRIDE`-th
/// one is kept for pose training.
const POSE_STRIDE: usize = 4;

fn thin(windows: &[(Pose, Window)], stride: usize) -> Vec<(Pose, Window)> {
    windows.iter().step_by(stride).copied().collect()
}

// 1
fn ds_twr_exactness(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.random_range(0.0..=10.0);
        let replies = (rng.random_range(1e5..=3e6), rng.random_range(1e5..=3e6));
        let ci = ClockModel::new(0.0, rng.random_range(0.0..1e9)).unwrap();
        let cr = ClockModel::new(0.0, rng.random_range(0.0..1e9)).unwrap();
        let s = run_session(d, ci, cr, replies).unwrap();
        worst = worst.max((s.result.distance_m - d).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst < 1e-9 && secs < 1.0, format!("max |error| {worst:.2e} m, {secs:.3} s"))
}

// 2
fn ds_twr_drift(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.random_range(0.0..=10.0);
        let replies = (rng.random_range(1e5..=3e6), rng.random_range(1e5..=3e6));
        let ci = ClockModel::new(rng.random_range(-20.0..=20.0), rng.random_range(0.0..1e9)).unwrap();
        let cr = ClockModel::new(rng.random_range(-20.0..=20.0), rng.random_range(0.0..1e9)).unwrap();
        let s = run_session(d, ci, cr, replies).unwrap();
        worst = worst.max((s.result.distance_m - d).abs());
    }
    outcome(worst < 5e-3, format!("max |error| {:.3} mm", worst * 1e3))
}

// 3
fn gradient_checks(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let conv1 = |k, f| LayerSpec::Conv1D {
        kernel_size: k,
        n_filters: f,
    };
    let conv2 = |k, f| LayerSpec::Conv2D {
        kernel_size: k,
        n_filters: f,
    };
    let pool = |axes: Vec<usize>| LayerSpec::MaxPool { kernel_size: 2, axes };
    let cases: Vec<(&str, Vec<usize>, Vec<LayerSpec>)> = vec![
        ("Conv1D", vec![9, 2], vec![conv1(3, 4)]),
        ("Conv2D", vec![5, 4, 2], vec![conv2(2, 3)]),
        ("InstanceNorm", vec![7, 2], vec![conv1(2, 3), LayerSpec::InstanceNorm]),
        ("ReLU", vec![8, 1], vec![conv1(3, 3), LayerSpec::ReLU]),
        ("Dropout", vec![8, 2], vec![conv1(2, 3), LayerSpec::Dropout { rate: 0.3 }]),
        ("MaxPool", vec![5, 5, 1], vec![conv2(2, 2), pool(vec![0, 1])]),
        ("Dense+Sigmoid", vec![6], vec![LayerSpec::Dense { units: 4 }, LayerSpec::Sigmoid]),
        ("LSTM", vec![4, 3], vec![LayerSpec::LSTM { units: 5 }]),
    ];
    let mut worst = BTreeMap::new();
    for (name, shape, mut specs) in cases {
        specs.extend([LayerSpec::Flatten, LayerSpec::Dense { units: 1 }, LayerSpec::Sigmoid]);
        for seed in 0..3u64 {
            let net = Network::<f64>::build(&shape, &specs, 10 + seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(20 + seed);
            let n = shape.iter().product();
            let x = Tensor::new(shape.clone(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let r = check_gradients(&net, &x, (seed % 2) as f64, 30 + seed, 1e-5).unwrap();
            let e: &mut f64 = worst.entry(name).or_default();
            *e = e.max(r.max_relative_error);
        }
    }
    let max = worst.values().copied().fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    outcome(max < 1e-4 && secs < 60.0, format!("{detail}; {secs:.1} s"))
}

/// Output shape of every layer, derived from valid-convolution and pooling
/// arithmetic.
fn expected_trace(input: &[usize], specs: &[LayerSpec]) -> Vec<Vec<usize>> {
    let mut shape = input.to_vec();
    let mut out = Vec::new();
    for s in specs {
        shape = match *s {
            LayerSpec::Conv1D { kernel_size, n_filters } => vec![shape[0] - kernel_size + 1, n_filters],
            LayerSpec::Conv2D { kernel_size, n_filters } => {
                vec![shape[0] - kernel_size + 1, shape[1] - kernel_size + 1, n_filters]
            }
            LayerSpec::MaxPool { kernel_size, ref axes } => {
                let mut s = shape.clone();
                for &a in axes {
                    s[a] = (s[a] / kernel_size).max(1);
                }
                s
            }
            LayerSpec::LSTM { units } => vec![units],
            LayerSpec::Flatten => vec![shape.iter().product()],
            LayerSpec::Dense { units } => vec![units],
            _ => shape,
        };
        out.push(shape.clone());
    }
    out
}

// 4
fn shapes(_: &mut Shared) -> Outcome {
    let los = build_los_classifier(1).unwrap();
    let pose = build_pose_detector(LosLabel::Nlos, 1).unwrap();
    let actual = |n: &Network<f32>| n.layers().iter().map(|l| l.out_shape.clone()).collect::<Vec<_>>();
    let los_ok = los.input_shape() == [ECIR_LEN, 1]
        && los.output_shape() == [1]
        && actual(&los) == expected_trace(&[ECIR_LEN, 1], &los.specs());
    let pose_ok = pose.input_shape() == [18, 6, 1]
        && pose.output_shape() == [1]
        && actual(&pose) == expected_trace(&[18, 6, 1], &pose.specs());
    let x = Tensor::new(vec![ECIR_LEN, 1], vec![0.5f32; ECIR_LEN]).unwrap();
    let p = los.predict(&x).unwrap();
    let y = Tensor::new(vec![18, 6, 1], vec![0.1f32; 108]).unwrap();
    let q = pose.predict(&y).unwrap();
    let trace = |n: &Network<f32>| {
        n.layers()
            .iter()
            .filter(|l| !matches!(l.spec, LayerSpec::InstanceNorm | LayerSpec::ReLU | LayerSpec::Dropout { .. }))
            .map(|l| format!("{:?}", l.out_shape))
            .collect::<Vec<_>>()
            .join("→")
    };
    outcome(
        los_ok && pose_ok && (0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&q),
        format!("CIR [135,1]→{}; pose [18,6,1]→{}", trace(&los), trace(&pose)),
    )
}

// 5
fn latency(_: &mut Shared) -> Outcome {
    let m = LatencyModel::default();
    let a = transfer_latency(135.0, &m).unwrap();
    let b = transfer_latency(1024.0, &m).unwrap();
    let ok = a == 17.8 && b == 223.4 && meets_realtime(a, 200.0) && !meets_realtime(b, 200.0);
    outcome(ok, format!("135 → {a} ms, 1024 → {b} ms"))
}

// 6
fn ecir_sufficiency(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let rows = generate_cir_rows(250, &ChannelParams::default(), SEED + 6).unwrap();
    let (train, test) = split_cir_rows(rows);
    let cfg = los_train_config(SEED + 6);
    let (ecir, _) = train_los(&train, CirInput::Ecir, &cfg).unwrap();
    let (full, _) = train_los(&train, CirInput::Full, &cfg).unwrap();
    let a = raw_accuracy(&ecir, &test, CirInput::Ecir).unwrap();
    let b = raw_accuracy(&full, &test, CirInput::Full).unwrap();
    outcome(
        (a - b).abs() <= 0.02,
        format!(
            "eCIR {a:.4} vs full {b:.4} on {} held-out rows ({} train), {:.0} s",
            test.len(),
            train.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn default_test_set() -> (Vec<utgpose_core::channel::CirRow>, Vec<(Pose, Window)>) {
    let rows = generate_cir_rows(2000, &ChannelParams::default(), SEED).unwrap();
    let (_, test) = split_cir_rows(rows);
    let imu = generate_imu_rows(6600, &GaitParams::default(), SEED).unwrap();
    (test, split_imu_windows(&imu).test)
}

// 7
fn synthetic_los_accuracy(shared: &mut Shared) -> Outcome {
    let start = Instant::now();
    let los = shared.los().clone();
    let train_secs = start.elapsed().as_secs_f64();
    let (test, _) = default_test_set();
    let bundle = ModelBundle {
        los,
        pose_los: dummy_detector(LosLabel::Los),
        pose_nlos: dummy_detector(LosLabel::Nlos),
    };
    let r = evaluate(&bundle, &test, &[], &EvalParams::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        r.los_accuracy >= 0.95 && secs < 600.0,
        format!(
            "LPF {:.4} (raw {:.4}) on {} streamed rows; train {train_secs:.0} s, total {secs:.0} s",
            r.los_accuracy,
            r.los_accuracy_no_lpf,
            test.len()
        ),
    )
}

fn dummy_detector(branch: LosLabel) -> PoseDetector {
    PoseDetector {
        branch,
        net: build_pose_detector(branch, 0).unwrap(),
        stats: utgpose_core::models::FeatureStats::identity(),
    }
}

// 8
fn lpf_ablation(shared: &mut Shared) -> Outcome {
    let los = shared.los().clone();
    let (test, _) = default_test_set();
    let bundle = ModelBundle {
        los,
        pose_los: dummy_detector(LosLabel::Los),
        pose_nlos: dummy_detector(LosLabel::Nlos),
    };
    let params = EvalParams {
        outlier_rate: 0.1,
        seed: SEED,
    };
    let r = evaluate(&bundle, &test, &[], &params).unwrap();
    let gain = r.los_accuracy - r.los_accuracy_no_lpf;
    outcome(
        gain >= 0.05,
        format!("LPF {:.4} vs raw {:.4} with 10 % flips (+{:.1} points)", r.los_accuracy, r.los_accuracy_no_lpf, gain * 100.0),
    )
}

// 9
fn synthetic_pose_accuracy(shared: &mut Shared) -> Outcome {
    let start = Instant::now();
    let bundle = shared.bundle();
    let params = ExperimentParams {
        seed: SEED,
        ..ExperimentParams::default()
    };
    let r = evaluate_walks(&pose_walks(Classifiers::Learned(&bundle), &WalkEnv::default(), &params).unwrap()).unwrap();
    let per_pose: Vec<String> = r
        .groups
        .iter()
        .map(|g| format!("{} {:.3}", g.name(), g.pose_accuracy.unwrap()))
        .collect();
    let every = r.groups.iter().all(|g| g.pose_accuracy.unwrap() >= 0.90);
    let pose = r.pose_accuracy.unwrap();
    let bounded = r.groups.iter().all(|g| g.pose_accuracy.unwrap() <= g.los_accuracy + 0.02) && pose <= r.los_accuracy + 0.02;
    outcome(
        every && bounded,
        format!(
            "{}; overall pose {pose:.3} vs LOS/NLOS {:.3}; majority vote {:.3}; {:.0} s",
            per_pose.join(", "),
            r.los_accuracy,
            r.majority_vote_accuracy.unwrap(),
            start.elapsed().as_secs_f64()
        ),
    )
}

// 10
fn transition_delay(shared: &mut Shared) -> Outcome {
    let env = WalkEnv::default();
    let pairs = cross_class_pairs();
    let oracle_params = ExperimentParams {
        jitter_switch: false,
        seed: SEED,
        ..ExperimentParams::default()
    };
    let oracle = transition_walks(Classifiers::Oracle, &env, &oracle_params, &pairs).unwrap();
    let oracle_exact = oracle.iter().all(|(est, sched)| {
        utgpose_core::harness::walk::switch_delays(est, sched).iter().all(|d| d.delay_ms == Some(800.0))
    });

    let bundle = shared.bundle();
    let params = ExperimentParams {
        seed: SEED,
        ..ExperimentParams::default()
    };
    let stats = measure_transition_delay(&transition_walks(Classifiers::Learned(&bundle), &env, &params, &pairs).unwrap());
    let in_range = stats.len() == pairs.len() && stats.iter().all(|s| (600.0..=1000.0).contains(&s.mean_ms));
    let table: Vec<String> = stats
        .iter()
        .map(|s| format!("{}→{} {:.0}±{:.0} (n={}, censored {})", s.from, s.to, s.mean_ms, s.std_ms, s.n, s.censored))
        .collect();
    outcome(
        oracle_exact && in_range,
        format!(
            "oracle {} switches all 800 ms: {oracle_exact}; learned: {}",
            oracle.len(),
            table.join(", ")
        ),
    )
}

/// Public-corpus layout: label, diagnostics and metadata columns, then
/// `CIR0..CIR1015`.
const PUBLIC_META: [&str; 15] = [
    "NLOS", "RANGE", "FP_IDX", "FP_AMP1", "FP_AMP2", "FP_AMP3", "STDEV_NOISE", "CIR_PWR", "MAX_NOISE", "RXPACC", "CH",
    "FRAME_LEN", "PREAM_LEN", "BITRATE", "PRFR",
];

/// Row `i` of a synthetic public-schema corpus: 7 sites of 3,000 LOS then
/// 3,000 NLOS records. Rows with `i % 7 == 3` have blank diagnostics.
fn public_row(i: usize) -> (LosLabel, bool, utgpose_core::channel::CirRecord) {
    let label = if (i % 6000) < 3000 { LosLabel::Los } else { LosLabel::Nlos };
    let rec = generate_cir(label, &ChannelParams::default(), &mut stream_rng(SEED, 77, i as u64)).unwrap();
    (label, i % 7 == 3, rec)
}

fn write_public_corpus(path: &Path, n: usize) {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path).unwrap()));
    let header: Vec<String> = PUBLIC_META
        .iter()
        .map(|s| s.to_string())
        .chain((0..CIR_LEN).map(|i| format!("CIR{i}")))
        .collect();
    w.write_record(&header).unwrap();
    for i in 0..n {
        let (label, blank, rec) = public_row(i);
        let d = rec.diagnostics;
        let diag = |v: String| if blank { String::new() } else { v };
        let mut row = vec![
            label.code().to_string(),
            format_value(1.0 + (i % 50) as f64 * 0.1),
            diag(d.fp_index.to_string()),
            diag(format_value(d.fp_ampl[0])),
            diag(format_value(d.fp_ampl[1])),
            diag(format_value(d.fp_ampl[2])),
            diag(format_value(d.std_noise)),
            "0".into(),
            diag(format_value(d.max_noise)),
            "1024".into(),
            "2".into(),
            "39".into(),
            "1024".into(),
            "110".into(),
            "64".into(),
        ];
        row.extend(rec.magnitudes().into_iter().map(format_value));
        w.write_record(&row).unwrap();
    }
    w.flush().unwrap();
}

fn parsed(v: f64) -> f64 {
    format_value(v).parse().unwrap()
}

// 12
fn corpus_import(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.csv");
    const N: usize = 42_000;
    write_public_corpus(&path, N);
    let mut idx = 0usize;
    let mut mismatches = 0usize;
    let mut heal_mismatch = 0usize;
    let mut healed_rows = 0usize;
    let stats = import_cir_corpus(&path, &SchemaConfig::public_corpus(), |row| {
        let (label, blank, rec) = public_row(idx);
        idx += 1;
        let mags: Vec<f64> = rec.magnitudes().into_iter().map(parsed).collect();
        if row.label != label || row.pose.is_some() || row.magnitudes != mags {
            mismatches += 1;
        }
        if blank {
            healed_rows += 1;
            let want = compute_diagnostics_from_magnitudes(&mags, 0..600).unwrap();
            if row.diagnostics != want {
                heal_mismatch += 1;
            }
        } else {
            let d = rec.diagnostics;
            let want = utgpose_core::channel::Diagnostics {
                fp_index: d.fp_index,
                fp_ampl: d.fp_ampl.map(parsed),
                max_noise: parsed(d.max_noise),
                std_noise: parsed(d.std_noise),
            };
            if row.diagnostics != want {
                mismatches += 1;
            }
        }
        Ok(())
    })
    .unwrap();
    let ok = stats.rows_read == N
        && stats.imported == N
        && stats.skipped == 0
        && stats.healed == healed_rows
        && mismatches == 0
        && heal_mismatch == 0;
    outcome(
        ok,
        format!(
            "{} of {} rows imported, {} healed, {} lossy, {} heal mismatches, {:.0} s",
            stats.imported,
            stats.rows_read,
            stats.healed,
            mismatches,
            heal_mismatch,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn run_cli(args: &[&str]) -> (bool, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_utgpose")).args(args).output().unwrap();
    (out.status.success(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

// 11
fn cli_determinism(_: &mut Shared) -> Outcome {
    let work = tempfile::tempdir().unwrap();
    let w = work.path();
    let config = w.join("small.toml");
    std::fs::write(
        &config,
        "[dataset]\ncir_per_pose = 15\nimu_per_pose = 120\n\
         [train_los]\nmax_epochs = 2\n[train_pose]\nmax_epochs = 2\n\
         [experiment]\ntrials_per_pose = 1\nwalk_duration_ms = 2000.0\nafter_switch_ms = 1200.0\n\
         [eval]\noutlier_rate = 0.1\n",
    )
    .unwrap();
    let scenario = w.join("walk.toml");
    std::fs::write(
        &scenario,
        "duration_ms = 3000.0\n[[pose_schedule]]\nt_ms = 0.0\npose = \"LOS_HAND\"\n\
         [[pose_schedule]]\nt_ms = 1700.0\npose = \"BACK\"\n",
    )
    .unwrap();
    let corpus = w.join("corpus.csv");
    write_public_corpus(&corpus, 30);

    let commands: Vec<Vec<String>> = vec![
        vec!["gen".into()],
        vec!["train-los".into()],
        vec!["train-pose".into()],
        vec!["eval".into()],
        vec!["walk".into(), "--scenario".into(), scenario.display().to_string()],
        vec!["report".into()],
        vec!["report".into(), "--oracle".into()],
        vec![
            "import".into(),
            "--input".into(),
            corpus.display().to_string(),
            "--out-dir".into(),
            "IMPORT".into(),
        ],
    ];
    let mut trees = Vec::new();
    let mut failures = Vec::new();
    for run in ["a", "b"] {
        let out = w.join(run);
        for cmd in &commands {
            let mut args: Vec<String> = vec!["--seed".into(), "7".into(), "--config".into(), config.display().to_string()];
            let mut cmd = cmd.clone();
            if let Some(pos) = cmd.iter().position(|a| a == "IMPORT") {
                cmd[pos] = out.join("imported").display().to_string();
            } else {
                args.extend(["--out-dir".into(), out.display().to_string()]);
            }
            args.extend(cmd.iter().cloned());
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            let (ok, err) = run_cli(&refs);
            if !ok {
                failures.push(format!("{}: {}", cmd[0], err.trim()));
            }
        }
        trees.push(tree(&out));
    }
    let identical = trees[0] == trees[1];
    let differing: Vec<String> = trees[0]
        .iter()
        .filter(|(k, v)| trees[1].get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    outcome(
        failures.is_empty() && identical && trees[0].len() > 10,
        format!(
            "{} commands, {} files compared, identical: {identical}{}{}",
            commands.len(),
            trees[0].len(),
            if differing.is_empty() { String::new() } else { format!(", differing {differing:?}") },
            if failures.is_empty() { String::new() } else { format!(", failures {failures:?}") }
        ),
    )
}

type Criterion = (u32, &'static str, fn(&mut Shared) -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "DS-TWR exactness", ds_twr_exactness),
        (2, "DS-TWR drift tolerance", ds_twr_drift),
        (3, "gradient checks", gradient_checks),
        (4, "shape reproduction", shapes),
        (5, "latency model", latency),
        (6, "eCIR sufficiency", ecir_sufficiency),
        (7, "synthetic LOS/NLOS accuracy", synthetic_los_accuracy),
        (8, "LPF ablation", lpf_ablation),
        (9, "synthetic pose accuracy", synthetic_pose_accuracy),
        (10, "transition delay", transition_delay),
        (11, "CLI determinism", cli_determinism),
        (12, "corpus import", corpus_import),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut shared = Shared::default();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let o = f(&mut shared);
        println!("[{}] criterion {id:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        std::io::stdout().flush().unwrap();
        failed += !o.pass as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
