//! Monte-Carlo properties of the gait simulator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use utgpose_core::imusim::{accel_rms, generate_imu_trace, sliding_windows, GaitParams, IMU_INTERVAL_MS};
use utgpose_core::models::Pose;

fn windows(pose: Pose, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let trace = generate_imu_trace(pose, 3000.0, &GaitParams::default(), &mut rng).unwrap();
        out.extend(sliding_windows(&trace).iter().step_by(8).map(accel_rms));
    }
    out.truncate(n);
    out
}

#[test]
fn pocket_shakes_harder_than_hand() {
    for (hand, pocket) in [(Pose::LosHand, Pose::Front), (Pose::NlosHand, Pose::Back)] {
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let ratio = mean(windows(pocket, 500, 1)) / mean(windows(hand, 500, 2));
        assert!(ratio >= 1.5, "{pocket} / {hand}: {ratio}");
    }
}

#[test]
fn rms_threshold_separates_hand_from_pocket() {
    // Threshold fitted on one draw, scored on another.
    let fit: Vec<f64> = [Pose::LosHand, Pose::Front]
        .map(|p| windows(p, 200, 10 + p.code() as u64).iter().sum::<f64>() / 200.0)
        .to_vec();
    let threshold = 0.5 * (fit[0] + fit[1]);
    let mut correct = 0;
    let mut total = 0;
    for pose in Pose::ALL {
        for rms in windows(pose, 250, 20 + pose.code() as u64) {
            correct += ((rms > threshold) == pose.in_pocket()) as usize;
            total += 1;
        }
    }
    let acc = correct as f64 / total as f64;
    println!("RMS oracle accuracy {acc:.4} over {total} windows");
    assert!(acc >= 0.95, "{acc}");
}

#[test]
fn dominant_frequency_is_step_rate() {
    let params = GaitParams::default();
    for pose in Pose::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(30 + pose.code() as u64);
        let trace = generate_imu_trace(pose, 10_000.0, &params, &mut rng).unwrap();
        let n = trace.len();
        let fs = 1000.0 / IMU_INTERVAL_MS;
        let power = |k: usize| -> f64 {
            (0..3)
                .map(|axis| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (i, s) in trace.iter().enumerate() {
                        let ph = std::f64::consts::TAU * (k * i) as f64 / n as f64;
                        re += s.accel[axis] * ph.cos();
                        im -= s.accel[axis] * ph.sin();
                    }
                    re * re + im * im
                })
                .sum()
        };
        let peak = (1..n / 2).max_by(|&a, &b| power(a).total_cmp(&power(b))).unwrap();
        let f = peak as f64 * fs / n as f64;
        assert!((f - params.step_rate_hz).abs() <= 0.2, "{pose}: {f} Hz");
    }
}

#[test]
fn traces_are_seeded() {
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        generate_imu_trace(Pose::Back, 2000.0, &GaitParams::default(), &mut rng).unwrap()
    };
    assert_eq!(draw(4), draw(4));
    assert_ne!(draw(4), draw(5));
    assert!(draw(4).windows(2).all(|w| w[1].t_ms - w[0].t_ms == IMU_INTERVAL_MS));
}
