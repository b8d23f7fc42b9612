//! Monte-Carlo properties of the CIR generator over default parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use utgpose_core::channel::{
    above_noise_count, compute_diagnostics, generate_cir, magnitude, ChannelParams, DEFAULT_NOISE_WINDOW,
};
use utgpose_core::cirproc::{extract_ecir, ECIR_LEN};
use utgpose_core::models::LosLabel;

const DRAWS: usize = 1000;

fn mean_count(label: LosLabel, seed: u64) -> f64 {
    let p = ChannelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = (0..DRAWS)
        .map(|_| {
            let rec = generate_cir(label, &p, &mut rng).unwrap();
            above_noise_count(&rec.magnitudes(), &rec.diagnostics)
        })
        .sum();
    total as f64 / DRAWS as f64
}

#[test]
fn los_above_noise_count_near_61() {
    let m = mean_count(LosLabel::Los, 1);
    println!("LOS mean above-noise count {m:.2}");
    assert!((55.0..=67.0).contains(&m), "{m}");
}

#[test]
fn nlos_above_noise_count_near_130() {
    let m = mean_count(LosLabel::Nlos, 2);
    println!("NLOS mean above-noise count {m:.2}");
    assert!((120.0..=140.0).contains(&m), "{m}");
}

#[test]
fn los_first_peak_dominates_nlos() {
    let p = ChannelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let wins = (0..DRAWS)
        .filter(|_| {
            let los = generate_cir(LosLabel::Los, &p, &mut rng).unwrap();
            let nlos = generate_cir(LosLabel::Nlos, &p, &mut rng).unwrap();
            let peak = |r: &utgpose_core::channel::CirRecord| magnitude(r.samples[r.diagnostics.fp_index]);
            peak(&los) > peak(&nlos)
        })
        .count();
    assert!(wins as f64 / DRAWS as f64 >= 0.99, "{wins}");
}

#[test]
fn diagnostics_recover_first_path() {
    let p = ChannelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut exact, mut near) = (0, 0);
    for _ in 0..DRAWS {
        let rec = generate_cir(LosLabel::Los, &p, &mut rng).unwrap();
        if let Ok(d) = compute_diagnostics(&rec.samples, DEFAULT_NOISE_WINDOW) {
            let diff = d.fp_index.abs_diff(rec.diagnostics.fp_index);
            exact += (diff == 0) as usize;
            near += (diff <= 2) as usize;
        }
    }
    println!("fp recovered exactly {exact}/{DRAWS}, within 2 taps {near}/{DRAWS}");
    assert!(exact as f64 / DRAWS as f64 >= 0.99);
    assert!(near as f64 / DRAWS as f64 >= 0.99);
}

#[test]
fn ecir_window_holds_all_signal() {
    let p = ChannelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for label in LosLabel::ALL {
        let contained = (0..DRAWS)
            .filter(|_| {
                let rec = generate_cir(label, &p, &mut rng).unwrap();
                let mags = rec.magnitudes();
                let e = extract_ecir(&rec).unwrap();
                let window = e.origin_index..e.origin_index + ECIR_LEN;
                mags.iter()
                    .enumerate()
                    .all(|(i, &m)| m <= rec.diagnostics.max_noise || window.contains(&i))
            })
            .count();
        assert!(contained as f64 / DRAWS as f64 >= 0.95, "{label}: {contained}");
    }
}

#[test]
fn ecir_reembeds_losslessly() {
    let p = ChannelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let rec = generate_cir(LosLabel::Nlos, &p, &mut rng).unwrap();
        let mags = rec.magnitudes();
        let e = extract_ecir(&rec).unwrap();
        let full = e.embed();
        let w = e.origin_index..e.origin_index + ECIR_LEN;
        assert_eq!(&full[w.clone()], &mags[w]);
    }
}
