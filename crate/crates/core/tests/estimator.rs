mod common;

use common::{direct_autocorrelation, frame, oracle_separation, two_copy_frame};
use dualfocus_core::{autocorrelate_1d, estimate_shift_with, EstimatorConfig, LagWindow};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn fft_autocorrelation_matches_direct_sum() {
    for (rows, seed) in [(32, 1), (33, 2), (32, 3)] {
        let mut rng = dualfocus_core::seed::rng(seed);
        let px = Array2::from_shape_simple_fn((rows, 128), || rng.random::<f64>());
        let direct = direct_autocorrelation(&px);
        let fast = autocorrelate_1d(&frame(px)).unwrap();
        for (lag, v) in fast.pairs() {
            let d = direct[lag.rem_euclid(128) as usize];
            // Direct values are normalized by r0 = 1, so relative and
            // absolute error coincide at the scale of the profile.
            assert!((v - d).abs() <= 1e-8, "rows {rows} lag {lag}: {v} vs {d}");
        }
    }
}

#[test]
fn exact_two_copy_separations_match_the_exhaustive_oracle() {
    let cfg = EstimatorConfig::default();
    for s in [20.0, 40.5, 120.25] {
        let window = LagWindow::new(s - 10.0, s + 40.0);
        let mut sq_oracle = 0.0;
        let mut sq_truth = 0.0;
        let seeds = 8;
        for seed in 0..seeds {
            let px = two_copy_frame(32, 512, s, 2.0, 100 + seed);
            let oracle = oracle_separation(&px, window);
            let est = estimate_shift_with(&frame(px), window, &cfg).unwrap();
            assert!(est.accepted, "s {s} seed {seed}: {est:?}");
            sq_oracle += (est.separation_px - oracle).powi(2);
            sq_truth += (est.separation_px - s).powi(2);
        }
        let rms_oracle = (sq_oracle / seeds as f64).sqrt();
        let rms_truth = (sq_truth / seeds as f64).sqrt();
        assert!(rms_oracle <= 0.05, "s {s}: rms vs oracle {rms_oracle}");
        assert!(rms_truth <= 0.05, "s {s}: rms vs truth {rms_truth}");
    }
}

#[test]
fn pure_noise_frames_fail_the_quality_gate() {
    // Survey-sized frames and the default survey window.
    let window = LagWindow::new(50.0, 168.0);
    let cfg = EstimatorConfig::default();
    let normal = Normal::new(0.5f64, 0.1).unwrap();
    let accepted = (0..100u64)
        .filter(|&seed| {
            let mut rng = dualfocus_core::seed::rng(seed);
            let px = Array2::from_shape_simple_fn((512, 512), || normal.sample(&mut rng).max(0.0));
            estimate_shift_with(&frame(px), window, &cfg)
                .unwrap()
                .accepted
        })
        .count();
    assert!(accepted <= 1, "{accepted} of 100 noise frames accepted");
}

#[test]
fn smooth_profile_without_a_copy_peak_is_rejected() {
    // A broad texture has a smooth, monotone autocorrelation tail; nothing in
    // the window may pass as a copy peak.
    let px = two_copy_frame(32, 512, 0.0, 12.0, 7);
    let est = estimate_shift_with(
        &frame(px),
        LagWindow::new(50.0, 168.0),
        &EstimatorConfig::default(),
    )
    .unwrap();
    assert!(!est.accepted, "{est:?}");
}
