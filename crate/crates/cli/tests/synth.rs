use tpswarp::bank::to_crop_local;
use tpswarp::{build_bank, landmark_l1, CropSpec, ImageWindow, LandmarkWindow};
use tpswarp_cli::synth::{generate, SynthConfig};
use tpswarp_cli::{fit_clip, Mode, PipelineConfig};

fn clip(seed: u64, frames: usize, jitter: f64) -> tpswarp_cli::synth::SynthClip {
    generate(&SynthConfig {
        seed,
        speaker: seed,
        frames,
        jitter,
        width: 160,
        height: 160,
    })
    .unwrap()
}

#[test]
fn clean_clip_is_already_temporally_optimal_against_its_own_bank() {
    let c = clip(5, 18, 0.0);
    let bank = build_bank(&ImageWindow::new(c.frames.clone()).unwrap(), &c.clean, 6, CropSpec::default()).unwrap();
    // A closed clean mouth puts upper and lower inner-lip points on top of
    // each other; a tiny ridge keeps those frames solvable.
    let cfg = PipelineConfig {
        ridge: 1e-6,
        ..Default::default()
    };
    let naive = fit_clip(&bank, &c.clean, Mode::Naive, &cfg).unwrap();
    let temporal = fit_clip(&bank, &c.clean, Mode::Temporal, &cfg).unwrap();
    for (a, b) in naive.windows.iter().zip(&temporal.windows) {
        assert!(a.error.is_none() && b.error.is_none(), "{:?} {:?}", a.error, b.error);
        let (a, b) = (a.final_.unwrap(), b.final_.unwrap());
        assert!(a.e_t <= 1.05 * b.e_t + 1e-9, "{} vs {}", a.e_t, b.e_t);
    }
}

#[test]
fn self_retrieval_distance_matches_injected_jitter() {
    let sigma = 1.0;
    let c = clip(6, 40, sigma);
    let crop = CropSpec::default();
    let bank = build_bank(&ImageWindow::new(c.frames.clone()).unwrap(), &c.noisy, 6, crop).unwrap();
    // Expected L1 over a window: 2 coordinates × 39 points × 6 frames × E|N(0, σ)|.
    let expected = 2.0 * 39.0 * 6.0 * sigma * (2.0 / std::f64::consts::PI).sqrt();
    let mut total = 0.0;
    for k in 0..bank.len() {
        let q = c.clean.slice(k, 6).unwrap();
        let local = LandmarkWindow::new(q.frames().iter().map(|f| to_crop_local(f, crop).unwrap().0).collect(), q.fps)
            .unwrap();
        let (_, _, d) = bank.retrieve(&local).unwrap();
        let brute = bank
            .entries()
            .iter()
            .map(|e| landmark_l1(&e.landmarks, &local).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(d, brute);
        assert!(d <= landmark_l1(&bank.entries()[k].landmarks, &local).unwrap());
        total += d;
    }
    let mean = total / bank.len() as f64;
    assert!((mean - expected).abs() < 0.15 * expected, "mean {mean} vs {expected}");
}
