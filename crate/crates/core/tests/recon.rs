use std::time::Instant;

use evsci_core::events::simulate_events;
use evsci_core::metrics::mean_psnr;
use evsci_core::recon::{event_consistency, event_consistency_grad, reconstruct, ReconSettings};
use evsci_core::repr::split_by_frames;
use evsci_core::scene::synthesize;
use evsci_core::sci::{encode, generate_masks};
use evsci_core::{Dims, EventCameraModel, Frame, SceneKind, SceneSpec, SensorConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[test]
fn event_gradient_matches_central_differences() {
    let dims = Dims::new(8, 8);
    let h = 1e-5;
    for seed in 0..5 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let cam = EventCameraModel { threshold: rng.random_range(0.05..0.3), ..EventCameraModel::for_dims(dims) };
        let frames: Vec<Frame> =
            (0..3).map(|_| Frame::from_shape_fn(dims.shape(), |_| rng.random_range(0.05..0.95))).collect();
        let maps: Vec<Frame> =
            (0..2).map(|_| Frame::from_shape_fn(dims.shape(), |_| rng.random_range(-4..=4) as f64)).collect();
        let grad = event_consistency_grad(&frames, &maps, &cam).unwrap();
        let (mut err, mut norm) = (0.0f64, 0.0f64);
        for b in 0..3 {
            for idx in 0..dims.pixels() {
                let (r, c) = (idx / dims.width, idx % dims.width);
                let mut plus = frames.clone();
                plus[b][[r, c]] += h;
                let mut minus = frames.clone();
                minus[b][[r, c]] -= h;
                let fd = (event_consistency(&plus, &maps, &cam).unwrap()
                    - event_consistency(&minus, &maps, &cam).unwrap())
                    / (2.0 * h);
                err += (fd - grad[b][[r, c]]).powi(2);
                norm += fd.powi(2);
            }
        }
        let rel = (err / norm).sqrt();
        assert!(rel <= 1e-4, "seed {seed}: relative error {rel}");
    }
}

struct Instance {
    gt: Vec<Frame>,
    psnr_plain: f64,
    psnr_events: f64,
    iterations: usize,
    seconds: f64,
}

fn translating_square() -> Instance {
    let spec = SceneSpec { kind: SceneKind::TranslatingSquare, count: 8, ..SceneSpec::default() };
    let seq = synthesize(&spec).unwrap();
    let sensor = SensorConfig::default();
    let masks = generate_masks(&sensor, seq.dims()).unwrap();
    let snap = encode(&seq, &masks, 0.0, sensor.seed).unwrap();
    let cam = EventCameraModel::for_dims(seq.dims());
    let stream = simulate_events(&seq, &cam).unwrap();
    let slices = split_by_frames(&stream, 8, seq.frame_interval()).unwrap();

    let started = Instant::now();
    let plain_cfg = ReconSettings { event_weight: 0.0, ..ReconSettings::default() };
    let plain = reconstruct(&snap, &masks, None, &cam, &plain_cfg).unwrap();
    let seconds = started.elapsed().as_secs_f64();
    let fused = reconstruct(&snap, &masks, Some(&slices), &cam, &ReconSettings::default()).unwrap();

    let score = |frames: &[Frame]| {
        let pairs: Vec<_> = frames.iter().zip(seq.frames()).collect();
        mean_psnr(&pairs).unwrap()
    };
    Instance {
        gt: seq.frames().to_vec(),
        psnr_plain: score(&plain.frames),
        psnr_events: score(&fused.frames),
        iterations: plain.report.iterations_run,
        seconds,
    }
}

#[test]
fn gap_tv_regression_and_event_non_degradation() {
    let run = translating_square();
    assert_eq!(run.gt.len(), 8);
    assert!(run.iterations <= 100);
    assert!(run.seconds < 30.0, "{} s", run.seconds);
    assert!(run.psnr_plain >= 25.0, "intensity-only {:.2} dB", run.psnr_plain);
    assert!(run.psnr_events >= run.psnr_plain, "{:.2} < {:.2}", run.psnr_events, run.psnr_plain);
}
