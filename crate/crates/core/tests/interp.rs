use evsci_core::events::simulate_events;
use evsci_core::interp::{densify, interpolate, Blend, InterpolationRequest, TimePoint};
use evsci_core::metrics::psnr;
use evsci_core::recon::{reconstruct, ReconSettings};
use evsci_core::repr::split_by_frames;
use evsci_core::scene::{render_at, synthesize};
use evsci_core::sci::{encode, generate_masks};
use evsci_core::{EventCameraModel, FrameSequence, SceneKind, SceneSpec, SensorConfig};

struct Decoded {
    spec: SceneSpec,
    frames: FrameSequence,
    stream: evsci_core::EventStream,
    cam: EventCameraModel,
}

/// 16 ground-truth frames; the odd ones (1-based) are coded into one snapshot
/// with B = 8 and the even ones are held out.
fn decode(kind: SceneKind) -> Decoded {
    let spec = SceneSpec { kind, count: 16, ..SceneSpec::default() };
    let gt = synthesize(&spec).unwrap();
    let coded = gt.subsample(0, 2).unwrap();
    let sensor = SensorConfig::default();
    let masks = generate_masks(&sensor, gt.dims()).unwrap();
    let snap = encode(&coded, &masks, 0.0, sensor.seed).unwrap();
    let cam = EventCameraModel::for_dims(gt.dims());
    let stream = simulate_events(&gt, &cam).unwrap();
    let slices = split_by_frames(&stream, 8, coded.frame_interval()).unwrap();
    let rec = reconstruct(&snap, &masks, Some(&slices), &cam, &ReconSettings::default()).unwrap();
    let (frames, _) = rec.into_sequence(coded.frame_interval()).unwrap();
    Decoded { spec, frames, stream, cam }
}

/// Per held-out frame: (interpolated, nearest copy) PSNR.
fn held_out_scores(kind: SceneKind) -> Vec<(f64, f64)> {
    let Decoded { spec, frames, stream, cam } = decode(kind);
    let gt = synthesize(&spec).unwrap();
    (0..8)
        .map(|b| {
            let req = InterpolationRequest { at: TimePoint::Fractional { b, f: 0.5 }, blend: Blend::LinearTime };
            let out = interpolate(&frames, &stream, &req, &cam).unwrap();
            let truth = gt.frame(2 * b + 1);
            let ours = psnr(&out, truth, 1.0).unwrap();
            let copy = psnr(frames.frame(b), truth, 1.0).unwrap();
            (ours, copy)
        })
        .collect()
}

#[test]
fn held_out_frames_beat_nearest_copy() {
    for kind in SceneKind::ALL {
        let scores = held_out_scores(kind);
        let n = scores.len() as f64;
        let mean_ours = scores.iter().map(|s| s.0).sum::<f64>() / n;
        let mean_copy = scores.iter().map(|s| s.1).sum::<f64>() / n;
        for (i, (ours, copy)) in scores.iter().enumerate() {
            assert!(ours >= copy, "{kind:?} held-out {i}: {ours:.2} < {copy:.2}");
        }
        assert!(mean_ours >= mean_copy + 1.0, "{kind:?}: {mean_ours:.2} vs {mean_copy:.2}");
    }
}

#[test]
fn densified_frames_beat_nearest_copy() {
    for kind in SceneKind::ALL {
        let Decoded { spec, frames, stream, cam } = decode(kind);
        let b = frames.count();
        let n_out = 2 * b - 1;
        let dense = densify(&frames, &stream, n_out, &cam, Blend::LinearTime).unwrap();
        assert_eq!(dense.frames.count(), n_out);
        let (mut ours, mut copy, mut inserted) = (0.0, 0.0, 0);
        for k in 0..n_out {
            let slot = (k * b) as f64 / n_out as f64;
            if (k * b) % n_out == 0 {
                assert_eq!(dense.frames.frame(k), frames.frame(k * b / n_out));
                continue;
            }
            // Slot s sits at ground-truth position 2s.
            let truth = render_at(&spec, 2.0 * slot).unwrap();
            let nearest = (slot.round() as usize).min(b - 1);
            ours += psnr(dense.frames.frame(k), &truth, 1.0).unwrap();
            copy += psnr(frames.frame(nearest), &truth, 1.0).unwrap();
            inserted += 1;
        }
        let (ours, copy) = (ours / inserted as f64, copy / inserted as f64);
        assert!(ours >= copy, "{kind:?}: {ours:.2} < {copy:.2}");
    }
}

#[test]
fn densify_is_deterministic_and_keeps_decoded_frames() {
    let Decoded { frames, stream, cam, .. } = decode(SceneKind::RotatingBar);
    let same = densify(&frames, &stream, frames.count(), &cam, Blend::LinearTime).unwrap();
    assert_eq!(same.frames.frames(), frames.frames());
    let a = densify(&frames, &stream, 16, &cam, Blend::LinearTime).unwrap();
    let b = densify(&frames, &stream, 16, &cam, Blend::LinearTime).unwrap();
    assert_eq!(a, b);
    assert!(a.frames.frames().iter().flat_map(|f| f.iter()).all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(a.timestamps_us, (0..16).map(|k| k * 1000).collect::<Vec<u64>>());
}
