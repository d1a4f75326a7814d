use std::fs;

use evsci_core::scene::{load_frames, save_frames, saved_files, synthesize};
use evsci_core::{Error, FrameFormat, FrameSequence, SceneKind, SceneSpec};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn noisy_sequence() -> FrameSequence {
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let frames = (0..3).map(|_| Array2::from_shape_fn((21, 34), |_| rng.random_range(0.0..=1.0))).collect();
    FrameSequence::new(frames, 2.5e-3).unwrap()
}

#[test]
fn raw_f32_round_trips_synthetic_scenes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for kind in SceneKind::ALL {
        let seq = synthesize(&SceneSpec { kind, count: 4, ..SceneSpec::default() }).unwrap();
        let path = dir.path().join(format!("{kind:?}.raw"));
        save_frames(&seq, &path, FrameFormat::RawF32).unwrap();
        let (back, clamped) = load_frames(&path, FrameFormat::RawF32).unwrap();
        assert_eq!(clamped, 0);
        assert_eq!(back, seq);
    }
}

#[test]
fn raw_f32_is_within_single_precision() {
    let dir = tempfile::tempdir().unwrap();
    let seq = noisy_sequence();
    let path = dir.path().join("frames.raw");
    save_frames(&seq, &path, FrameFormat::RawF32).unwrap();
    let (back, _) = load_frames(&path, FrameFormat::RawF32).unwrap();
    assert_eq!(back.frame_interval(), seq.frame_interval());
    for (a, b) in back.frames().iter().zip(seq.frames()) {
        assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= f32::EPSILON as f64));
    }
}

#[test]
fn pgm_round_trip_is_within_half_a_grey_level() {
    let dir = tempfile::tempdir().unwrap();
    let seq = noisy_sequence();
    let path = dir.path().join("frames");
    save_frames(&seq, &path, FrameFormat::PgmDir).unwrap();
    for file in saved_files(&path, FrameFormat::PgmDir, seq.count()) {
        assert!(file.is_file(), "{}", file.display());
    }
    let (back, _) = load_frames(&path, FrameFormat::PgmDir).unwrap();
    assert_eq!(back.count(), 3);
    assert_eq!(back.frame_interval(), seq.frame_interval());
    for (a, b) in back.frames().iter().zip(seq.frames()) {
        assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= 1.0 / 510.0 + 1e-12));
    }
}

#[test]
fn out_of_range_raw_samples_are_clamped_with_a_count() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("frames.raw");
    save_frames(&noisy_sequence(), &path, FrameFormat::RawF32).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    bytes[..4].copy_from_slice(&1.5f32.to_le_bytes());
    bytes[4..8].copy_from_slice(&(-0.25f32).to_le_bytes());
    fs::write(&path, bytes).unwrap();
    let (back, clamped) = load_frames(&path, FrameFormat::RawF32).unwrap();
    assert_eq!(clamped, 2);
    assert_eq!(back.frame(0)[[0, 0]], 1.0);
    assert_eq!(back.frame(0)[[0, 1]], 0.0);
}

#[test]
fn unwritable_destination_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    // A regular file where a directory is expected fails even for root.
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, b"").unwrap();
    let seq = noisy_sequence();
    for format in [FrameFormat::RawF32, FrameFormat::PgmDir] {
        let err = save_frames(&seq, &blocker.join("frames"), format).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{format:?}: {err}");
    }
}

#[test]
fn missing_and_truncated_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_frames(&dir.path().join("nothing.raw"), FrameFormat::RawF32), Err(Error::Io { .. })));
    let path = dir.path().join("frames.raw");
    save_frames(&noisy_sequence(), &path, FrameFormat::RawF32).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(load_frames(&path, FrameFormat::RawF32).is_err());
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert!(matches!(load_frames(&empty, FrameFormat::PgmDir), Err(Error::MalformedHeader { .. })));
}
