use std::fs;

use evsci_core::events::{integrate_events, read_events, simulate_events, write_events};
use evsci_core::scene::synthesize;
use evsci_core::{Dims, Error, Event, EventCameraModel, EventFormat, EventStream, SceneKind, SceneSpec};
use proptest::prelude::*;

fn scene(kind: SceneKind) -> SceneSpec {
    SceneSpec { kind, height: 48, width: 48, count: 12, ..SceneSpec::default() }
}

#[test]
fn integration_recovers_the_final_frame_within_one_threshold() {
    for kind in SceneKind::ALL {
        let seq = synthesize(&scene(kind)).unwrap();
        for threshold in [0.05, 0.15, 0.3] {
            let cam = EventCameraModel { threshold, ..EventCameraModel::for_dims(seq.dims()) };
            let stream = simulate_events(&seq, &cam).unwrap();
            let w = seq.dims().width;
            let mut per_pixel = vec![Vec::new(); seq.dims().pixels()];
            for e in stream.events() {
                per_pixel[e.y as usize * w + e.x as usize].push(e.p);
            }
            let first = seq.frame(0);
            let last = seq.frame(seq.count() - 1);
            for (i, ((&i0, &i1), ps)) in first.iter().zip(last.iter()).zip(&per_pixel).enumerate() {
                let rec = integrate_events(i0, ps.iter().copied(), &cam);
                let err = (cam.log_intensity(rec) - cam.log_intensity(i1)).abs();
                assert!(err <= threshold + 1e-12, "{kind:?} T={threshold} pixel {i}: {err}");
            }
        }
    }
}

#[test]
fn events_are_sorted_and_inside_the_span() {
    let seq = synthesize(&scene(SceneKind::TwoObjectCrossing)).unwrap();
    let cam = EventCameraModel::for_dims(seq.dims());
    let stream = simulate_events(&seq, &cam).unwrap();
    assert!(!stream.is_empty());
    let (t0, t1) = stream.span();
    assert_eq!((t0, t1), (0, 11 * seq.frame_interval_us()));
    assert!(stream.events().windows(2).all(|w| w[0].t <= w[1].t));
    assert!(stream.events().iter().all(|e| e.t >= t0 && e.t < t1));
    assert_eq!(simulate_events(&seq, &cam).unwrap(), stream);
}

#[test]
fn both_file_formats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synthesize(&scene(SceneKind::RotatingBar)).unwrap();
    let cam = EventCameraModel::for_dims(seq.dims());
    let stream = simulate_events(&seq, &cam).unwrap();
    for format in [EventFormat::Bin16, EventFormat::Csv] {
        let path = dir.path().join(format!("events.{}", format.extension()));
        write_events(&stream, &path, format).unwrap();
        assert_eq!(read_events(&path).unwrap(), stream, "{format:?}");
    }
}

#[test]
fn empty_streams_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cam = EventCameraModel::for_dims(Dims::new(8, 8));
    let stream = EventStream::new(vec![], cam, 0, (0, 5000)).unwrap();
    for format in [EventFormat::Bin16, EventFormat::Csv] {
        let path = dir.path().join(format!("empty.{}", format.extension()));
        write_events(&stream, &path, format).unwrap();
        let back = read_events(&path).unwrap();
        assert!(back.is_empty());
        assert_eq!(back, stream);
    }
}

#[test]
fn truncated_and_corrupt_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cam = EventCameraModel::for_dims(Dims::new(8, 8));
    let events = vec![Event::new(10, 1, 2, 1), Event::new(20, 3, 4, -1)];
    let stream = EventStream::new(events, cam, 0, (0, 100)).unwrap();

    let path = dir.path().join("events.bin16");
    write_events(&stream, &path, EventFormat::Bin16).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(read_events(&path), Err(Error::MalformedRecord { .. })));

    let path = dir.path().join("events.csv");
    write_events(&stream, &path, EventFormat::Csv).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.replace("20,3,4,-1", "20,3,4,7")).unwrap();
    assert!(matches!(read_events(&path), Err(Error::MalformedRecord { .. })));

    fs::remove_file(evsci_core::rawio::sidecar_path(&path)).unwrap();
    assert!(matches!(read_events(&path), Err(Error::Io { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn integration_inverts_a_single_step(a in 0.0f64..1.0, b in 0.0f64..1.0, threshold in 0.02f64..0.5) {
        let frames = vec![
            ndarray::Array2::from_elem((1, 1), a),
            ndarray::Array2::from_elem((1, 1), b),
        ];
        let seq = evsci_core::FrameSequence::new(frames, 1e-3).unwrap();
        let cam = EventCameraModel { threshold, ..EventCameraModel::for_dims(Dims::new(1, 1)) };
        let stream = simulate_events(&seq, &cam).unwrap();
        let expected = ((cam.log_intensity(b) - cam.log_intensity(a)) / threshold).abs().floor() as usize;
        prop_assert!(stream.len().abs_diff(expected) <= 1);
        let rec = integrate_events(a, stream.events().iter().map(|e| e.p), &cam);
        prop_assert!((cam.log_intensity(rec) - cam.log_intensity(b)).abs() <= threshold + 1e-12);
    }
}
