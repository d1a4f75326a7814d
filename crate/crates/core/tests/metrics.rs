use evsci_core::metrics::{evaluate_sequence, psnr, ssim};
use evsci_core::scene::synthesize;
use evsci_core::{Dims, FrameSequence, SceneKind, SceneSpec};
use ndarray::Array2;
use proptest::prelude::*;

#[test]
fn constant_offset_psnr_on_the_8_bit_scale() {
    let a = Array2::from_elem((32, 32), 100.0);
    let b = Array2::from_elem((32, 32), 116.0);
    let want = 20.0 * (255.0f64 / 16.0).log10();
    assert!((psnr(&a, &b, 255.0).unwrap() - want).abs() <= 1e-6);
    assert!((want - 24.05).abs() < 0.005);
}

#[test]
fn ssim_of_every_corpus_frame_with_itself_is_one() {
    for kind in SceneKind::ALL {
        for (h, w) in [(64, 64), (48, 80)] {
            let spec = SceneSpec { kind, height: h, width: w, count: 4, ..SceneSpec::default() };
            let seq = synthesize(&spec).unwrap();
            for frame in seq.frames() {
                assert!((ssim(frame, frame).unwrap() - 1.0).abs() <= 1e-12);
            }
            let report = evaluate_sequence(&seq, &seq).unwrap();
            assert_eq!(report.mean_psnr_db, None);
            assert!(report.infinite_psnr_excluded);
            assert!((report.mean_ssim - 1.0).abs() <= 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn ssim_is_symmetric_and_bounded(seed in any::<u64>(), h in 11usize..=24, w in 11usize..=24) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0));
        let b = Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0));
        let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!(psnr(&a, &b, 1.0).unwrap().is_finite());
    }
}

#[test]
fn report_csv_lists_each_frame() {
    let dims = Dims::new(16, 16);
    let a = FrameSequence::new(vec![dims.zeros(), Array2::from_elem(dims.shape(), 0.5)], 1e-3).unwrap();
    let b = FrameSequence::new(vec![Array2::from_elem(dims.shape(), 0.1); 2], 1e-3).unwrap();
    let report = evaluate_sequence(&a, &b).unwrap();
    assert_eq!(report.frame_count, 2);
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!((report.per_frame[0].psnr_db.unwrap() - 20.0).abs() < 1e-9);
}
