use dhformer::dataset::{
    augment, batches, hflip, io, load_clear_depth, make_pair, make_pair_with, mini_dataset, resize_to_train, rot90,
    write_mini_dataset, Augmentation, BatchPlan, DatasetManifest, HazeRanges, Split,
};
use dhformer::scattering::{DepthMap, HazeParams};
use dhformer::{Error, Tensor};
use image::{ImageBuffer, Luma, Rgb, Rgba};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sample_pair(seed: u64, size: usize) -> dhformer::dataset::HazePair {
    let ds = mini_dataset();
    let s = &ds.samples[seed as usize % ds.samples.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pair = make_pair(&s.clear, &s.depth, &HazeRanges::default(), &mut rng).unwrap();
    if size == 32 {
        pair
    } else {
        let clear = resize_to_train(&s.clear).unwrap();
        let depth = DepthMap::new(resize_to_train(s.depth.tensor()).unwrap()).unwrap();
        make_pair_with(&clear, &depth, pair.params, 0.05).unwrap()
    }
}

/// Pixelwise `J·t + A·(1 − t)`, written out independently of the library.
fn hazy_oracle(clear: &Tensor, t: &Tensor, a: f64) -> Vec<f64> {
    let (_, _, h, w) = clear.dims4().unwrap();
    let n = h * w;
    (0..3 * n)
        .map(|i| {
            let tt = t.data()[i % n];
            clear.data()[i] * tt + a * (1.0 - tt)
        })
        .collect()
}

#[test]
fn png_loading_normalizes() {
    let dir = tempfile::tempdir().unwrap();
    let white = dir.path().join("white.png");
    ImageBuffer::<Rgb<u8>, _>::from_raw(4, 3, vec![255u8; 36]).unwrap().save(&white).unwrap();
    let flat = dir.path().join("flat.png");
    ImageBuffer::<Luma<u8>, _>::from_raw(4, 3, vec![77u8; 12]).unwrap().save(&flat).unwrap();
    let (c, d) = load_clear_depth(&white, &flat).unwrap();
    assert_eq!(c.shape(), &[1, 3, 3, 4]);
    assert!(c.data().iter().all(|&v| v == 1.0));
    assert!(d.tensor().data().iter().all(|&v| v == 1.0));

    let deep = dir.path().join("deep.png");
    ImageBuffer::<Luma<u16>, _>::from_raw(2, 1, vec![32768u16, 65535]).unwrap().save(&deep).unwrap();
    let d = io::load_depth(&deep).unwrap();
    assert!((d.tensor().data()[0] - 32768.0 / 65535.0).abs() < 1e-15);
    assert!((d.tensor().data()[0] - 0.50000763).abs() < 1e-8);

    let zero = dir.path().join("zero.png");
    ImageBuffer::<Luma<u8>, _>::from_raw(2, 2, vec![0u8; 4]).unwrap().save(&zero).unwrap();
    assert!(io::load_depth(&zero).unwrap().tensor().data().iter().all(|&v| v == 0.0));
}

#[test]
fn png_loading_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.png");
    assert!(matches!(io::load_rgb(&missing), Err(Error::Io { .. })));
    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"\x89PNG\r\n\x1a\nnot really").unwrap();
    assert!(matches!(io::load_rgb(&junk), Err(Error::Image { .. })));
    let rgba = dir.path().join("rgba.png");
    ImageBuffer::<Rgba<u8>, _>::from_raw(2, 2, vec![9u8; 16]).unwrap().save(&rgba).unwrap();
    assert!(matches!(io::load_rgb(&rgba), Err(Error::Image { .. })));
    assert!(matches!(io::load_depth(&rgba), Err(Error::Image { .. })));
    let small = dir.path().join("small.png");
    ImageBuffer::<Luma<u8>, _>::from_raw(2, 2, vec![1u8; 4]).unwrap().save(&small).unwrap();
    let rgb = dir.path().join("rgb.png");
    ImageBuffer::<Rgb<u8>, _>::from_raw(3, 2, vec![1u8; 18]).unwrap().save(&rgb).unwrap();
    assert!(matches!(load_clear_depth(&rgb, &small), Err(Error::Dimension(_))));
}

#[test]
fn pairs_are_deterministic_and_consistent() {
    let a = sample_pair(3, 32);
    let b = sample_pair(3, 32);
    assert_eq!(a, b);
    let oracle = hazy_oracle(&a.clear, a.transmission.tensor(), a.params.airlight);
    for (x, y) in a.hazy.data().iter().zip(&oracle) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn zero_depth_leaves_the_image_clear() {
    let ds = mini_dataset();
    let clear = &ds.samples[0].clear;
    let depth = DepthMap::new(Tensor::zeros(&[1, 1, 32, 32]).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let p = make_pair(clear, &depth, &HazeRanges::default(), &mut rng).unwrap();
        assert_eq!(&p.hazy, clear);
    }
}

#[test]
fn sampled_parameters_stay_in_range() {
    let ranges = HazeRanges::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10_000 {
        let HazeParams { airlight, beta } = ranges.sample(&mut rng);
        assert!((0.7..=1.0).contains(&airlight));
        assert!((0.4..=1.6).contains(&beta));
    }
    let bad = HazeRanges { airlight: (0.5, 1.2), ..HazeRanges::default() };
    assert!(bad.validate().is_err());
}

#[test]
fn flips_and_rotations_form_groups() {
    let x = Tensor::from_fn(&[2, 3, 5, 7], |i| i as f64).unwrap();
    assert_eq!(hflip(&hflip(&x).unwrap()).unwrap(), x);
    let r = rot90(&x, 1).unwrap();
    assert_eq!(r.shape(), &[2, 3, 7, 5]);
    // top-right corner moves to top-left
    assert_eq!(r.at4(0, 0, 0, 0), x.at4(0, 0, 0, 6));
    assert_eq!(r.at4(1, 2, 6, 4), x.at4(1, 2, 4, 0));
    let mut y = x.clone();
    for _ in 0..4 {
        y = rot90(&y, 1).unwrap();
    }
    assert_eq!(y, x);
    assert_eq!(rot90(&x, 4).unwrap(), x);
}

#[test]
fn augmentation_preserves_the_haze_relation() {
    let pair = sample_pair(5, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let aug = augment(&pair, 16, &mut rng).unwrap();
        assert_eq!(aug.clear.shape(), &[1, 3, 16, 16]);
        assert_eq!(aug.transmission.tensor().shape(), &[1, 1, 16, 16]);
        let oracle = hazy_oracle(&aug.clear, aug.transmission.tensor(), aug.params.airlight);
        for (x, y) in aug.hazy.data().iter().zip(&oracle) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
    let identity = Augmentation::identity(32).apply_pair(&pair).unwrap();
    assert_eq!(identity, pair);
    assert!(matches!(augment(&sample_pair(5, 16), 20, &mut rng), Err(Error::Dimension(_))));
}

#[test]
fn resize_to_train_cases() {
    let x = Tensor::from_fn(&[1, 3, 16, 16], |i| (i % 17) as f64 / 17.0).unwrap();
    assert_eq!(resize_to_train(&x).unwrap(), x);
    let c = Tensor::full(&[1, 3, 37, 23], 0.3).unwrap();
    let r = resize_to_train(&c).unwrap();
    assert_eq!(r.shape(), &[1, 3, 16, 16]);
    assert!(r.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    let board = Tensor::from_fn(&[1, 1, 32, 32], |i| ((i / 32 + i % 32) % 2) as f64).unwrap();
    let mean_before = board.data().iter().sum::<f64>() / board.numel() as f64;
    let small = resize_to_train(&board).unwrap();
    let mean_after = small.data().iter().sum::<f64>() / small.numel() as f64;
    assert!((mean_before - mean_after).abs() <= 0.02);
    assert!(resize_to_train(&Tensor::zeros(&[1, 3, 15, 40]).unwrap()).is_err());
}

#[test]
fn batch_plans() {
    let plan = BatchPlan::new(1000, 16, true, 4).unwrap();
    assert_eq!(plan.batches_per_epoch(), 63);
    let e0 = plan.epoch(0);
    assert_eq!(e0.len(), 63);
    assert_eq!(e0.last().unwrap().len(), 1000 - 62 * 16);
    assert_eq!(e0, BatchPlan::new(1000, 16, true, 4).unwrap().epoch(0));
    assert_eq!(plan.epoch(1), plan.epoch(1));
    assert_ne!(plan.epoch(0), plan.epoch(1));
    let mut flat: Vec<usize> = e0.concat();
    flat.sort();
    assert_eq!(flat, (0..1000).collect::<Vec<_>>());

    let ordered = BatchPlan::new(10, 4, false, 4).unwrap().epoch(3);
    assert_eq!(ordered, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7], vec![8, 9]]);
    assert!(BatchPlan::new(0, 4, false, 0).is_err());
    assert!(BatchPlan::new(4, 0, false, 0).is_err());
}

#[test]
fn emitted_batches_have_training_shapes() {
    let ds = mini_dataset();
    let pairs: Vec<_> = ds.pairs(Split::Train, &HazeRanges::default(), 7).unwrap().into_iter().map(|(_, p)| p).collect();
    assert_eq!(pairs.len(), 56);
    let plan = BatchPlan::new(pairs.len(), 16, true, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bs = batches(&pairs, &plan, 0, 16, &mut rng).unwrap();
    assert_eq!(bs.len(), 4);
    for b in &bs {
        assert_eq!(&b.hazy.shape()[1..], &[3, 16, 16]);
        assert_eq!(b.clear.shape(), b.hazy.shape());
        assert_eq!(&b.transmission.shape()[1..], &[1, 16, 16]);
        assert!(b.hazy.data().iter().chain(b.clear.data()).all(|v| (0.0..=1.0).contains(v)));
        assert!(b.transmission.data().iter().all(|v| (0.05..=1.0).contains(v)));
    }
    assert_eq!(bs[3].len(), 8);
}

#[test]
fn mini_dataset_layout_and_round_trip() {
    let ds = mini_dataset();
    assert_eq!(ds.samples.len(), 64);
    assert_eq!(ds.split(Split::Train).len(), 56);
    assert_eq!(ds.split(Split::Test).len(), 8);
    assert_eq!(ds, mini_dataset());

    let dir = tempfile::tempdir().unwrap();
    let manifest = write_mini_dataset(dir.path()).unwrap();
    let loaded = DatasetManifest::load(&manifest).unwrap().read().unwrap();
    assert_eq!(loaded, ds);
    let first = std::fs::read(dir.path().join("clear/mini_000.png")).unwrap();
    let again = tempfile::tempdir().unwrap();
    write_mini_dataset(again.path()).unwrap();
    assert_eq!(std::fs::read(again.path().join("clear/mini_000.png")).unwrap(), first);
}

#[test]
fn manifest_validation() {
    let base = std::path::Path::new("/data");
    let m = DatasetManifest::parse("a.png\tda.png\ttrain\n# note\n\nb.png\tdb.png\ttest\n", base).unwrap();
    assert_eq!(m.entries.len(), 2);
    assert_eq!(m.entries[1].clear, base.join("b.png"));
    assert!(DatasetManifest::parse("a.png\tda.png\ttrain\na.png\tdb.png\ttest\n", base).is_err());
    let err = DatasetManifest::parse("a.png\tda.png\n", base).unwrap_err().to_string();
    assert!(err.contains("line 1"), "{err}");
    assert!(DatasetManifest::parse("a.png\tda.png\tvalid\n", base).is_err());
    let empty = mini_dataset();
    let test_only = dhformer::dataset::Dataset { samples: empty.split(Split::Test).into_iter().cloned().collect() };
    assert!(matches!(test_only.pairs(Split::Train, &HazeRanges::default(), 0), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn any_augmentation_keeps_the_pair_consistent(seed in 0u64..1000, flip: bool, turns in 0usize..4, y in 0usize..17, x in 0usize..17) {
        let pair = sample_pair(seed, 32);
        let aug = Augmentation { crop: Some((y, x)), crop_size: 16, flip, quarter_turns: turns };
        let out = aug.apply_pair(&pair).unwrap();
        let oracle = hazy_oracle(&out.clear, out.transmission.tensor(), out.params.airlight);
        for (a, b) in out.hazy.data().iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
