//! Scene generation, split protocols, batch streams and image files.

use proptest::prelude::*;
use segkc::data::{
    generate_scene, make_split, pnm, Augment, BatchStream, SceneDataset, SceneSpec, SplitManifest,
};
use segkc::IGNORE_INDEX;

#[test]
fn class_histogram_is_near_uniform() {
    let spec = SceneSpec { seed: 2024, ..SceneSpec::default() };
    let k = spec.num_classes;
    let mut counts = vec![0u64; k];
    for i in 0..1000 {
        for &l in generate_scene(&spec, i).labels.data() {
            if l != IGNORE_INDEX {
                counts[l as usize] += 1;
            }
        }
    }
    let fg: u64 = counts[1..].iter().sum();
    let uniform = fg as f64 / (k - 1) as f64;
    for (c, &n) in counts.iter().enumerate().skip(1) {
        let dev = (n as f64 - uniform).abs() / uniform;
        assert!(dev <= 0.3, "class {c}: {n} pixels, {:.1}% off uniform", dev * 100.0);
    }
}

#[test]
fn palette_scenes_keep_the_histogram_and_range() {
    let spec = SceneSpec { seed: 5, colors_per_class: 6, ..SceneSpec::default() };
    let palette = spec.palette();
    assert_eq!(palette.len(), spec.num_classes);
    assert!(palette.iter().all(|p| p.len() == 6));
    for i in 0..50 {
        let s = generate_scene(&spec, i);
        s.labels.validate(spec.num_classes, IGNORE_INDEX).unwrap();
        assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn generator_is_pure() {
    let spec = SceneSpec { seed: 77, ..SceneSpec::default() };
    let a: Vec<_> = (0..5).map(|i| generate_scene(&spec, i)).collect();
    let b: Vec<_> = (0..5).rev().map(|i| generate_scene(&spec, i)).collect();
    for (x, y) in a.iter().zip(b.iter().rev()) {
        assert_eq!(x, y);
    }
}

#[test]
fn partition_protocol_counts() {
    assert_eq!(make_split(1464, "1/16", 0).unwrap().labeled_ids.len(), 92);
    assert_eq!(make_split(1464, "1/8", 0).unwrap().labeled_ids.len(), 183);
    assert_eq!(make_split(2975, "1/8", 0).unwrap().labeled_ids.len(), 372);
    let full = make_split(10, "full", 3).unwrap();
    assert_eq!(full.labeled_ids, (0..10).collect::<Vec<_>>());
}

#[test]
fn batches_pair_labeled_and_unlabeled() {
    let spec = SceneSpec { height: 16, width: 16, ..SceneSpec::default() };
    let dataset = SceneDataset::new(spec, 64).unwrap();
    let manifest = make_split(64, "1/8", 1).unwrap();
    let mut stream = BatchStream::new(&manifest, 9, Augment::NONE).unwrap();
    for _ in 0..10 {
        let (l, u) = stream.next_batch(&dataset, 8).unwrap();
        assert_eq!(l.len(), 8);
        assert_eq!(u.len(), 8);
        assert_eq!(l.images.shape(), &[8, 3, 16, 16]);
        assert!(l.ids.iter().all(|&id| manifest.is_labeled(id)));
        assert!(u.ids.iter().all(|&id| !manifest.is_labeled(id)));
        assert!(l.is_labeled.iter().all(|&b| b));
        assert!(u.is_labeled.iter().all(|&b| !b));
        // Unlabeled samples never carry their true labels.
        assert!(u.labels.data().iter().all(|&v| v == IGNORE_INDEX));
        for (i, &id) in l.ids.iter().enumerate() {
            assert_eq!(l.labels.image(i), dataset.sample(id).labels);
        }
    }
}

#[test]
fn single_labeled_sample_cycles() {
    let manifest = SplitManifest {
        dataset_size: 10,
        labeled_ids: vec![4],
        ratio_name: "custom".into(),
        seed: 0,
    };
    let mut stream = BatchStream::new(&manifest, 0, Augment::NONE).unwrap();
    let (l, _) = stream.next_ids(4).unwrap();
    assert_eq!(l, vec![4; 4]);
}

#[test]
fn replay_gives_identical_id_sequences() {
    let manifest = make_split(300, "1/8", 2).unwrap();
    let run = || {
        let mut s = BatchStream::new(&manifest, 31, Augment::NONE).unwrap();
        (0..100).map(|_| s.next_ids(8).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn dataset_round_trips_through_image_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec { height: 12, width: 20, ..SceneSpec::default() };
    let s = generate_scene(&spec, 0);
    let img = dir.path().join("img.ppm");
    let lbl = dir.path().join("lbl.pgm");
    pnm::write(&img, &pnm::encode_ppm(&s.image).unwrap()).unwrap();
    pnm::write(&lbl, &pnm::encode_pgm(&s.labels).unwrap()).unwrap();
    let back = pnm::decode_ppm(&pnm::read(&img).unwrap()).unwrap();
    assert_eq!(back.shape(), s.image.shape());
    for (a, b) in back.data().iter().zip(s.image.data()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
    }
    assert_eq!(pnm::decode_pgm(&pnm::read(&lbl).unwrap()).unwrap(), s.labels);
}

proptest! {
    #[test]
    fn manifests_round_trip(size in 1usize..3000, denom in prop::sample::select(vec![1usize, 2, 4, 8, 16]), seed in any::<u64>()) {
        let ratio = if denom == 1 { "full".to_string() } else { format!("1/{denom}") };
        let m = make_split(size, &ratio, seed).unwrap();
        prop_assert_eq!(m.labeled_ids.len(), size.div_ceil(denom));
        prop_assert!(m.labeled_ids.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(SplitManifest::parse(&m.to_text()).unwrap(), m);
    }
}
