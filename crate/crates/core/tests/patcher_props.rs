mod common;

use std::collections::HashSet;

use common::*;
use macnn::dataset::{AnnotationSet, Point};
use macnn::inference::ProbabilityMap;
use macnn::patcher::*;
use macnn::preprocess::PreprocessedImage;
use macnn::raster::{Mask, Planes, Raster};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn flat_image(id: &str, size: usize, seed: u64) -> PreprocessedImage {
    let t = random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &[3, size, size]);
    PreprocessedImage {
        image_id: id.into(),
        residual: Planes::from_vec(3, size, size, t.into_data()),
        fov_mask: Mask::filled(size, size, true),
    }
}

fn grid_truth(id: &str, n: usize) -> AnnotationSet {
    AnnotationSet {
        image_id: id.into(),
        centroids: (0..n).map(|i| Point::new(60 + 20 * (i % 5), 60 + 20 * (i / 5))).collect(),
    }
}

fn map_from(image: &PreprocessedImage, f: impl Fn(usize, usize) -> f64) -> ProbabilityMap {
    let (w, h) = (image.width(), image.height());
    let mut scores = Raster::filled(w, h, 0.0);
    let mut valid = Mask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            if has_margin(Point::new(x, y), w, h) {
                valid.set(x, y, true);
                scores.set(x, y, f(x, y));
            }
        }
    }
    ProbabilityMap { image_id: image.image_id.clone(), scores, stride: 1, valid_mask: valid }
}

fn plan(epoch_size: usize, seed: u64) -> SamplePlan {
    SamplePlan { epoch_size, rng_seed: seed, ..Default::default() }
}

/// Every emitted patch: full-size window inside the image, label from the
/// five-pixel rule and pixels equal to the transformed source window.
fn validate_patch(p: &Patch, image: &PreprocessedImage, truth: &AnnotationSet) {
    assert_eq!(p.data.shape(), &[3, 101, 101]);
    assert!(has_margin(p.center, image.width(), image.height()));
    assert_eq!(p.label, label_at(p.center, truth));
    let original = extract_patch(image, truth, p.center).unwrap();
    assert_eq!(augment(&original, p.augment).data, p.data);
}

#[test]
fn stage_one_draws_equal_classes() {
    let image = flat_image("a", 400, 1);
    let truth = grid_truth("a", 10);
    let patches = sample_balanced(std::slice::from_ref(&image), std::slice::from_ref(&truth), &plan(20, 3)).unwrap();
    let ma = patches.iter().filter(|p| p.label == Label::Ma).count();
    assert_eq!((ma, patches.len() - ma), (10, 10));
    for p in &patches {
        validate_patch(p, &image, &truth);
    }
}

#[test]
fn scarce_lesions_are_topped_up_with_augmented_copies() {
    let image = flat_image("a", 300, 2);
    let truth = grid_truth("a", 4);
    let patches = sample_balanced(std::slice::from_ref(&image), std::slice::from_ref(&truth), &plan(20, 5)).unwrap();
    let ma: Vec<&Patch> = patches.iter().filter(|p| p.label == Label::Ma).collect();
    assert_eq!(ma.len(), 10);
    let centres: HashSet<Point> = ma.iter().map(|p| p.center).collect();
    assert_eq!(centres.len(), 4);
    let originals = ma.iter().filter(|p| p.augment == Augment::Identity).count();
    assert_eq!(originals, 4);
    for p in &patches {
        validate_patch(p, &image, &truth);
    }
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let images = [flat_image("a", 250, 3), flat_image("b", 250, 4)];
    let truths = [grid_truth("a", 6), grid_truth("b", 3)];
    let a = sample_balanced_records(&images, &truths, &plan(40, 9)).unwrap();
    let b = sample_balanced_records(&images, &truths, &plan(40, 9)).unwrap();
    let c = sample_balanced_records(&images, &truths, &plan(40, 10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn stage_two_with_a_blank_map_falls_back_to_stage_one() {
    let images = [flat_image("a", 250, 5)];
    let truths = [grid_truth("a", 5)];
    let maps = [map_from(&images[0], |_, _| 0.0)];
    let p = plan(30, 4);
    assert_eq!(
        sample_stage2_records(&images, &truths, &maps, &p).unwrap(),
        sample_balanced_records(&images, &truths, &p).unwrap()
    );
}

#[test]
fn stage_two_negatives_come_from_the_bright_crossing() {
    let images = [flat_image("a", 300, 6)];
    let truths = [grid_truth("a", 5)];
    // A "+" of high probability centred at (200, 200), away from every lesion.
    let on_cross = |x: usize, y: usize| (x == 200 && (180..=220).contains(&y)) || (y == 200 && (180..=220).contains(&x));
    let maps = [map_from(&images[0], |x, y| if on_cross(x, y) { 1.0 } else { 0.0 })];
    let records = sample_stage2_records(&images, &truths, &maps, &plan(40, 8)).unwrap();
    let negatives: Vec<_> = records.iter().filter(|r| r.label == Label::NonMa).collect();
    assert_eq!(negatives.len(), 20);
    assert!(negatives.iter().all(|r| on_cross(r.center.x, r.center.y)));
}

#[test]
fn stage_two_threshold_is_inclusive() {
    let images = [flat_image("a", 300, 7)];
    let truths = [grid_truth("a", 5)];
    let region = |x: usize, y: usize| (190..200).contains(&x) && (190..200).contains(&y);
    let maps = [map_from(&images[0], |x, y| if region(x, y) { 0.5 } else { 0.0 })];
    let records = sample_stage2_records(&images, &truths, &maps, &plan(20, 1)).unwrap();
    assert!(records.iter().filter(|r| r.label == Label::NonMa).all(|r| region(r.center.x, r.center.y)));
}

#[test]
fn stage_two_without_maps_is_a_pipeline_order_error() {
    let images = [flat_image("a", 250, 8)];
    let truths = [grid_truth("a", 5)];
    let err = sample_stage2_records(&images, &truths, &[], &plan(10, 0)).unwrap_err();
    assert_eq!(err.exit_code(), 11);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn class_counts_stay_within_one_of_half(epoch_size in 2usize..80, n_ma in 1usize..12, seed in any::<u64>()) {
        let images = [flat_image("a", 260, 1)];
        let truths = [grid_truth("a", n_ma)];
        let records = sample_balanced_records(&images, &truths, &plan(epoch_size, seed)).unwrap();
        prop_assert_eq!(records.len(), epoch_size);
        let ma = records.iter().filter(|r| r.label == Label::Ma).count() as f64;
        prop_assert!((ma - epoch_size as f64 / 2.0).abs() <= 1.0);
    }

    #[test]
    fn stage_two_negatives_are_hard_when_enough_exist(seed in any::<u64>(), threshold in 0.1f64..0.9) {
        let images = [flat_image("a", 220, 2)];
        let truths = [grid_truth("a", 3)];
        let map_seed = seed.rotate_left(7);
        let maps = [map_from(&images[0], |x, y| {
            // Deterministic pseudo-random score per pixel.
            let h = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ map_seed;
            (h >> 11) as f64 / (1u64 << 53) as f64
        })];
        let p = SamplePlan { epoch_size: 40, stage2_threshold: threshold, rng_seed: seed, ..Default::default() };
        let records = sample_stage2_records(&images, &truths, &maps, &p).unwrap();
        for r in records.iter().filter(|r| r.label == Label::NonMa) {
            prop_assert!(*maps[0].scores.get(r.center.x, r.center.y) >= threshold);
        }
    }

    #[test]
    fn dihedral_identities_hold_on_random_patches(seed in any::<u64>()) {
        let image = flat_image("a", 101, seed);
        let truth = AnnotationSet::empty("a");
        let p = extract_patch(&image, &truth, Point::new(50, 50)).unwrap();
        let apply = |p: &Patch, ops: &[Augment]| ops.iter().fold(p.clone(), |acc, &op| augment(&acc, op));
        use Augment::*;
        prop_assert_eq!(&apply(&p, &[FlipH, FlipH]).data, &p.data);
        prop_assert_eq!(&apply(&p, &[FlipV, FlipV]).data, &p.data);
        prop_assert_eq!(&apply(&p, &[Rot90, Rot90, Rot90, Rot90]).data, &p.data);
        prop_assert_eq!(&apply(&p, &[Rot90, Rot270]).data, &p.data);
        prop_assert_eq!(&apply(&p, &[Rot90, Rot90]).data, &apply(&p, &[Rot180]).data);
        prop_assert_eq!(&apply(&p, &[FlipH, FlipV]).data, &apply(&p, &[Rot180]).data);
    }
}
