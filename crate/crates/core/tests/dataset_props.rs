use macnn::dataset::*;
use macnn::preprocess::{median_background, preprocess, subtract_background};
use macnn::raster::{Mask, Planes};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quantised_image(w: usize, h: usize, seed: u64) -> Planes {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..3 * w * h).map(|_| f64::from(rng.random::<u8>()) / 255.0).collect();
    Planes::from_vec(3, h, w, data)
}

fn rot90(p: &Planes) -> Planes {
    let n = p.width();
    let mut out = Planes::zeros(p.channels(), n, n);
    for c in 0..p.channels() {
        for y in 0..n {
            for x in 0..n {
                // Counter-clockwise: source column x lands on row n-1-x.
                out.set(c, y, n - 1 - x, p.get(c, x, y));
            }
        }
    }
    out
}

#[test]
fn eight_bit_extremes_map_to_unit_range() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.png");
    let mut p = Planes::zeros(3, 2, 2);
    p.set(1, 1, 0, 1.0);
    save_png(&p, &path).unwrap();
    let img = load_image(&path, DEFAULT_FOV_THRESHOLD).unwrap();
    assert_eq!(img.pixels.get(1, 1, 0), 1.0);
    assert_eq!(img.pixels.get(1, 0, 0), 0.0);
}

#[test]
fn synthetic_sets_validate_against_their_images() {
    let (images, truths) = generate_synthetic(&SyntheticConfig { seed: 77, n_images: 4, ..Default::default() }).unwrap();
    for (img, t) in images.iter().zip(&truths) {
        t.validate(img).unwrap();
        assert!((8..=15).contains(&t.centroids.len()));
        assert!(img.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn png_round_trip_is_exact(w in 1usize..40, h in 1usize..40, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let pixels = quantised_image(w, h, seed);
        save_png(&pixels, &path).unwrap();
        let once = load_image(&path, DEFAULT_FOV_THRESHOLD).unwrap();
        prop_assert_eq!(&once.pixels, &pixels);
        save_png(&once.pixels, &path).unwrap();
        prop_assert_eq!(load_image(&path, DEFAULT_FOV_THRESHOLD).unwrap().pixels, pixels);
    }

    #[test]
    fn single_pixel_marks_give_back_their_points(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points: Vec<Point> = Vec::new();
        for _ in 0..rng.random_range(0..20) {
            let p = Point::new(rng.random_range(0..50), rng.random_range(0..50));
            if points.iter().all(|q| q.dist2(&p) > 9) {
                points.push(p);
            }
        }
        let mut mask = Mask::filled(50, 50, false);
        for p in &points {
            mask.set(p.x, p.y, true);
        }
        let mut got = mask_to_centroids(&mask);
        got.sort();
        points.sort();
        prop_assert_eq!(got, points);
    }

    #[test]
    fn median_commutes_with_rotation_for_odd_windows(n in 4usize..14, half in 0usize..4, seed in any::<u64>()) {
        let k = 2 * half + 1;
        let p = quantised_image(n, n, seed);
        let a = rot90(&median_background(&p, k).unwrap());
        let b = median_background(&rot90(&p), k).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn second_pass_leaves_sparse_lesions_on_flat_background(level in 0.2f64..0.8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 48;
        let mut pixels = Planes::filled(3, n, n, level);
        for _ in 0..4 {
            let (x, y) = (rng.random_range(2..n - 2), rng.random_range(2..n - 2));
            for c in 0..3 {
                pixels.set(c, x, y, level * 0.5);
            }
        }
        let record = ImageRecord { image_id: "flat".into(), fov_mask: Mask::filled(n, n, true), pixels };
        let first = preprocess(&record, 9).unwrap();
        let again = ImageRecord { image_id: "flat".into(), fov_mask: record.fov_mask.clone(), pixels: first.residual.clone() };
        let bg = median_background(&again.pixels, 9).unwrap();
        let second = subtract_background(&again, &bg).unwrap();
        for (a, b) in first.residual.data().iter().zip(second.residual.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}
