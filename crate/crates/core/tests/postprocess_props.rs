use macnn::inference::ProbabilityMap;
use macnn::postprocess::*;
use macnn::raster::{Mask, Raster};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIZE: usize = 48;

/// Random blobby map on a disc-shaped valid region.
fn random_map(seed: u64) -> ProbabilityMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(1..8))
        .map(|_| {
            (
                rng.random_range(0.0..SIZE as f64),
                rng.random_range(0.0..SIZE as f64),
                rng.random_range(1.0..4.0),
                rng.random_range(0.05..1.0),
            )
        })
        .collect();
    let c = SIZE as f64 / 2.0;
    let mut scores = Raster::filled(SIZE, SIZE, 0.0);
    let mut valid = Mask::filled(SIZE, SIZE, false);
    for y in 0..SIZE {
        for x in 0..SIZE {
            let (fx, fy) = (x as f64, y as f64);
            if (fx - c).hypot(fy - c) > c - 2.0 {
                continue;
            }
            valid.set(x, y, true);
            let v = bumps
                .iter()
                .map(|&(bx, by, s, a)| a * (-((fx - bx).powi(2) + (fy - by).powi(2)) / (2.0 * s * s)).exp())
                .fold(0.0, f64::max);
            // Quantise so equal-valued plateaus actually occur.
            scores.set(x, y, (v * 64.0).round() / 64.0);
        }
    }
    ProbabilityMap { image_id: "m".into(), scores, stride: 1, valid_mask: valid }
}

fn combine(a: &ProbabilityMap, b: &ProbabilityMap, wa: f64, wb: f64) -> ProbabilityMap {
    let mut out = a.clone();
    for (o, (x, y)) in out.scores.data_mut().iter_mut().zip(a.scores.data().iter().zip(b.scores.data())) {
        *o = wa * x + wb * y;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn smoothing_is_linear(s1 in any::<u64>(), s2 in any::<u64>(), wa in -2.0f64..2.0, wb in -2.0f64..2.0) {
        let (m1, m2) = (random_map(s1), random_map(s2));
        let mut m2 = m2;
        m2.valid_mask = m1.valid_mask.clone();
        let lhs = disk_smooth(&combine(&m1, &m2, wa, wb), DEFAULT_RADIUS).unwrap();
        let rhs = combine(&disk_smooth(&m1, DEFAULT_RADIUS).unwrap(), &disk_smooth(&m2, DEFAULT_RADIUS).unwrap(), wa, wb);
        for (a, b) in lhs.scores.data().iter().zip(rhs.scores.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn candidates_are_separated_valid_and_scored_from_the_map(seed in any::<u64>(), radius in 1usize..7) {
        let smoothed = disk_smooth(&random_map(seed), radius).unwrap();
        let cands = extract_candidates(&smoothed, radius, DEFAULT_FLOOR);
        for (i, a) in cands.iter().enumerate() {
            prop_assert!(*smoothed.valid_mask.get(a.position.x, a.position.y));
            prop_assert_eq!(a.score, *smoothed.scores.get(a.position.x, a.position.y));
            for b in &cands[i + 1..] {
                prop_assert!(a.position.dist2(&b.position) > radius * radius);
            }
        }
        for pair in cands.windows(2) {
            let key = |c: &Candidate| (c.position.y, c.position.x);
            prop_assert!(pair[0].score > pair[1].score || (pair[0].score == pair[1].score && key(&pair[0]) < key(&pair[1])));
        }
    }

    #[test]
    fn raising_the_floor_never_adds_candidates(seed in any::<u64>(), f1 in 0.0f64..0.6, gap in 0.0f64..0.4) {
        let smoothed = disk_smooth(&random_map(seed), DEFAULT_RADIUS).unwrap();
        let low = extract_candidates(&smoothed, DEFAULT_RADIUS, f1);
        let high = extract_candidates(&smoothed, DEFAULT_RADIUS, f1 + gap);
        prop_assert!(high.len() <= low.len());
    }

    #[test]
    fn candidate_csv_round_trips(seed in any::<u64>()) {
        let smoothed = disk_smooth(&random_map(seed), DEFAULT_RADIUS).unwrap();
        let cands = extract_candidates(&smoothed, DEFAULT_RADIUS, DEFAULT_FLOOR);
        let text = format_candidates(&cands);
        let parsed = parse_candidates(&text, std::path::Path::new("c.csv")).unwrap();
        prop_assert_eq!(format_candidates(&parsed), text);
    }
}
