//! Turn probability maps into candidates and score them with a FROC curve.
//!
//! The maps here are built by hand: a bump at every true lesion plus a few
//! decoy bumps, so the example runs without training.

use macnn::dataset::{AnnotationSet, Point};
use macnn::evaluation::{cpm, format_operating_points, froc, match_candidates, DEFAULT_MATCH_RADIUS};
use macnn::inference::ProbabilityMap;
use macnn::pipeline::candidates_from_maps;
use macnn::postprocess::{DEFAULT_FLOOR, DEFAULT_RADIUS};
use macnn::raster::{Mask, Raster};

fn bump_map(id: &str, bumps: &[(Point, f64)]) -> ProbabilityMap {
    let size = 160;
    let mut scores = Raster::filled(size, size, 0.0);
    let mut valid = Mask::filled(size, size, false);
    for y in 50..size - 50 {
        for x in 50..size - 50 {
            valid.set(x, y, true);
            let v = bumps
                .iter()
                .map(|(p, peak)| {
                    let d2 = p.dist2(&Point::new(x, y)) as f64;
                    peak * (-d2 / 8.0).exp()
                })
                .fold(0.0, f64::max);
            scores.set(x, y, v);
        }
    }
    ProbabilityMap {
        image_id: id.into(),
        scores,
        stride: 1,
        valid_mask: valid,
    }
}

fn main() -> macnn::Result<()> {
    let truths = vec![
        AnnotationSet {
            image_id: "a".into(),
            centroids: vec![Point::new(60, 60), Point::new(90, 70)],
        },
        AnnotationSet {
            image_id: "b".into(),
            centroids: vec![Point::new(75, 95)],
        },
    ];
    let maps = vec![
        bump_map("a", &[(Point::new(60, 60), 0.9), (Point::new(90, 70), 0.4), (Point::new(100, 100), 0.6)]),
        bump_map("b", &[(Point::new(76, 94), 0.8), (Point::new(55, 105), 0.3)]),
    ];

    let candidates = candidates_from_maps(&maps, DEFAULT_RADIUS, DEFAULT_FLOOR)?;
    for (list, truth) in candidates.iter().zip(&truths) {
        let (stats, hits) = match_candidates(list, truth, DEFAULT_MATCH_RADIUS);
        for (c, hit) in list.iter().zip(&hits) {
            println!(
                "{} ({:3}, {:3}) score {:.4} {}",
                c.image_id,
                c.position.x,
                c.position.y,
                c.score,
                if *hit { "TP" } else { "FP" }
            );
        }
        println!("{}: tp {} fp {} fn {}", truth.image_id, stats.tp, stats.fp, stats.fn_);
    }

    let curve = froc(&candidates, &truths, DEFAULT_MATCH_RADIUS)?;
    print!("{}", format_operating_points(&curve));
    println!("CPM {:.4}", cpm(&curve));
    Ok(())
}
