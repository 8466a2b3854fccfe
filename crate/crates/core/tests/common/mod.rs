//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use macnn::dataset::{AnnotationSet, Point};
use macnn::model::{LayerSpec, NetworkSpec};
use macnn::postprocess::Candidate;
use macnn::preprocess::reflect_index;
use macnn::raster::Planes;
use macnn::tensor::Tensor;
use rand::Rng;

/// Valid cross-correlation by direct summation.
pub fn conv_oracle(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Vec<f64> {
    let (ci, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (co, k) = (kernels.shape()[0], kernels.shape()[2]);
    let (oh, ow) = (h - k + 1, w - k + 1);
    let x = input.data();
    let kr = kernels.data();
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for y in 0..oh {
            for xx in 0..ow {
                let mut s = bias.data()[o];
                for c in 0..ci {
                    for dy in 0..k {
                        for dx in 0..k {
                            s += kr[((o * ci + c) * k + dy) * k + dx] * x[(c * h + y + dy) * w + xx + dx];
                        }
                    }
                }
                out[(o * oh + y) * ow + xx] = s;
            }
        }
    }
    out
}

/// Median filter by sorting every window: reflect-101 borders, window
/// starting `ceil(k/2) - 1` samples before the centre, lower median.
pub fn median_oracle(p: &Planes, k: usize) -> Planes {
    let [c, h, w] = p.shape();
    let before = (k.div_ceil(2) - 1) as isize;
    let mut out = Planes::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut win = Vec::with_capacity(k * k);
                for dy in 0..k as isize {
                    for dx in 0..k as isize {
                        let yy = reflect_index(y as isize - before + dy, h);
                        let xx = reflect_index(x as isize - before + dx, w);
                        win.push(p.get(ch, xx, yy));
                    }
                }
                win.sort_by(f64::total_cmp);
                out.set(ch, x, y, win[(k * k - 1) / 2]);
            }
        }
    }
    out
}

/// Greedy matching written out directly: visit candidates by descending
/// score then (y, x); claim the closest free centroid within `radius`.
pub fn greedy_oracle(cands: &[Candidate], truth: &AnnotationSet, radius: usize) -> (usize, usize) {
    let mut c: Vec<&Candidate> = cands.iter().collect();
    c.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then((a.position.y, a.position.x).cmp(&(b.position.y, b.position.x)))
    });
    let mut free: Vec<Point> = truth.centroids.clone();
    let (mut tp, mut fp) = (0, 0);
    for cand in c {
        let mut best: Option<(usize, (usize, usize, usize))> = None;
        for (i, t) in free.iter().enumerate() {
            let dx = t.x as i64 - cand.position.x as i64;
            let dy = t.y as i64 - cand.position.y as i64;
            let d = (dx * dx + dy * dy) as usize;
            if d <= radius * radius {
                let key = (d, t.y, t.x);
                if best.is_none_or(|(_, k)| key < k) {
                    best = Some((i, key));
                }
            }
        }
        match best {
            Some((i, _)) => {
                free.remove(i);
                tp += 1;
            }
            None => fp += 1,
        }
    }
    (tp, fp)
}

/// FROC by re-running matching from scratch at every distinct score.
pub fn froc_oracle(cands: &[Vec<Candidate>], truths: &[AnnotationSet], radius: usize) -> Vec<(f64, f64, f64)> {
    let total: usize = truths.iter().map(|t| t.centroids.len()).sum();
    let n = truths.len() as f64;
    let mut scores: Vec<f64> = cands.iter().flatten().map(|c| c.score).collect();
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
    scores.dedup();
    if scores.is_empty() {
        return vec![(f64::INFINITY, 0.0, 0.0)];
    }
    scores
        .into_iter()
        .map(|t| {
            let (mut tp, mut fp) = (0, 0);
            for (c, truth) in cands.iter().zip(truths) {
                let kept: Vec<Candidate> = c.iter().filter(|c| c.score >= t).cloned().collect();
                let (a, b) = greedy_oracle(&kept, truth, radius);
                tp += a;
                fp += b;
            }
            (t, fp as f64 / n, tp as f64 / total as f64)
        })
        .collect()
}

/// A micro evaluation set: up to 5 images, up to 20 candidates each,
/// clustered near the centroids so matches, near misses and duplicates all
/// occur. Scores come from a small set so ties are common.
pub fn micro_dataset<R: Rng>(rng: &mut R) -> (Vec<Vec<Candidate>>, Vec<AnnotationSet>) {
    let n_img = rng.random_range(1..=5);
    let mut cands = Vec::new();
    let mut truths = Vec::new();
    for i in 0..n_img {
        let id = format!("img{i}");
        let n_gt = rng.random_range(0..=6);
        let centroids: Vec<Point> = (0..n_gt)
            .map(|_| Point::new(rng.random_range(10..60), rng.random_range(10..60)))
            .collect();
        let n_c = rng.random_range(0..=20);
        let mut c = Vec::new();
        for _ in 0..n_c {
            let (bx, by) = match centroids.get(rng.random_range(0..=centroids.len())) {
                Some(p) if rng.random_bool(0.7) => (p.x as i64, p.y as i64),
                _ => (rng.random_range(10..60), rng.random_range(10..60)),
            };
            let x = (bx + rng.random_range(-7..=7)).max(0) as usize;
            let y = (by + rng.random_range(-7..=7)).max(0) as usize;
            let score = if rng.random_bool(0.5) {
                rng.random_range(1..=8) as f64 / 8.0
            } else {
                rng.random_range(0.0..1.0)
            };
            c.push(Candidate {
                image_id: id.clone(),
                position: Point::new(x, y),
                score,
            });
        }
        cands.push(c);
        truths.push(AnnotationSet {
            image_id: id,
            centroids,
        });
    }
    if truths.iter().all(|t| t.centroids.is_empty()) {
        truths[0].centroids.push(Point::new(30, 30));
    }
    (cands, truths)
}

/// Worst relative error between an analytic gradient and central
/// differences of `f` around `x`.
pub fn fd_worst(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], eps: f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = f(&probe);
        probe[i] = x[i] - eps;
        let minus = f(&probe);
        probe[i] = x[i];
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

/// `|a − b| / max(|a|, |b|)`, with differences below 1e-10 in absolute terms
/// treated as exact.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff < 1e-10 {
        return 0.0;
    }
    diff / a.abs().max(b.abs())
}

/// The basic network's layer kinds on a 21×21 input.
pub fn shrunken_spec() -> NetworkSpec {
    use LayerSpec::*;
    NetworkSpec::new(
        "shrunken",
        [3, 21, 21],
        vec![
            Conv { out_channels: 4, kernel: 4 },
            LeakyRelu { slope: 0.01 },
            MaxPool2,
            Dropout { p: 0.25 },
            Conv { out_channels: 4, kernel: 3 },
            LeakyRelu { slope: 0.01 },
            MaxPool2,
            Dropout { p: 0.25 },
            FullyConnected { out: 8 },
            Maxout,
            FullyConnected { out: 6 },
            FullyConnected { out: 2 },
            Softmax,
        ],
    )
    .unwrap()
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}
