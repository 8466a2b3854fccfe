//! Lesion-level matching, FROC curves, CPM and the bundled published
//! reference rows.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{AnnotationSet, Point};
use crate::error::{Error, Result};
use crate::postprocess::{sort_candidates, Candidate};
use crate::raster::Mask;

pub const DEFAULT_MATCH_RADIUS: usize = 5;

/// FP/image operating points averaged by the CPM.
pub const OPERATING_POINTS: [f64; 7] = [0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchStats {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Scored non-MA pixels left undetected; see [`count_true_negatives`].
    pub tn: usize,
}

impl std::ops::AddAssign for MatchStats {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

/// Greedy one-to-one matching. Candidates are visited by descending score
/// (ties by `(y, x)`); each claims the nearest unmatched centroid within
/// `radius`, ties again by `(y, x)`. Returns per-candidate TP flags in
/// input order. `tn` is left at 0.
pub fn match_candidates(candidates: &[Candidate], truth: &AnnotationSet, radius: usize) -> (MatchStats, Vec<bool>) {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let (a, b) = (&candidates[a], &candidates[b]);
        b.score
            .total_cmp(&a.score)
            .then(a.position.y.cmp(&b.position.y))
            .then(a.position.x.cmp(&b.position.x))
    });
    let r2 = radius * radius;
    let mut taken = vec![false; truth.centroids.len()];
    let mut labels = vec![false; candidates.len()];
    for i in order {
        let p = candidates[i].position;
        let best = truth
            .centroids
            .iter()
            .enumerate()
            .filter(|(k, c)| !taken[*k] && c.dist2(&p) <= r2)
            .min_by_key(|(_, c)| (c.dist2(&p), c.y, c.x));
        if let Some((k, _)) = best {
            taken[k] = true;
            labels[i] = true;
        }
    }
    let tp = labels.iter().filter(|&&l| l).count();
    let stats = MatchStats {
        tp,
        fp: candidates.len() - tp,
        fn_: truth.centroids.len() - tp,
        tn: 0,
    };
    (stats, labels)
}

/// Valid pixels farther than `radius` from every centroid and from every
/// candidate.
pub fn count_true_negatives(valid: &Mask, candidates: &[Candidate], truth: &AnnotationSet, radius: usize) -> usize {
    let r2 = radius * radius;
    let mut n = 0;
    for y in 0..valid.height() {
        for x in 0..valid.width() {
            let p = Point::new(x, y);
            if *valid.get(x, y)
                && truth.centroids.iter().all(|c| c.dist2(&p) > r2)
                && candidates.iter().all(|c| c.position.dist2(&p) > r2)
            {
                n += 1;
            }
        }
    }
    n
}

pub fn sensitivity(stats: &MatchStats) -> Result<f64> {
    let total = stats.tp + stats.fn_;
    if total == 0 {
        return Err(Error::UndefinedMetric("sensitivity with no ground-truth lesions".into()));
    }
    Ok(stats.tp as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrocPoint {
    pub threshold: f64,
    pub avg_fp: f64,
    pub sensitivity: f64,
}

/// Points in ascending `avg_fp` (descending threshold) order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrocCurve {
    pub points: Vec<FrocPoint>,
}

fn check_alignment(candidates: &[Vec<Candidate>], truths: &[AnnotationSet]) -> Result<usize> {
    if candidates.len() != truths.len() || truths.is_empty() {
        return Err(Error::Dataset(format!(
            "need one candidate list per image ({} lists, {} annotation sets)",
            candidates.len(),
            truths.len()
        )));
    }
    for (c, t) in candidates.iter().zip(truths) {
        if let Some(bad) = c.iter().find(|c| c.image_id != t.image_id) {
            return Err(Error::Dataset(format!(
                "candidate for `{}` listed under image `{}`",
                bad.image_id, t.image_id
            )));
        }
    }
    let total: usize = truths.iter().map(|t| t.centroids.len()).sum();
    if total == 0 {
        return Err(Error::UndefinedMetric("FROC with no ground-truth lesions".into()));
    }
    Ok(total)
}

/// Sweep every distinct candidate score as a threshold.
///
/// Greedy matching in score order never revisits an earlier decision, so
/// one matching pass over each image's full list yields the matching of
/// every thresholded prefix.
pub fn froc(candidates: &[Vec<Candidate>], truths: &[AnnotationSet], radius: usize) -> Result<FrocCurve> {
    let total = check_alignment(candidates, truths)?;
    let n_images = truths.len() as f64;
    let mut scored: Vec<(f64, bool)> = Vec::new();
    for (c, t) in candidates.iter().zip(truths) {
        let (_, labels) = match_candidates(c, t, radius);
        scored.extend(c.iter().map(|c| c.score).zip(labels));
    }
    if scored.is_empty() {
        return Ok(FrocCurve {
            points: vec![FrocPoint {
                threshold: f64::INFINITY,
                avg_fp: 0.0,
                sensitivity: 0.0,
            }],
        });
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::new();
    for (i, &(score, hit)) in scored.iter().enumerate() {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        if scored.get(i + 1).is_none_or(|next| next.0 != score) {
            points.push(FrocPoint {
                threshold: score,
                avg_fp: fp as f64 / n_images,
                sensitivity: tp as f64 / total as f64,
            });
        }
    }
    Ok(FrocCurve { points })
}

/// Sensitivity at an FP/image rate: 0 below the first point, the last
/// sensitivity beyond the last point, linear interpolation in between.
pub fn sensitivity_at(curve: &FrocCurve, fp_per_img: f64) -> f64 {
    let pts = &curve.points;
    let Some(first) = pts.first() else {
        return 0.0;
    };
    if fp_per_img < first.avg_fp {
        return 0.0;
    }
    let i = pts.partition_point(|p| p.avg_fp <= fp_per_img) - 1;
    let Some(next) = pts.get(i + 1) else {
        return pts[i].sensitivity;
    };
    let a = pts[i];
    let t = (fp_per_img - a.avg_fp) / (next.avg_fp - a.avg_fp);
    a.sensitivity + t * (next.sensitivity - a.sensitivity)
}

/// Mean sensitivity over [`OPERATING_POINTS`].
pub fn cpm(curve: &FrocCurve) -> f64 {
    mean(&operating_sensitivities(curve))
}

pub fn operating_sensitivities(curve: &FrocCurve) -> [f64; 7] {
    OPERATING_POINTS.map(|f| sensitivity_at(curve, f))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub const FROC_HEADER: &str = "threshold,avg_fp_per_image,sensitivity";

pub fn format_froc(curve: &FrocCurve) -> String {
    let mut s = format!("{FROC_HEADER}\n");
    for p in &curve.points {
        s.push_str(&format!("{:.6},{:.6},{:.6}\n", p.threshold, p.avg_fp, p.sensitivity));
    }
    s
}

pub fn parse_froc(text: &str, path: &Path) -> Result<FrocCurve> {
    let err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l.trim()) != Some(FROC_HEADER) {
        return Err(err(1, format!("expected header `{FROC_HEADER}`")));
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| err(i + 1, format!("`{v}`: {e}"))))
            .collect::<Result<_>>()?;
        if f.len() != 3 {
            return Err(err(i + 1, "expected 3 fields".into()));
        }
        points.push(FrocPoint {
            threshold: f[0],
            avg_fp: f[1],
            sensitivity: f[2],
        });
    }
    if points.is_empty() {
        return Err(err(1, "no curve points".into()));
    }
    Ok(FrocCurve { points })
}

pub const OPERATING_HEADER: &str = "fp_per_img,sensitivity";

/// The seven operating-point sensitivities followed by a `cpm` row.
pub fn format_operating_points(curve: &FrocCurve) -> String {
    let mut s = format!("{OPERATING_HEADER}\n");
    let sens = operating_sensitivities(curve);
    for (f, v) in OPERATING_POINTS.iter().zip(sens) {
        s.push_str(&format!("{f},{v:.6}\n"));
    }
    s.push_str(&format!("cpm,{:.6}\n", mean(&sens)));
    s
}

/// A published result row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRow {
    pub dataset: String,
    pub method: String,
    pub sensitivities: Option<[f64; 7]>,
    pub reported_cpm: Option<f64>,
}

/// Allowed gap between a row's mean and its reported CPM before the row is
/// flagged.
pub const CPM_TOLERANCE: f64 = 0.01;

impl ReferenceRow {
    pub fn row_cpm(&self) -> Option<f64> {
        self.sensitivities.map(|s| mean(&s))
    }

    /// `|row mean − reported CPM|` when both are available.
    pub fn discrepancy(&self) -> Option<f64> {
        Some((self.row_cpm()? - self.reported_cpm?).abs())
    }

    pub fn is_flagged(&self) -> bool {
        self.discrepancy().is_some_and(|d| d > CPM_TOLERANCE)
    }
}

const REFERENCE_CSV: &str = include_str!("../data/reference_tables.csv");

pub fn reference_tables() -> Vec<ReferenceRow> {
    parse_reference_tables(REFERENCE_CSV).expect("bundled reference tables are well formed")
}

fn parse_reference_tables(text: &str) -> Result<Vec<ReferenceRow>> {
    let path = Path::new("reference_tables.csv");
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        if f.len() != 10 {
            return Err(err("expected 10 fields".into()));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| err(format!("`{s}`: {e}")))
            }
        };
        let vals: Vec<Option<f64>> = f[2..9].iter().map(|s| num(s)).collect::<Result<_>>()?;
        let sensitivities = if vals.iter().all(Option::is_some) {
            let mut a = [0.0; 7];
            for (d, v) in a.iter_mut().zip(vals) {
                *d = v.expect("checked");
            }
            Some(a)
        } else {
            None
        };
        out.push(ReferenceRow {
            dataset: f[0].into(),
            method: f[1].into(),
            sensitivities,
            reported_cpm: num(f[9])?,
        });
    }
    Ok(out)
}

/// Deterministic fold index per image: a seeded permutation dealt
/// round-robin, so fold sizes differ by at most one.
pub fn fold_assignment(n_images: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 || n_images < folds {
        return Err(Error::Config {
            key: "folds".into(),
            line: 0,
            reason: format!("{folds} folds need at least 2 folds and {folds} images; got {n_images} images"),
        });
    }
    let mut order: Vec<usize> = (0..n_images).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n_images];
    for (pos, &img) in order.iter().enumerate() {
        fold[img] = pos % folds;
    }
    Ok(fold)
}

/// Sort every per-image candidate list into the canonical order.
pub fn canonical_order(candidates: &mut [Vec<Candidate>]) {
    for c in candidates {
        sort_candidates(c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(x: usize, y: usize, score: f64) -> Candidate {
        Candidate {
            image_id: "i".into(),
            position: Point::new(x, y),
            score,
        }
    }

    fn truth(pts: &[(usize, usize)]) -> AnnotationSet {
        AnnotationSet {
            image_id: "i".into(),
            centroids: pts.iter().map(|&(x, y)| Point::new(x, y)).collect(),
        }
    }

    #[test]
    fn five_pixel_rule() {
        let t = truth(&[(50, 50)]);
        assert_eq!(match_candidates(&[cand(54, 50, 0.9)], &t, 5).0.tp, 1);
        assert_eq!(match_candidates(&[cand(56, 50, 0.9)], &t, 5).0.fp, 1);
        let (s, l) = match_candidates(&[cand(52, 50, 0.4), cand(51, 50, 0.9)], &t, 5);
        assert_eq!((s.tp, s.fp, s.fn_), (1, 1, 0));
        assert_eq!(l, vec![false, true]);
    }

    #[test]
    fn sensitivity_cases() {
        let s = |tp, fn_| sensitivity(&MatchStats { tp, fn_, ..Default::default() });
        assert_eq!(s(3, 1).unwrap(), 0.75);
        assert_eq!(s(2, 0).unwrap(), 1.0);
        assert_eq!(s(0, 4).unwrap(), 0.0);
        assert!(matches!(s(0, 0), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn froc_edge_cases() {
        let t = vec![truth(&[(10, 10), (40, 40)])];
        let empty = froc(&[vec![]], &t, 5).unwrap();
        assert_eq!((empty.points[0].avg_fp, empty.points[0].sensitivity), (0.0, 0.0));
        let perfect = froc(&[vec![cand(10, 10, 0.9), cand(40, 40, 0.8)]], &t, 5).unwrap();
        let last = perfect.points.last().unwrap();
        assert_eq!((last.avg_fp, last.sensitivity), (0.0, 1.0));
        assert!(froc(&[vec![]], &[truth(&[])], 5).is_err());
    }

    #[test]
    fn interpolation_and_clamping() {
        let curve = FrocCurve {
            points: vec![
                FrocPoint { threshold: 0.9, avg_fp: 1.0, sensitivity: 0.5 },
                FrocPoint { threshold: 0.5, avg_fp: 2.0, sensitivity: 0.7 },
            ],
        };
        assert!((sensitivity_at(&curve, 1.5) - 0.6).abs() < 1e-12);
        assert_eq!(sensitivity_at(&curve, 8.0), 0.7);
        assert_eq!(sensitivity_at(&curve, 0.5), 0.0);
        let flat = FrocCurve {
            points: vec![FrocPoint { threshold: 0.1, avg_fp: 0.0, sensitivity: 0.3 }],
        };
        assert!((cpm(&flat) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn reference_rows_and_flags() {
        let rows = reference_tables();
        assert_eq!(rows.len(), 10);
        let flagged: Vec<_> = rows.iter().filter(|r| r.is_flagged()).map(|r| (r.dataset.as_str(), r.method.as_str())).collect();
        assert_eq!(flagged, vec![("E-Ophtha-MA", "Proposed"), ("E-Ophtha-MA", "B Wu")]);
    }

    #[test]
    fn folds_partition_images() {
        let f = fold_assignment(20, 4, 7).unwrap();
        for k in 0..4 {
            assert_eq!(f.iter().filter(|&&v| v == k).count(), 5);
        }
        assert_eq!(f, fold_assignment(20, 4, 7).unwrap());
        assert!(matches!(fold_assignment(3, 4, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn operating_point_report() {
        let flat = FrocCurve {
            points: vec![FrocPoint { threshold: 0.1, avg_fp: 0.0, sensitivity: 0.5 }],
        };
        let text = format_operating_points(&flat);
        assert!(text.starts_with("fp_per_img,sensitivity\n0.125,0.500000\n"));
        assert!(text.ends_with("8,0.500000\ncpm,0.500000\n"));
    }
}
