//! Disk smoothing of probability maps and local-maximum candidate
//! extraction.

use std::path::Path;

use crate::dataset::Point;
use crate::error::{Error, Result};
use crate::inference::ProbabilityMap;
use crate::raster::Raster;

pub const DEFAULT_RADIUS: usize = 5;
pub const DEFAULT_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub image_id: String,
    pub position: Point,
    pub score: f64,
}

/// Lattice offsets `(dx, dy)` with `dx² + dy² ≤ radius²`, row-major.
pub fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn offset(p: usize, d: isize, n: usize) -> Option<usize> {
    let v = p as isize + d;
    (v >= 0 && (v as usize) < n).then_some(v as usize)
}

/// Mean of the map over the disk around each valid pixel, taken over the
/// valid pixels only. Pixels outside the valid mask stay 0.
pub fn disk_smooth(map: &ProbabilityMap, radius: usize) -> Result<ProbabilityMap> {
    if radius == 0 {
        return Err(Error::invalid("disk_smooth", "radius must be at least 1"));
    }
    let (w, h) = (map.width(), map.height());
    let disk = disk_offsets(radius);
    let mut out = Raster::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            if !*map.valid_mask.get(x, y) {
                continue;
            }
            let (mut sum, mut n) = (0.0, 0usize);
            for &(dx, dy) in &disk {
                if let (Some(qx), Some(qy)) = (offset(x, dx, w), offset(y, dy, h)) {
                    if *map.valid_mask.get(qx, qy) {
                        sum += map.scores.get(qx, qy);
                        n += 1;
                    }
                }
            }
            out.set(x, y, sum / n as f64);
        }
    }
    Ok(ProbabilityMap {
        image_id: map.image_id.clone(),
        scores: out,
        stride: map.stride,
        valid_mask: map.valid_mask.clone(),
    })
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Candidates at local maxima of a smoothed map.
///
/// A valid pixel qualifies when its value exceeds `floor` and is at least
/// every valid value within Euclidean distance `radius`. Equal-valued
/// maxima within `radius` of each other form one plateau, reported at its
/// rounded centroid. A final greedy pass in score order keeps every pair
/// of candidates more than `radius` apart. Output is sorted by descending
/// score, then `(y, x)`.
pub fn extract_candidates(smoothed: &ProbabilityMap, radius: usize, floor: f64) -> Vec<Candidate> {
    let (w, h) = (smoothed.width(), smoothed.height());
    let disk = disk_offsets(radius);
    let valid = &smoothed.valid_mask;
    let value = |x: usize, y: usize| *smoothed.scores.get(x, y);

    let mut maxima: Vec<Point> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = value(x, y);
            if !*valid.get(x, y) || !(v > floor) {
                continue;
            }
            let is_max = disk.iter().all(|&(dx, dy)| match (offset(x, dx, w), offset(y, dy, h)) {
                (Some(qx), Some(qy)) => !*valid.get(qx, qy) || value(qx, qy) <= v,
                _ => true,
            });
            if is_max {
                maxima.push(Point::new(x, y));
            }
        }
    }

    let r2 = radius * radius;
    let mut parent: Vec<usize> = (0..maxima.len()).collect();
    for i in 0..maxima.len() {
        for j in i + 1..maxima.len() {
            let (a, b) = (maxima[i], maxima[j]);
            if a.y.abs_diff(b.y) > radius {
                break;
            }
            if a.dist2(&b) <= r2 && value(a.x, a.y) == value(b.x, b.y) {
                let (ra, rb) = (find(&mut parent, i), find(&mut parent, j));
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: Vec<Vec<Point>> = vec![Vec::new(); maxima.len()];
    for i in 0..maxima.len() {
        let root = find(&mut parent, i);
        groups[root].push(maxima[i]);
    }

    let mut raw: Vec<Candidate> = groups
        .into_iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let n = g.len() as f64;
            let cx = (g.iter().map(|p| p.x as f64).sum::<f64>() / n).round() as usize;
            let cy = (g.iter().map(|p| p.y as f64).sum::<f64>() / n).round() as usize;
            let c = Point::new(cx, cy);
            let position = if *valid.get(cx, cy) {
                c
            } else {
                *g.iter().min_by_key(|p| (p.dist2(&c), p.y, p.x)).expect("non-empty")
            };
            Candidate {
                image_id: smoothed.image_id.clone(),
                position,
                score: value(position.x, position.y),
            }
        })
        .collect();
    sort_candidates(&mut raw);

    let mut kept: Vec<Candidate> = Vec::new();
    for c in raw {
        if kept.iter().all(|k| k.position.dist2(&c.position) > r2) {
            kept.push(c);
        }
    }
    kept
}

/// Order by descending score, ties by `(y, x)`.
pub fn sort_candidates(c: &mut [Candidate]) {
    c.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.position.y.cmp(&b.position.y))
            .then(a.position.x.cmp(&b.position.x))
    });
}

pub const CANDIDATE_HEADER: &str = "image_id,x,y,score";

/// Candidate CSV with six-decimal scores.
pub fn format_candidates(candidates: &[Candidate]) -> String {
    let mut s = format!("{CANDIDATE_HEADER}\n");
    for c in candidates {
        s.push_str(&format!("{},{},{},{:.6}\n", c.image_id, c.position.x, c.position.y, c.score));
    }
    s
}

pub fn save_candidates(candidates: &[Candidate], path: &Path) -> Result<()> {
    std::fs::write(path, format_candidates(candidates)).map_err(|e| Error::io(path, e))
}

pub fn parse_candidates(text: &str, path: &Path) -> Result<Vec<Candidate>> {
    let err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l.trim()) != Some(CANDIDATE_HEADER) {
        return Err(err(1, format!("expected header `{CANDIDATE_HEADER}`")));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(err(i + 1, format!("expected 4 fields, got `{line}`")));
        }
        let coord = |s: &str| s.parse::<usize>().map_err(|e| err(i + 1, format!("`{s}`: {e}")));
        let score: f64 = f[3].parse().map_err(|e| err(i + 1, format!("`{}`: {e}", f[3])))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(err(i + 1, format!("score {score} outside [0, 1]")));
        }
        out.push(Candidate {
            image_id: f[0].to_string(),
            position: Point::new(coord(f[1])?, coord(f[2])?),
            score,
        });
    }
    Ok(out)
}

pub fn load_candidates(path: &Path) -> Result<Vec<Candidate>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_candidates(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Mask;

    fn map(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> ProbabilityMap {
        let mut scores = Raster::filled(w, h, 0.0);
        for y in 0..h {
            for x in 0..w {
                scores.set(x, y, f(x, y));
            }
        }
        ProbabilityMap {
            image_id: "t".into(),
            scores,
            stride: 1,
            valid_mask: Mask::filled(w, h, true),
        }
    }

    fn bump(cx: f64, cy: f64) -> impl Fn(usize, usize) -> f64 {
        move |x, y| (-((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / 8.0).exp()
    }

    #[test]
    fn disk_support_at_radius_five() {
        assert_eq!(disk_offsets(5).len(), 81);
        assert_eq!(disk_offsets(1).len(), 5);
    }

    #[test]
    fn impulse_spreads_over_the_disk() {
        let m = map(31, 31, |x, y| f64::from(x == 15 && y == 15));
        let s = disk_smooth(&m, 5).unwrap();
        let nonzero: Vec<f64> = s.scores.data().iter().copied().filter(|&v| v != 0.0).collect();
        assert_eq!(nonzero.len(), 81);
        assert!(nonzero.iter().all(|&v| (v - 1.0 / 81.0).abs() < 1e-15));
    }

    #[test]
    fn constant_map_is_preserved() {
        let mut m = map(20, 17, |_, _| 0.375);
        m.valid_mask.set(0, 0, false);
        m.scores.set(0, 0, 0.0);
        let s = disk_smooth(&m, 5).unwrap();
        for y in 0..17 {
            for x in 0..20 {
                let want = if (x, y) == (0, 0) { 0.0 } else { 0.375 };
                assert!((s.scores.get(x, y) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_bump_gives_one_candidate() {
        let c = extract_candidates(&map(40, 40, bump(17.0, 22.0)), 5, DEFAULT_FLOOR);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].position, Point::new(17, 22));
    }

    #[test]
    fn separated_bumps_give_two_candidates() {
        let (a, b) = (bump(10.0, 20.0), bump(30.0, 20.0));
        let c = extract_candidates(&map(41, 41, |x, y| a(x, y).max(b(x, y))), 5, DEFAULT_FLOOR);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn equal_maxima_close_together_merge_at_their_centroid() {
        let m = map(40, 40, |x, y| f64::from(y == 20 && (x == 17 || x == 20)) * 0.8);
        let s = disk_smooth(&m, 5).unwrap();
        let c = extract_candidates(&s, 5, DEFAULT_FLOOR);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].position, Point::new(19, 20));
        assert_eq!(c[0].score, 1.6 / 81.0);
    }

    #[test]
    fn floor_suppresses_noise() {
        let c = extract_candidates(&map(20, 20, |x, y| 1e-4 * f64::from(x == y)), 5, DEFAULT_FLOOR);
        assert!(c.is_empty());
    }

    #[test]
    fn candidate_csv_round_trip() {
        let c = vec![Candidate {
            image_id: "a".into(),
            position: Point::new(3, 4),
            score: 0.5,
        }];
        let text = format_candidates(&c);
        assert_eq!(text, "image_id,x,y,score\na,3,4,0.500000\n");
        assert_eq!(parse_candidates(&text, Path::new("c")).unwrap(), c);
    }
}
