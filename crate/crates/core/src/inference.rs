//! Sliding-window probability maps and their on-disk formats.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::Point;
use crate::error::{Error, Result};
use crate::model::{predict, Checkpoint, PATCH_SIZE};
use crate::patcher::{has_margin, patch_tensor, PATCH_MARGIN};
use crate::preprocess::PreprocessedImage;
use crate::raster::{Mask, Raster};

/// Per-pixel MA probability for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub image_id: String,
    pub scores: Raster,
    pub stride: usize,
    /// Pixels carrying a score: the FOV minus the unscored patch rim.
    pub valid_mask: Mask,
}

impl ProbabilityMap {
    pub fn width(&self) -> usize {
        self.scores.width()
    }

    pub fn height(&self) -> usize {
        self.scores.height()
    }

    /// Check the map invariants: matching sizes, scores in `[0, 1]` and zero
    /// outside the valid mask.
    pub fn validate(&self) -> Result<()> {
        if !self.scores.same_size(&self.valid_mask) {
            return Err(Error::shape(
                "ProbabilityMap",
                &[self.scores.height(), self.scores.width()],
                &[self.valid_mask.height(), self.valid_mask.width()],
            ));
        }
        if self.stride == 0 {
            return Err(Error::invalid("ProbabilityMap", "stride must be at least 1"));
        }
        for (&s, &v) in self.scores.data().iter().zip(self.valid_mask.data()) {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Validation(format!("{}: score {s} outside [0, 1]", self.image_id)));
            }
            if !v && s != 0.0 {
                return Err(Error::Validation(format!(
                    "{}: non-zero score outside the valid mask",
                    self.image_id
                )));
            }
        }
        Ok(())
    }
}

/// FOV pixels whose full patch window lies inside the image.
pub fn valid_region(image: &PreprocessedImage) -> Mask {
    let (w, h) = (image.width(), image.height());
    let mut out = Mask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            if *image.fov_mask.get(x, y) && has_margin(Point::new(x, y), w, h) {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Restricts scoring to grid points where a previous-stage map reaches a
/// threshold; other grid points score 0.
#[derive(Debug, Clone, Copy)]
pub struct Gate<'a> {
    pub map: &'a ProbabilityMap,
    pub threshold: f64,
}

fn on_grid(v: usize, stride: usize) -> bool {
    v >= PATCH_MARGIN && (v - PATCH_MARGIN) % stride == 0
}

/// Score every valid pixel on the stride grid (offset so the first scored
/// centre sits on the patch margin) and fill the remaining valid pixels
/// from the nearest scored grid point.
pub fn infer_map(checkpoint: &Checkpoint, image: &PreprocessedImage, stride: usize) -> Result<ProbabilityMap> {
    infer_map_gated(checkpoint, image, stride, None)
}

pub fn infer_map_gated(
    checkpoint: &Checkpoint,
    image: &PreprocessedImage,
    stride: usize,
    gate: Option<Gate<'_>>,
) -> Result<ProbabilityMap> {
    let expected = [3, PATCH_SIZE, PATCH_SIZE];
    if checkpoint.spec.input_shape() != expected {
        return Err(Error::shape("infer_map", &expected, &checkpoint.spec.input_shape()));
    }
    if stride == 0 {
        return Err(Error::invalid("infer_map", "stride must be at least 1"));
    }
    let (w, h) = (image.width(), image.height());
    if w < PATCH_SIZE || h < PATCH_SIZE {
        return Err(Error::shape("infer_map", &[PATCH_SIZE, PATCH_SIZE], &[h, w]));
    }
    if let Some(g) = gate {
        if g.map.width() != w || g.map.height() != h {
            return Err(Error::shape("infer_map gate", &[h, w], &[g.map.height(), g.map.width()]));
        }
    }
    let valid = valid_region(image);
    let centers: Vec<Point> = (0..h)
        .filter(|&y| on_grid(y, stride))
        .flat_map(|y| (0..w).filter(move |&x| on_grid(x, stride)).map(move |x| Point::new(x, y)))
        .filter(|p| *valid.get(p.x, p.y))
        .collect();
    let scored: Vec<f64> = centers
        .par_iter()
        .map(|&p| {
            if let Some(g) = gate {
                if *g.map.scores.get(p.x, p.y) < g.threshold {
                    return Ok(0.0);
                }
            }
            let x = patch_tensor(image, p)?;
            Ok(predict(&checkpoint.spec, &checkpoint.params, &x)? as f64)
        })
        .collect::<Result<_>>()?;

    let mut grid = Raster::filled(w, h, f64::NAN);
    for (p, s) in centers.iter().zip(&scored) {
        grid.set(p.x, p.y, *s);
    }
    let mut scores = Raster::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            if *valid.get(x, y) {
                scores.set(x, y, nearest_scored(&grid, x, y, stride));
            }
        }
    }
    Ok(ProbabilityMap {
        image_id: image.image_id.clone(),
        scores,
        stride,
        valid_mask: valid,
    })
}

/// Value of the nearest scored grid point (Euclidean, ties to the smaller
/// `(y, x)`). `grid` holds NaN at unscored pixels.
fn nearest_scored(grid: &Raster, x: usize, y: usize, stride: usize) -> f64 {
    let v = *grid.get(x, y);
    if !v.is_nan() {
        return v;
    }
    let (w, h) = (grid.width(), grid.height());
    let mut r = stride;
    loop {
        let mut best: Option<(usize, usize, usize, f64)> = None;
        let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
        let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
        for gy in (y0..=y1).filter(|&v| on_grid(v, stride)) {
            for gx in (x0..=x1).filter(|&v| on_grid(v, stride)) {
                let s = *grid.get(gx, gy);
                if s.is_nan() {
                    continue;
                }
                let d = gx.abs_diff(x).pow(2) + gy.abs_diff(y).pow(2);
                if best.is_none_or(|(bd, by, bx, _)| (d, gy, gx) < (bd, by, bx)) {
                    best = Some((d, gy, gx, s));
                }
            }
        }
        match best {
            Some((d, .., s)) if d <= r * r => return s,
            _ if r > w + h => return best.map_or(0.0, |b| b.3),
            _ => r *= 2,
        }
    }
}

pub const PMAP_MAGIC: &str = "PMAP";
pub const PMAP_VERSION: u32 = 1;

/// Text map: `PMAP 1 <width> <height> <stride>`, then one row of
/// space-separated scores per image row. Scores are written in shortest
/// round-trip form, so reading back reproduces them exactly.
pub fn format_pmap(map: &ProbabilityMap) -> String {
    let (w, h) = (map.width(), map.height());
    let mut s = format!("{PMAP_MAGIC} {PMAP_VERSION} {w} {h} {}\n", map.stride);
    for y in 0..h {
        for x in 0..w {
            if x > 0 {
                s.push(' ');
            }
            write!(s, "{}", map.scores.get(x, y)).expect("write to String");
        }
        s.push('\n');
    }
    s
}

pub fn save_pmap(map: &ProbabilityMap, path: &Path) -> Result<()> {
    std::fs::write(path, format_pmap(map)).map_err(|e| Error::io(path, e))
}

/// Parse a PMAP text. The valid mask is not stored; it is recomputed
/// from the image the map belongs to.
pub fn parse_pmap(text: &str, image: &PreprocessedImage, path: &Path) -> Result<ProbabilityMap> {
    let err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
    if header.len() != 5 || header[0] != PMAP_MAGIC || header[1] != PMAP_VERSION.to_string() {
        return Err(err(1, format!("expected header `{PMAP_MAGIC} {PMAP_VERSION} <width> <height> <stride>`")));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|e| err(1, e.to_string()));
    let (w, h, stride) = (num(header[2])?, num(header[3])?, num(header[4])?);
    if w != image.width() || h != image.height() {
        return Err(Error::shape("parse_pmap", &[image.height(), image.width()], &[h, w]));
    }
    let mut data = Vec::with_capacity(w * h);
    for (i, line) in lines.enumerate() {
        if i >= h {
            if line.trim().is_empty() {
                continue;
            }
            return Err(err(i + 2, "more rows than the header declares".into()));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(tok.parse::<f64>().map_err(|e| err(i + 2, format!("`{tok}`: {e}")))?);
        }
        if data.len() - before != w {
            return Err(err(i + 2, format!("expected {w} values, got {}", data.len() - before)));
        }
    }
    if data.len() != w * h {
        return Err(err(h + 1, format!("expected {h} rows")));
    }
    let map = ProbabilityMap {
        image_id: image.image_id.clone(),
        scores: Raster::from_vec(w, h, data),
        stride,
        valid_mask: valid_region(image),
    };
    map.validate()?;
    Ok(map)
}

pub fn load_pmap(path: &Path, image: &PreprocessedImage) -> Result<ProbabilityMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pmap(&text, image, path)
}

/// Binary 16-bit PGM with `round(score · 65535)` for viewing.
pub fn pgm_bytes(map: &ProbabilityMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", map.width(), map.height()).into_bytes();
    for &s in map.scores.data() {
        let v = (s.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn save_pgm(map: &ProbabilityMap, path: &Path) -> Result<()> {
    std::fs::write(path, pgm_bytes(map)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_basic_spec, init_weights, Params};
    use crate::raster::Planes;

    fn image(w: usize, h: usize) -> PreprocessedImage {
        let data = (0..3 * w * h).map(|i| ((i * 31) % 101) as f64 / 101.0 - 0.5).collect();
        PreprocessedImage {
            image_id: "m".into(),
            residual: Planes::from_vec(3, h, w, data),
            fov_mask: Mask::filled(w, h, true),
        }
    }

    fn zero_checkpoint() -> Checkpoint {
        let spec = build_basic_spec();
        let mut ckpt = init_weights(&spec, 0).unwrap();
        ckpt.params = Params::zeros(&spec).unwrap();
        ckpt
    }

    #[test]
    fn zero_weights_give_one_half_on_the_valid_region() {
        let img = image(104, 103);
        let map = infer_map(&zero_checkpoint(), &img, 2).unwrap();
        map.validate().unwrap();
        assert_eq!(map.valid_mask.count(), 4 * 3);
        for y in 0..103 {
            for x in 0..104 {
                let want = if *map.valid_mask.get(x, y) { 0.5 } else { 0.0 };
                assert_eq!(*map.scores.get(x, y), want);
            }
        }
    }

    #[test]
    fn too_small_image_is_rejected() {
        let err = infer_map(&zero_checkpoint(), &image(100, 120), 1).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn nearest_fill_prefers_the_closest_grid_point() {
        let mut grid = Raster::filled(120, 120, f64::NAN);
        grid.set(50, 50, 1.0);
        grid.set(54, 50, 2.0);
        assert_eq!(nearest_scored(&grid, 51, 50, 4), 1.0);
        assert_eq!(nearest_scored(&grid, 53, 51, 4), 2.0);
        // Equidistant: the smaller (y, x) wins.
        assert_eq!(nearest_scored(&grid, 52, 50, 4), 1.0);
    }

    #[test]
    fn pmap_round_trip_is_exact() {
        let img = image(102, 102);
        let mut map = ProbabilityMap {
            image_id: "m".into(),
            scores: Raster::filled(102, 102, 0.0),
            stride: 1,
            valid_mask: valid_region(&img),
        };
        map.scores.set(50, 50, 0.1 + 0.2);
        map.scores.set(51, 51, 1.0 / 3.0);
        let back = parse_pmap(&format_pmap(&map), &img, Path::new("x")).unwrap();
        assert_eq!(back, map);
        let bad = format_pmap(&map).replacen("PMAP 1", "PMAP 2", 1);
        assert!(parse_pmap(&bad, &img, Path::new("x")).is_err());
    }

    #[test]
    fn pgm_encoding() {
        let img = image(101, 101);
        let mut map = ProbabilityMap {
            image_id: "m".into(),
            scores: Raster::filled(101, 101, 0.0),
            stride: 1,
            valid_mask: valid_region(&img),
        };
        map.scores.set(50, 50, 1.0);
        let bytes = pgm_bytes(&map);
        let header = b"P5\n101 101\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let at = header.len() + 2 * (50 * 101 + 50);
        assert_eq!(&bytes[at..at + 2], &[0xff, 0xff]);
    }
}
