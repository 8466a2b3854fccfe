//! Labelled patch extraction, right-angle augmentation and the two
//! sampling regimes: class-balanced (stage one) and probability-map driven
//! hard-negative mining (stage two).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{AnnotationSet, Point};
use crate::error::{Error, Result};
use crate::inference::ProbabilityMap;
use crate::model::PATCH_SIZE;
use crate::preprocess::PreprocessedImage;
use crate::tensor::{Real, Tensor};

/// Pixels between a patch centre and its edge.
pub const PATCH_MARGIN: usize = PATCH_SIZE / 2;

/// A centre within this distance of a centroid is labelled MA.
pub const MA_LABEL_RADIUS: usize = 5;

/// Stage-one negatives keep at least this distance from every centroid.
pub const NEGATIVE_CLEARANCE: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    NonMa,
    Ma,
}

impl Label {
    pub fn target(self) -> u8 {
        match self {
            Label::NonMa => 0,
            Label::Ma => 1,
        }
    }
}

/// Right-angle patch transforms. Rotations are counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Augment {
    Identity,
    FlipH,
    FlipV,
    Rot90,
    Rot180,
    Rot270,
}

impl Augment {
    pub const NON_IDENTITY: [Augment; 5] = [
        Augment::FlipH,
        Augment::FlipV,
        Augment::Rot90,
        Augment::Rot180,
        Augment::Rot270,
    ];

    fn tag(self) -> &'static str {
        match self {
            Augment::Identity => "identity",
            Augment::FlipH => "flip_h",
            Augment::FlipV => "flip_v",
            Augment::Rot90 => "rot90",
            Augment::Rot180 => "rot180",
            Augment::Rot270 => "rot270",
        }
    }

    /// Source pixel `(row, col)` for output pixel `(r, c)` of an `n×n` patch.
    fn source(self, r: usize, c: usize, n: usize) -> (usize, usize) {
        let m = n - 1;
        match self {
            Augment::Identity => (r, c),
            Augment::FlipH => (r, m - c),
            Augment::FlipV => (m - r, c),
            Augment::Rot90 => (c, m - r),
            Augment::Rot180 => (m - r, m - c),
            Augment::Rot270 => (m - c, r),
        }
    }
}

impl fmt::Display for Augment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Augment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [
            Augment::Identity,
            Augment::FlipH,
            Augment::FlipV,
            Augment::Rot90,
            Augment::Rot180,
            Augment::Rot270,
        ]
        .into_iter()
        .find(|a| a.tag() == s)
        .ok_or_else(|| format!("unknown augmentation `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub source_id: String,
    pub center: Point,
    pub data: Tensor,
    pub label: Label,
    /// Transform applied to the window since extraction.
    pub augment: Augment,
}

/// Whether a 101×101 window centred at `p` lies inside a `w×h` image.
pub fn has_margin(p: Point, w: usize, h: usize) -> bool {
    p.x >= PATCH_MARGIN && p.y >= PATCH_MARGIN && p.x + PATCH_MARGIN < w && p.y + PATCH_MARGIN < h
}

fn min_dist2(p: Point, truth: &AnnotationSet) -> usize {
    truth.centroids.iter().map(|c| c.dist2(&p)).min().unwrap_or(usize::MAX)
}

/// Label of a centre pixel: MA iff within 5 px of an annotated centroid.
pub fn label_at(p: Point, truth: &AnnotationSet) -> Label {
    if min_dist2(p, truth) <= MA_LABEL_RADIUS * MA_LABEL_RADIUS {
        Label::Ma
    } else {
        Label::NonMa
    }
}

/// Copy the 3×101×101 window centred at `center` into a tensor.
pub fn patch_tensor(image: &PreprocessedImage, center: Point) -> Result<Tensor> {
    let (w, h) = (image.width(), image.height());
    if !has_margin(center, w, h) {
        return Err(Error::OutOfBounds(format!(
            "{}: patch centre ({}, {}) is closer than {PATCH_MARGIN}px to the border of a {w}x{h} image",
            image.image_id, center.x, center.y
        )));
    }
    let (x0, y0) = (center.x - PATCH_MARGIN, center.y - PATCH_MARGIN);
    let mut data = Vec::with_capacity(3 * PATCH_SIZE * PATCH_SIZE);
    for c in 0..3 {
        let plane = image.residual.plane(c);
        for y in y0..y0 + PATCH_SIZE {
            let row = &plane[y * w + x0..y * w + x0 + PATCH_SIZE];
            data.extend(row.iter().map(|&v| v as Real));
        }
    }
    Tensor::new(vec![3, PATCH_SIZE, PATCH_SIZE], data)
}

/// Extract a labelled patch centred on `center`.
pub fn extract_patch(image: &PreprocessedImage, truth: &AnnotationSet, center: Point) -> Result<Patch> {
    Ok(Patch {
        source_id: image.image_id.clone(),
        center,
        data: patch_tensor(image, center)?,
        label: label_at(center, truth),
        augment: Augment::Identity,
    })
}

/// Apply a right-angle transform to the pixel data; metadata is kept and
/// the transform is recorded in `augment` (composing with any earlier one
/// is not tracked, so only the latest tag is kept).
pub fn augment(patch: &Patch, op: Augment) -> Patch {
    let shape = patch.data.shape();
    let (c, n) = (shape[0], shape[1]);
    let src = patch.data.data();
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..c {
        let base = ch * n * n;
        for r in 0..n {
            for col in 0..n {
                let (sr, sc) = op.source(r, col, n);
                out.push(src[base + sr * n + sc]);
            }
        }
    }
    Patch {
        source_id: patch.source_id.clone(),
        center: patch.center,
        data: Tensor::new(shape.to_vec(), out).expect("same shape"),
        label: patch.label,
        augment: op,
    }
}

/// How one training epoch is drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    pub epoch_size: usize,
    pub ma_fraction: f64,
    pub stage2_threshold: f64,
    pub rng_seed: u64,
}

impl Default for SamplePlan {
    fn default() -> Self {
        Self {
            epoch_size: 256,
            ma_fraction: 0.5,
            stage2_threshold: 0.5,
            rng_seed: 0,
        }
    }
}

impl SamplePlan {
    pub fn validate(&self) -> Result<()> {
        if self.epoch_size == 0 {
            return Err(Error::invalid("SamplePlan", "epoch_size must be positive"));
        }
        if !(self.ma_fraction > 0.0 && self.ma_fraction < 1.0) {
            return Err(Error::invalid("SamplePlan", "ma_fraction must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.stage2_threshold) {
            return Err(Error::invalid("SamplePlan", "stage2_threshold must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn ma_count(&self) -> usize {
        (self.epoch_size as f64 * self.ma_fraction).round() as usize
    }
}

/// A patch identified by where it comes from; pixels are re-derived from
/// the images on demand.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PatchRecord {
    pub image: usize,
    pub center: Point,
    pub label: Label,
    pub augment: Augment,
}

fn ma_pool(images: &[PreprocessedImage], truths: &[AnnotationSet]) -> Vec<(usize, Point)> {
    let mut pool = Vec::new();
    for (i, (img, t)) in images.iter().zip(truths).enumerate() {
        for &c in &t.centroids {
            if has_margin(c, img.width(), img.height()) {
                pool.push((i, c));
            }
        }
    }
    pool
}

/// Stage-one negative locations: FOV pixels with a full window that keep
/// the clearance from every centroid. One list of flat indices per image.
fn easy_negative_pool(images: &[PreprocessedImage], truths: &[AnnotationSet]) -> Vec<Vec<u32>> {
    let clear2 = NEGATIVE_CLEARANCE * NEGATIVE_CLEARANCE;
    images
        .iter()
        .zip(truths)
        .map(|(img, t)| {
            let (w, h) = (img.width(), img.height());
            let mut out = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    let p = Point::new(x, y);
                    if *img.fov_mask.get(x, y) && has_margin(p, w, h) && min_dist2(p, t) >= clear2 {
                        out.push((y * w + x) as u32);
                    }
                }
            }
            out
        })
        .collect()
}

/// Stage-two negative locations: non-MA FOV pixels with a full window
/// whose stage-one probability is at least `threshold`.
fn hard_negative_pool(
    images: &[PreprocessedImage],
    truths: &[AnnotationSet],
    maps: &[ProbabilityMap],
    threshold: f64,
) -> Vec<(usize, Point)> {
    let mut out = Vec::new();
    for (i, ((img, t), map)) in images.iter().zip(truths).zip(maps).enumerate() {
        let (w, h) = (img.width(), img.height());
        for y in 0..h {
            for x in 0..w {
                let p = Point::new(x, y);
                if *map.scores.get(x, y) >= threshold
                    && *img.fov_mask.get(x, y)
                    && has_margin(p, w, h)
                    && label_at(p, t) == Label::NonMa
                {
                    out.push((i, p));
                }
            }
        }
    }
    out
}

fn check_inputs(images: &[PreprocessedImage], truths: &[AnnotationSet]) -> Result<()> {
    if images.len() != truths.len() {
        return Err(Error::Dataset(format!(
            "{} images but {} annotation sets",
            images.len(),
            truths.len()
        )));
    }
    for (img, t) in images.iter().zip(truths) {
        if img.image_id != t.image_id {
            return Err(Error::Dataset(format!(
                "annotation set `{}` is paired with image `{}`",
                t.image_id, img.image_id
            )));
        }
    }
    Ok(())
}

fn draw_records(
    images: &[PreprocessedImage],
    truths: &[AnnotationSet],
    hard: &[(usize, Point)],
    plan: &SamplePlan,
) -> Result<Vec<PatchRecord>> {
    plan.validate()?;
    check_inputs(images, truths)?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.rng_seed);
    let pool = ma_pool(images, truths);
    if pool.is_empty() {
        return Err(Error::Dataset(
            "no annotated lesion has a full patch window inside its image".into(),
        ));
    }
    let n_ma = plan.ma_count();
    let n_neg = plan.epoch_size - n_ma;
    let mut out = Vec::with_capacity(plan.epoch_size);

    // Positives: each pool entry once, then augmented duplicates.
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng);
    for &k in order.iter().take(n_ma) {
        let (image, center) = pool[k];
        out.push(PatchRecord {
            image,
            center,
            label: Label::Ma,
            augment: Augment::Identity,
        });
    }
    for _ in pool.len()..n_ma {
        let (image, center) = pool[rng.random_range(0..pool.len())];
        let augment = Augment::NON_IDENTITY[rng.random_range(0..Augment::NON_IDENTITY.len())];
        out.push(PatchRecord {
            image,
            center,
            label: Label::Ma,
            augment,
        });
    }

    // Negatives: hard ones first, uniform fill for the remainder.
    let neg = |(image, center): (usize, Point)| PatchRecord {
        image,
        center,
        label: Label::NonMa,
        augment: Augment::Identity,
    };
    if hard.len() >= n_neg {
        for k in index::sample(&mut rng, hard.len(), n_neg) {
            out.push(neg(hard[k]));
        }
        return Ok(out);
    }
    out.extend(hard.iter().copied().map(neg));
    let fill = n_neg - hard.len();
    if fill > 0 {
        let easy = easy_negative_pool(images, truths);
        let total: usize = easy.iter().map(Vec::len).sum();
        if total == 0 {
            return Err(Error::Dataset("no eligible non-MA locations".into()));
        }
        let picks: Vec<usize> = if total >= fill {
            index::sample(&mut rng, total, fill).into_vec()
        } else {
            (0..fill).map(|_| rng.random_range(0..total)).collect()
        };
        for mut k in picks {
            let mut image = 0;
            while k >= easy[image].len() {
                k -= easy[image].len();
                image += 1;
            }
            let w = images[image].width();
            let flat = easy[image][k] as usize;
            out.push(neg((image, Point::new(flat % w, flat / w))));
        }
    }
    Ok(out)
}

/// Stage-one draw: `round(epoch_size · ma_fraction)` MA patches, the rest
/// uniform non-MA patches. Deterministic for a fixed `plan.rng_seed`.
pub fn sample_balanced_records(
    images: &[PreprocessedImage],
    truths: &[AnnotationSet],
    plan: &SamplePlan,
) -> Result<Vec<PatchRecord>> {
    draw_records(images, truths, &[], plan)
}

/// Stage-two draw: the same positives, negatives taken from pixels the
/// stage-one map scores at or above `plan.stage2_threshold`; falls back to
/// uniform non-MA sampling for any shortfall.
pub fn sample_stage2_records(
    images: &[PreprocessedImage],
    truths: &[AnnotationSet],
    maps: &[ProbabilityMap],
    plan: &SamplePlan,
) -> Result<Vec<PatchRecord>> {
    if maps.is_empty() || maps.len() != images.len() {
        return Err(Error::PipelineOrder(format!(
            "stage-two sampling needs one stage-one probability map per image ({} maps for {} images)",
            maps.len(),
            images.len()
        )));
    }
    for (m, img) in maps.iter().zip(images) {
        if m.image_id != img.image_id || m.scores.width() != img.width() || m.scores.height() != img.height() {
            return Err(Error::PipelineOrder(format!(
                "probability map `{}` does not match image `{}`",
                m.image_id, img.image_id
            )));
        }
    }
    plan.validate()?;
    check_inputs(images, truths)?;
    let hard = hard_negative_pool(images, truths, maps, plan.stage2_threshold);
    draw_records(images, truths, &hard, plan)
}

/// Build pixel data for recorded patches.
pub fn materialize(
    records: &[PatchRecord],
    images: &[PreprocessedImage],
    truths: &[AnnotationSet],
) -> Result<Vec<Patch>> {
    records
        .iter()
        .map(|r| {
            let img = images
                .get(r.image)
                .ok_or_else(|| Error::Dataset(format!("patch refers to missing image {}", r.image)))?;
            let mut patch = extract_patch(img, &truths[r.image], r.center)?;
            patch.label = r.label;
            if r.augment != Augment::Identity {
                patch = augment(&patch, r.augment);
            }
            Ok(patch)
        })
        .collect()
}

pub fn sample_balanced(
    images: &[PreprocessedImage],
    truths: &[AnnotationSet],
    plan: &SamplePlan,
) -> Result<Vec<Patch>> {
    materialize(&sample_balanced_records(images, truths, plan)?, images, truths)
}

pub fn sample_stage2(
    images: &[PreprocessedImage],
    truths: &[AnnotationSet],
    maps: &[ProbabilityMap],
    plan: &SamplePlan,
) -> Result<Vec<Patch>> {
    materialize(&sample_stage2_records(images, truths, maps, plan)?, images, truths)
}

pub const PATCH_CACHE_HEADER: &str = "source_id,x,y,label,augment";

/// Patch cache: one CSV row per patch (`source_id,x,y,label,augment`,
/// label 1 = MA). Pixel data is never cached.
pub fn format_patch_cache(records: &[PatchRecord], images: &[PreprocessedImage]) -> String {
    let mut s = String::from(PATCH_CACHE_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            images[r.image].image_id,
            r.center.x,
            r.center.y,
            r.label.target(),
            r.augment
        ));
    }
    s
}

pub fn parse_patch_cache(text: &str, images: &[PreprocessedImage], path: &Path) -> Result<Vec<PatchRecord>> {
    let err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l.trim()) != Some(PATCH_CACHE_HEADER) {
        return Err(err(1, format!("expected header `{PATCH_CACHE_HEADER}`")));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(err(i + 1, format!("expected 5 fields, got `{line}`")));
        }
        let image = images
            .iter()
            .position(|img| img.image_id == f[0])
            .ok_or_else(|| err(i + 1, format!("unknown image `{}`", f[0])))?;
        let num = |s: &str| s.parse::<usize>().map_err(|e| err(i + 1, e.to_string()));
        let label = match f[3] {
            "1" => Label::Ma,
            "0" => Label::NonMa,
            other => return Err(err(i + 1, format!("bad label `{other}`"))),
        };
        out.push(PatchRecord {
            image,
            center: Point::new(num(f[1])?, num(f[2])?),
            label,
            augment: f[4].parse().map_err(|e| err(i + 1, e))?,
        });
    }
    Ok(out)
}
