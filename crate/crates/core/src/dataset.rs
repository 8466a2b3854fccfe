//! Fundus images, ground-truth centroids, field-of-view masks and a
//! deterministic synthetic dataset generator.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::raster::{Mask, Planes};

/// Minimum side length of an image used for training or inference.
pub const MIN_IMAGE_SIDE: usize = 101;

/// Default green-channel threshold for the field-of-view mask.
pub const DEFAULT_FOV_THRESHOLD: f64 = 0.03;

/// Integer pixel position; `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point {
    pub x: usize,
    pub y: usize,
}

impl Point {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn dist2(&self, other: &Point) -> usize {
        let dx = self.x.abs_diff(other.x);
        let dy = self.y.abs_diff(other.y);
        dx * dx + dy * dy
    }
}

/// One fundus image: RGB planes in `[0, 1]` and its field-of-view mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub pixels: Planes,
    pub fov_mask: Mask,
}

impl ImageRecord {
    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }
}

/// Ground-truth microaneurysm centroids of one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSet {
    pub image_id: String,
    pub centroids: Vec<Point>,
}

impl AnnotationSet {
    pub fn empty(image_id: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            centroids: Vec::new(),
        }
    }

    /// Every centroid inside the image and its FOV, no duplicates.
    pub fn validate(&self, image: &ImageRecord) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.centroids {
            if c.x >= image.width() || c.y >= image.height() {
                return Err(Error::Validation(format!(
                    "{}: centroid ({}, {}) outside {}x{} image",
                    self.image_id,
                    c.x,
                    c.y,
                    image.width(),
                    image.height()
                )));
            }
            if !image.fov_mask.get(c.x, c.y) {
                return Err(Error::Validation(format!(
                    "{}: centroid ({}, {}) outside the field of view",
                    self.image_id, c.x, c.y
                )));
            }
            if !seen.insert(*c) {
                return Err(Error::Validation(format!(
                    "{}: duplicate centroid ({}, {})",
                    self.image_id, c.x, c.y
                )));
            }
        }
        Ok(())
    }
}

/// Decode an 8-bit RGB PNG or JPEG. Values are scaled to `[0, 1]` and the
/// FOV mask is computed with `fov_threshold`.
pub fn load_image(path: &Path, fov_threshold: f64) -> Result<ImageRecord> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = match img {
        image::DynamicImage::ImageRgb8(rgb) => rgb,
        other => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("expected 8-bit RGB, found {:?}", other.color()),
            })
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut pixels = Planes::zeros(3, h, w);
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            pixels.set(c, x as usize, y as usize, f64::from(px[c]) / 255.0);
        }
    }
    let fov_mask = compute_fov_mask(&pixels, fov_threshold);
    Ok(ImageRecord {
        image_id: image_id_from_path(path),
        pixels,
        fov_mask,
    })
}

fn image_id_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Encode planes as an 8-bit RGB PNG (values rounded to the nearest level).
pub fn save_png(pixels: &Planes, path: &Path) -> Result<()> {
    if pixels.channels() != 3 {
        return Err(Error::invalid("save_png", "expected three channels"));
    }
    let (w, h) = (pixels.width(), pixels.height());
    let img = ImageBuffer::<Rgb<u8>, _>::from_fn(w as u32, h as u32, |x, y| {
        let q = |c| (pixels.get(c, x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([q(0), q(1), q(2)])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// Image files (`.png`, `.jpg`, `.jpeg`) in `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub const ANNOTATION_HEADER: &str = "image_id,x,y";

/// Parse the centroid CSV (`image_id,x,y`, header required). Sets are
/// returned sorted by image id, centroids sorted by `(y, x)`.
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationSet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, path)
}

pub fn parse_annotations(text: &str, path: &Path) -> Result<Vec<AnnotationSet>> {
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == ANNOTATION_HEADER => {}
        Some((_, header)) => {
            return Err(parse_err(1, format!("expected header `{ANNOTATION_HEADER}`, got `{header}`")))
        }
        None => return Err(parse_err(1, "missing header".into())),
    }
    let mut sets: BTreeMap<String, Vec<Point>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 || fields[0].is_empty() {
            return Err(parse_err(lineno, format!("expected `image_id,x,y`, got `{line}`")));
        }
        let coord = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| parse_err(lineno, format!("bad coordinate `{s}`: {e}")))
        };
        let p = Point::new(coord(fields[1])?, coord(fields[2])?);
        if !seen.insert((fields[0].to_string(), p)) {
            return Err(Error::Validation(format!(
                "{} line {lineno}: duplicate centroid {},{},{}",
                path.display(),
                fields[0],
                p.x,
                p.y
            )));
        }
        sets.entry(fields[0].to_string()).or_default().push(p);
    }
    Ok(sets
        .into_iter()
        .map(|(image_id, mut centroids)| {
            centroids.sort_by_key(|p| (p.y, p.x));
            AnnotationSet {
                image_id,
                centroids,
            }
        })
        .collect())
}

pub fn format_annotations(sets: &[AnnotationSet]) -> String {
    let mut out = String::from(ANNOTATION_HEADER);
    out.push('\n');
    for set in sets {
        for p in &set.centroids {
            let _ = writeln!(out, "{},{},{}", set.image_id, p.x, p.y);
        }
    }
    out
}

pub fn save_annotations(sets: &[AnnotationSet], path: &Path) -> Result<()> {
    fs::write(path, format_annotations(sets)).map_err(|e| Error::io(path, e))
}

const NEIGHBORS8: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];
const NEIGHBORS4: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];

/// Connected components of the `true` pixels, in order of each
/// component's first pixel in a row-major scan.
fn components(mask: &Mask, neighbors: &[(isize, isize)]) -> Vec<Vec<usize>> {
    let (w, h) = (mask.width(), mask.height());
    let mut visited = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.data()[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for &(dx, dy) in neighbors {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.data()[j] && !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// One centroid per 8-connected component, at the rounded mean position.
pub fn mask_to_centroids(mask: &Mask) -> Vec<Point> {
    let w = mask.width();
    components(mask, &NEIGHBORS8)
        .into_iter()
        .map(|comp| {
            let n = comp.len() as f64;
            let sx: f64 = comp.iter().map(|&i| (i % w) as f64).sum();
            let sy: f64 = comp.iter().map(|&i| (i / w) as f64).sum();
            Point::new((sx / n).round() as usize, (sy / n).round() as usize)
        })
        .collect()
}

/// Field-of-view mask: green channel after a 5×5 mean (averaged over the
/// in-bounds part of the window) above `threshold`, reduced to the largest
/// 8-connected component with holes filled.
pub fn compute_fov_mask(pixels: &Planes, threshold: f64) -> Mask {
    let (w, h) = (pixels.width(), pixels.height());
    let green = pixels.plane(1.min(pixels.channels() - 1));
    let mut raw = Mask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let (mut sum, mut n) = (0.0, 0usize);
            for yy in y.saturating_sub(2)..(y + 3).min(h) {
                for xx in x.saturating_sub(2)..(x + 3).min(w) {
                    sum += green[yy * w + xx];
                    n += 1;
                }
            }
            raw.set(x, y, sum / n as f64 > threshold);
        }
    }
    let Some(largest) = components(&raw, &NEIGHBORS8)
        .into_iter()
        .max_by_key(|c| c.len())
    else {
        return raw;
    };
    let mut mask = Mask::filled(w, h, false);
    for i in largest {
        mask.data_mut()[i] = true;
    }
    // Background regions that do not touch the border are holes.
    let outside = mask.map(|&b| !b);
    for comp in components(&outside, &NEIGHBORS4) {
        let touches_border = comp
            .iter()
            .any(|&i| i % w == 0 || i / w == 0 || i % w == w - 1 || i / w == h - 1);
        if !touches_border {
            for i in comp {
                mask.data_mut()[i] = true;
            }
        }
    }
    mask
}

/// Parameters of the synthetic fundus generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_images: usize,
    pub image_size: usize,
    /// Inclusive range of lesions per image.
    pub n_ma_range: (usize, usize),
    /// Inclusive range of peak darkening of a lesion (fraction of the
    /// local green intensity).
    pub contrast_range: (f64, f64),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_images: 20,
            image_size: 200,
            n_ma_range: (8, 15),
            contrast_range: (0.6, 0.9),
        }
    }
}

/// Lesion spacing and border clearance enforced by the generator.
pub const SYNTH_MIN_SPACING: usize = 15;
pub const SYNTH_BORDER: usize = 55;
const PLACEMENT_RETRIES: usize = 10_000;

/// Generate a deterministic synthetic dataset: a bright disc FOV on black,
/// a smooth illumination gradient, dark curvilinear vessels and dark
/// Gaussian lesions of radius 2–5 px at the recorded centroids. Pixel
/// values are quantised to 8-bit levels so a PNG round trip is exact.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(Vec<ImageRecord>, Vec<AnnotationSet>)> {
    if cfg.n_images == 0 {
        return Err(Error::Generation("n_images must be at least 1".into()));
    }
    if cfg.image_size < MIN_IMAGE_SIDE {
        return Err(Error::Generation(format!(
            "image_size {} is below the minimum {MIN_IMAGE_SIDE}",
            cfg.image_size
        )));
    }
    let (lo, hi) = cfg.n_ma_range;
    let (clo, chi) = cfg.contrast_range;
    if lo > hi || !(0.0..=1.0).contains(&clo) || !(0.0..=1.0).contains(&chi) || clo > chi {
        return Err(Error::Generation("invalid lesion count or contrast range".into()));
    }
    let mut images = Vec::with_capacity(cfg.n_images);
    let mut truths = Vec::with_capacity(cfg.n_images);
    for i in 0..cfg.n_images {
        // One independent stream per image keeps images stable when
        // n_images changes.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);
        let id = format!("synth_{i:03}");
        let (record, truth) = synth_one(&id, cfg, &mut rng)?;
        images.push(record);
        truths.push(truth);
    }
    Ok((images, truths))
}

fn synth_one(
    id: &str,
    cfg: &SyntheticConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(ImageRecord, AnnotationSet)> {
    let s = cfg.image_size;
    let sf = s as f64;
    let (cx, cy) = (sf / 2.0 - 0.5, sf / 2.0 - 0.5);
    let radius = 0.47 * sf;

    let base = [
        rng.random_range(0.55..0.70),
        rng.random_range(0.28..0.38),
        rng.random_range(0.10..0.16),
    ];
    let (gx, gy) = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));

    // Vessels: quadratic Bézier strokes, stamped as a darkness field.
    let mut vessel = vec![0.0f64; s * s];
    let n_vessels = rng.random_range(4..=7);
    for _ in 0..n_vessels {
        let mut pt = || {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let r = radius * rng.random_range(0.0..1.0f64).sqrt();
            (cx + r * a.cos(), cy + r * a.sin())
        };
        let (p0, p1, p2) = (pt(), pt(), pt());
        let width: f64 = rng.random_range(1.5..3.5);
        let depth = rng.random_range(0.15..0.35);
        let len = ((p2.0 - p0.0).hypot(p2.1 - p0.1) + (p1.0 - p0.0).hypot(p1.1 - p0.1)).max(1.0);
        let steps = (len * 2.0).ceil() as usize;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let u = 1.0 - t;
            let bx = u * u * p0.0 + 2.0 * u * t * p1.0 + t * t * p2.0;
            let by = u * u * p0.1 + 2.0 * u * t * p1.1 + t * t * p2.1;
            let reach = (width + 2.0).ceil() as isize;
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (x, y) = (bx.round() as isize + dx, by.round() as isize + dy);
                    if x < 0 || y < 0 || x >= s as isize || y >= s as isize {
                        continue;
                    }
                    let d = (x as f64 - bx).hypot(y as f64 - by);
                    let v = depth * (-(d * d) / (2.0 * (width / 2.0).powi(2))).exp();
                    let cell = &mut vessel[y as usize * s + x as usize];
                    *cell = cell.max(v);
                }
            }
        }
    }

    // Lesions.
    let n_ma = rng.random_range(cfg.n_ma_range.0..=cfg.n_ma_range.1);
    let mut centroids: Vec<Point> = Vec::with_capacity(n_ma);
    let mut lesions = Vec::with_capacity(n_ma);
    if n_ma > 0 && s < 2 * SYNTH_BORDER + 1 {
        return Err(Error::Generation(format!(
            "{s}px image leaves no room for lesions {SYNTH_BORDER}px from the border"
        )));
    }
    for _ in 0..n_ma {
        let mut placed = None;
        for _ in 0..PLACEMENT_RETRIES {
            let p = Point::new(
                rng.random_range(SYNTH_BORDER..s - SYNTH_BORDER),
                rng.random_range(SYNTH_BORDER..s - SYNTH_BORDER),
            );
            let inside = (p.x as f64 - cx).hypot(p.y as f64 - cy) < radius - 10.0;
            let spaced = centroids
                .iter()
                .all(|q| q.dist2(&p) >= SYNTH_MIN_SPACING * SYNTH_MIN_SPACING);
            if inside && spaced {
                placed = Some(p);
                break;
            }
        }
        let p = placed.ok_or_else(|| {
            Error::Generation(format!("{id}: could not place lesion {} of {n_ma}", centroids.len() + 1))
        })?;
        let r = rng.random_range(2.0..=5.0f64);
        let contrast = rng.random_range(cfg.contrast_range.0..=cfg.contrast_range.1);
        centroids.push(p);
        lesions.push((p, r / 2.0, contrast));
    }

    let noise = Normal::new(0.0, 0.004).expect("valid sigma");
    let lesion_weight = [0.5, 1.0, 0.7];
    let mut pixels = Planes::zeros(3, s, s);
    for y in 0..s {
        for x in 0..s {
            let (fx, fy) = (x as f64, y as f64);
            let r = (fx - cx).hypot(fy - cy);
            let disc = ((radius - r) / 1.5 + 0.5).clamp(0.0, 1.0);
            if disc == 0.0 {
                continue;
            }
            let illum = (1.0 + gx * (fx - cx) / radius + gy * (fy - cy) / radius)
                * (1.0 - 0.25 * (r / radius).powi(2));
            let v = vessel[y * s + x];
            let mut ma = 0.0f64;
            for &(p, sigma, contrast) in &lesions {
                let d2 = (fx - p.x as f64).powi(2) + (fy - p.y as f64).powi(2);
                if d2 < 100.0 {
                    ma = ma.max(contrast * (-d2 / (2.0 * sigma * sigma)).exp());
                }
            }
            for c in 0..3 {
                let value = base[c] * illum * (1.0 - v) * (1.0 - lesion_weight[c] * ma) * disc
                    + noise.sample(rng) * disc;
                pixels.set(c, x, y, (value.clamp(0.0, 1.0) * 255.0).round() / 255.0);
            }
        }
    }
    let fov_mask = compute_fov_mask(&pixels, DEFAULT_FOV_THRESHOLD);
    centroids.sort_by_key(|p| (p.y, p.x));
    let record = ImageRecord {
        image_id: id.to_string(),
        pixels,
        fov_mask,
    };
    let truth = AnnotationSet {
        image_id: id.to_string(),
        centroids,
    };
    truth.validate(&record)?;
    Ok((record, truth))
}

/// Write a dataset directory: `images/<id>.png` plus `annotations.csv`.
pub fn save_dataset(dir: &Path, images: &[ImageRecord], truths: &[AnnotationSet]) -> Result<()> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    for rec in images {
        save_png(&rec.pixels, &img_dir.join(format!("{}.png", rec.image_id)))?;
    }
    save_annotations(truths, &dir.join("annotations.csv"))
}

/// Load a dataset directory written by [`save_dataset`] (or laid out the
/// same way). Annotation sets are aligned with the images; images without
/// annotations get an empty set. Every set is validated.
pub fn load_dataset(dir: &Path, fov_threshold: f64) -> Result<(Vec<ImageRecord>, Vec<AnnotationSet>)> {
    let img_dir = dir.join("images");
    let paths = list_images(&img_dir)?;
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no images in {}", img_dir.display())));
    }
    let images = paths
        .iter()
        .map(|p| load_image(p, fov_threshold))
        .collect::<Result<Vec<_>>>()?;
    let ann_path = dir.join("annotations.csv");
    let mut by_id: BTreeMap<String, AnnotationSet> = load_annotations(&ann_path)?
        .into_iter()
        .map(|s| (s.image_id.clone(), s))
        .collect();
    let truths: Vec<AnnotationSet> = images
        .iter()
        .map(|img| {
            by_id
                .remove(&img.image_id)
                .unwrap_or_else(|| AnnotationSet::empty(img.image_id.clone()))
        })
        .collect();
    if let Some(orphan) = by_id.keys().next() {
        return Err(Error::Validation(format!(
            "annotations reference unknown image `{orphan}`"
        )));
    }
    for (img, truth) in images.iter().zip(&truths) {
        truth.validate(img)?;
    }
    Ok((images, truths))
}
