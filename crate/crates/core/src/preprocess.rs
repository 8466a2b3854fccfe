//! Background estimation by a large median filter and its subtraction.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::dataset::ImageRecord;
use crate::error::{Error, Result};
use crate::raster::{Mask, Planes};

/// Default median window side.
pub const DEFAULT_MEDIAN_WINDOW: usize = 30;

/// Background-subtracted image with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedImage {
    pub image_id: String,
    pub residual: Planes,
    pub fov_mask: Mask,
}

impl PreprocessedImage {
    pub fn width(&self) -> usize {
        self.residual.width()
    }

    pub fn height(&self) -> usize {
        self.residual.height()
    }
}

/// Mirror an out-of-range index back into `0..n` without repeating the
/// edge sample (`d c b | a b c d | c b a`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Number of window samples above/left of the centre; the rest of the
/// `k - 1` neighbours lie below/right.
pub fn window_before(k: usize) -> usize {
    k.div_ceil(2) - 1
}

/// Per-channel `k×k` median filter with reflect padding. For even `k` the
/// window spans `ceil(k/2) - 1` pixels above/left of the centre. With an
/// even sample count the lower median is taken.
pub fn median_background(pixels: &Planes, k: usize) -> Result<Planes> {
    if k == 0 {
        return Err(Error::invalid("median_background", "window side must be ≥ 1"));
    }
    let [channels, h, w] = pixels.shape();
    let before = window_before(k) as isize;
    let row_idx = |y: usize| -> Vec<usize> {
        (0..k as isize)
            .map(|d| reflect_index(y as isize - before + d, h))
            .collect()
    };
    let col_of = |x: isize| reflect_index(x - before, w);
    let mid = (k * k - 1) / 2;
    let mut out = Planes::zeros(channels, h, w);
    let mut window: Vec<f64> = Vec::with_capacity(k * k);
    let mut merged: Vec<f64> = Vec::with_capacity(k * k);
    let (mut leave, mut enter) = (Vec::with_capacity(k), Vec::with_capacity(k));
    for c in 0..channels {
        let src = pixels.plane(c);
        for y in 0..h {
            let rows = row_idx(y);
            window.clear();
            for d in 0..k as isize {
                let col = col_of(d);
                window.extend(rows.iter().map(|&r| src[r * w + col]));
            }
            window.sort_unstable_by(f64::total_cmp);
            out.set(c, 0, y, window[mid]);
            for x in 1..w {
                let leaving = col_of(x as isize - 1);
                let entering = col_of(x as isize - 1 + k as isize);
                if leaving != entering {
                    leave.clear();
                    leave.extend(rows.iter().map(|&r| src[r * w + leaving]));
                    leave.sort_unstable_by(f64::total_cmp);
                    enter.clear();
                    enter.extend(rows.iter().map(|&r| src[r * w + entering]));
                    enter.sort_unstable_by(f64::total_cmp);
                    // One merge pass: drop the leaving column, weave in the
                    // entering one. Both are sorted and `leave ⊆ window`.
                    merged.clear();
                    let (mut j, mut e) = (0, 0);
                    for &v in &window {
                        if j < leave.len() && v.total_cmp(&leave[j]).is_eq() {
                            j += 1;
                            continue;
                        }
                        while e < enter.len() && enter[e].total_cmp(&v).is_lt() {
                            merged.push(enter[e]);
                            e += 1;
                        }
                        merged.push(v);
                    }
                    merged.extend_from_slice(&enter[e..]);
                    std::mem::swap(&mut window, &mut merged);
                }
                out.set(c, x, y, window[mid]);
            }
        }
    }
    Ok(out)
}

/// `residual = pixels − background`, clamped to `[-1, 1]`.
pub fn subtract_background(
    image: &ImageRecord,
    background: &Planes,
) -> Result<PreprocessedImage> {
    if image.pixels.shape() != background.shape() {
        return Err(Error::shape(
            "subtract_background",
            &image.pixels.shape(),
            &background.shape(),
        ));
    }
    let [c, h, w] = background.shape();
    let data = image
        .pixels
        .data()
        .iter()
        .zip(background.data())
        .map(|(p, b)| (p - b).clamp(-1.0, 1.0))
        .collect();
    Ok(PreprocessedImage {
        image_id: image.image_id.clone(),
        residual: Planes::from_vec(c, h, w, data),
        fov_mask: image.fov_mask.clone(),
    })
}

/// Median background estimate followed by subtraction.
pub fn preprocess(image: &ImageRecord, k: usize) -> Result<PreprocessedImage> {
    let bg = median_background(&image.pixels, k)?;
    subtract_background(image, &bg)
}

fn encode16(v: f64) -> u16 {
    ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * 65535.0).round() as u16
}

fn decode16(s: u16) -> f64 {
    f64::from(s) / 65535.0 * 2.0 - 1.0
}

/// Write the residual as an offset-encoded 16-bit RGB PNG
/// (`stored = round((value + 1) / 2 · 65535)`) and the FOV mask as an
/// 8-bit grayscale PNG.
pub fn save_preprocessed(img: &PreprocessedImage, residual_path: &Path, fov_path: &Path) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let r = &img.residual;
    let buf = ImageBuffer::<Rgb<u16>, _>::from_fn(w, h, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([encode16(r.get(0, x, y)), encode16(r.get(1, x, y)), encode16(r.get(2, x, y))])
    });
    let fmt_err = |path: &Path, e: image::ImageError| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    buf.save_with_format(residual_path, image::ImageFormat::Png)
        .map_err(|e| fmt_err(residual_path, e))?;
    let mask = ImageBuffer::<Luma<u8>, _>::from_fn(w, h, |x, y| {
        Luma([if *img.fov_mask.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    mask.save_with_format(fov_path, image::ImageFormat::Png)
        .map_err(|e| fmt_err(fov_path, e))
}

/// Read back a pair written by [`save_preprocessed`].
pub fn load_preprocessed(image_id: &str, residual_path: &Path, fov_path: &Path) -> Result<PreprocessedImage> {
    let open = |path: &Path| {
        image::open(path).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    };
    let res = match open(residual_path)? {
        image::DynamicImage::ImageRgb16(b) => b,
        other => {
            return Err(Error::Format {
                path: residual_path.to_path_buf(),
                reason: format!("expected 16-bit RGB residual, found {:?}", other.color()),
            })
        }
    };
    let (w, h) = (res.width() as usize, res.height() as usize);
    let mut residual = Planes::zeros(3, h, w);
    for (x, y, px) in res.enumerate_pixels() {
        for c in 0..3 {
            residual.set(c, x as usize, y as usize, decode16(px[c]));
        }
    }
    let fov = open(fov_path)?.to_luma8();
    if fov.width() as usize != w || fov.height() as usize != h {
        return Err(Error::Format {
            path: fov_path.to_path_buf(),
            reason: "mask size differs from residual".into(),
        });
    }
    let fov_mask = Mask::from_vec(w, h, fov.pixels().map(|p| p[0] > 127).collect());
    Ok(PreprocessedImage {
        image_id: image_id.to_string(),
        residual,
        fov_mask,
    })
}
