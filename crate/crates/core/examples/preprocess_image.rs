//! Median-filter background subtraction on one synthetic image.
//!
//! Lesions are dark, so their residual is strongly negative while the
//! flat background sits near zero.

use macnn::dataset::{generate_synthetic, SyntheticConfig};
use macnn::preprocess::{preprocess, DEFAULT_MEDIAN_WINDOW};

fn main() -> macnn::Result<()> {
    let cfg = SyntheticConfig {
        seed: 3,
        n_images: 1,
        ..Default::default()
    };
    let (images, truths) = generate_synthetic(&cfg)?;
    let pre = preprocess(&images[0], DEFAULT_MEDIAN_WINDOW)?;

    let green = pre.residual.plane(1);
    let fov: Vec<f64> = green
        .iter()
        .zip(pre.fov_mask.data())
        .filter(|(_, &inside)| inside)
        .map(|(&v, _)| v)
        .collect();
    let mean = fov.iter().sum::<f64>() / fov.len() as f64;
    let sd = (fov.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / fov.len() as f64).sqrt();
    println!("green residual over the FOV: mean {mean:+.4}, sd {sd:.4}");

    for c in &truths[0].centroids {
        println!("lesion at ({:3}, {:3}): residual {:+.4}", c.x, c.y, pre.residual.get(1, c.x, c.y));
    }
    Ok(())
}
