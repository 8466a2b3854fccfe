//! Generate a seeded synthetic fundus dataset and write it to disk.
//!
//! ```bash
//! cargo run --release --example synthetic_dataset -- /tmp/synthetic
//! ```

use std::path::PathBuf;

use macnn::dataset::{generate_synthetic, load_dataset, save_dataset, SyntheticConfig, DEFAULT_FOV_THRESHOLD};

fn main() -> macnn::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("macnn-synthetic"));

    let cfg = SyntheticConfig {
        seed: 42,
        n_images: 6,
        ..Default::default()
    };
    let (images, truths) = generate_synthetic(&cfg)?;
    save_dataset(&out, &images, &truths)?;

    for (image, truth) in images.iter().zip(&truths) {
        println!(
            "{}: {}x{} px, {} FOV px, {} lesions",
            image.image_id,
            image.width(),
            image.height(),
            image.fov_mask.count(),
            truth.centroids.len()
        );
    }

    let (reloaded, reloaded_truths) = load_dataset(&out, DEFAULT_FOV_THRESHOLD)?;
    assert_eq!(reloaded, images);
    assert_eq!(reloaded_truths, truths);
    println!("wrote {} images to {} (PNG round trip exact)", images.len(), out.display());
    Ok(())
}
