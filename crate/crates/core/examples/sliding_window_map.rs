//! Slide a briefly trained basic network over a whole image and write the
//! probability map as text and as a 16-bit PGM.
//!
//! ```bash
//! cargo run --release --example sliding_window_map -- /tmp/maps
//! ```

use std::path::PathBuf;

use macnn::dataset::{generate_synthetic, SyntheticConfig};
use macnn::inference::{infer_map, save_pgm, save_pmap};
use macnn::model::build_basic_spec;
use macnn::pipeline::preprocess_all;
use macnn::preprocess::DEFAULT_MEDIAN_WINDOW;
use macnn::trainer::{train, Stage, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("macnn-maps"));
    std::fs::create_dir_all(&out)?;

    let (raw, truths) = generate_synthetic(&SyntheticConfig {
        seed: 5,
        n_images: 5,
        ..Default::default()
    })?;
    let images = preprocess_all(&raw, DEFAULT_MEDIAN_WINDOW)?;
    let config = TrainConfig {
        epochs: 8,
        seed: 5,
        ..Default::default()
    };
    let (checkpoint, _) = train(&build_basic_spec(), &images[..4], &truths[..4], &config, Stage::Basic, None)?;

    let image = &images[4];
    let map = infer_map(&checkpoint, image, 4)?;
    save_pmap(&map, &out.join(format!("{}.pmap", image.image_id)))?;
    save_pgm(&map, &out.join(format!("{}.pgm", image.image_id)))?;

    // Off-grid pixels carry the score of their nearest scored grid point.
    let on_lesion: Vec<f64> = truths[4].centroids.iter().map(|c| *map.scores.get(c.x, c.y)).collect();
    let valid = map.valid_mask.count();
    let mean = map.scores.data().iter().sum::<f64>() / valid as f64;
    println!("map {}x{} at stride {}, {valid} valid px", map.width(), map.height(), map.stride);
    println!("mean score over valid px {mean:.3}");
    println!("scores at lesions {:.2?}", on_lesion);
    println!("wrote {}", out.display());
    Ok(())
}
