//! Train the basic network on balanced patches resampled every epoch, then
//! score a held-out patch set.
//!
//! ```bash
//! cargo run --release --example train_basic -- 12
//! ```

use macnn::dataset::{generate_synthetic, SyntheticConfig};
use macnn::model::build_basic_spec;
use macnn::patcher::{sample_balanced, SamplePlan};
use macnn::pipeline::preprocess_all;
use macnn::preprocess::DEFAULT_MEDIAN_WINDOW;
use macnn::trainer::{evaluate_accuracy, train, Stage, TrainConfig};

fn main() -> macnn::Result<()> {
    let epochs = std::env::args().nth(1).map_or(12, |a| a.parse().expect("epoch count"));
    let (raw, truths) = generate_synthetic(&SyntheticConfig {
        seed: 11,
        n_images: 8,
        ..Default::default()
    })?;
    let images = preprocess_all(&raw, DEFAULT_MEDIAN_WINDOW)?;
    let (train_images, test_images) = images.split_at(6);
    let (train_truths, test_truths) = truths.split_at(6);

    let config = TrainConfig {
        epochs,
        seed: 11,
        ..Default::default()
    };
    let (checkpoint, report) = train(&build_basic_spec(), train_images, train_truths, &config, Stage::Basic, None)?;
    print!("{}", report.to_csv());

    let held_out = sample_balanced(
        test_images,
        test_truths,
        &SamplePlan {
            epoch_size: 200,
            rng_seed: 99,
            ..Default::default()
        },
    )?;
    let accuracy = evaluate_accuracy(&checkpoint, &held_out)?;
    println!("held-out patch accuracy {accuracy:.3} after {:.1} s", report.wall_seconds);
    Ok(())
}
