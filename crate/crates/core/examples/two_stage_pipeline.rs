//! Full cross-validated pipeline on a small synthetic dataset: preprocess,
//! train the basic and final networks per fold, map held-out images and
//! evaluate the pooled candidates.
//!
//! ```bash
//! cargo run --release --example two_stage_pipeline -- /tmp/run
//! ```

use std::path::PathBuf;

use macnn::config::parse_config;
use macnn::dataset::{generate_synthetic, save_dataset};
use macnn::evaluation::{operating_sensitivities, OPERATING_POINTS};

const CONFIG: &str = "\
seed = 3
folds = 2
epochs = 6
infer.stride = 4
synthetic.n_images = 6
";

fn main() -> macnn::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("macnn-pipeline"));
    let cfg = parse_config(CONFIG)?;

    let data = out.join("data");
    let (images, truths) = generate_synthetic(&cfg.synthetic_config())?;
    save_dataset(&data, &images, &truths)?;

    let cv = macnn::pipeline::run_pipeline(&cfg, &data, &out.join("result"))?;
    for fold in &cv.folds {
        println!("fold {}: images {:?}, cpm {:.3}", fold.fold, fold.test_images, fold.cpm);
    }
    for (fp, s) in OPERATING_POINTS.iter().zip(operating_sensitivities(&cv.pooled)) {
        println!("{fp:>6} FP/image: sensitivity {s:.3}");
    }
    println!("pooled CPM {:.3}; outputs in {}", cv.pooled_cpm, out.join("result").display());
    Ok(())
}
