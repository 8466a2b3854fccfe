//! Run configuration (`key = value` text with `#` comments) and the JSON
//! manifest written next to every run's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataset::SyntheticConfig;
use crate::error::{Error, Result};
use crate::model::ArchOptions;
use crate::patcher::SamplePlan;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub epoch_size: usize,
    pub ma_fraction: f64,
    pub stage2_threshold: f64,
    pub fov_threshold: f64,
    pub median_window: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub maxout: bool,
    pub infer_stride: usize,
    pub infer_cascade: bool,
    pub post_radius: usize,
    pub post_floor: f64,
    pub eval_radius: usize,
    pub folds: usize,
    pub synthetic_n_images: usize,
    pub synthetic_image_size: usize,
    pub synthetic_min_lesions: usize,
    pub synthetic_max_lesions: usize,
    pub synthetic_min_contrast: f64,
    pub synthetic_max_contrast: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SyntheticConfig::default();
        let arch = ArchOptions::default();
        Self {
            seed: 0,
            threads: 1,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 10,
            epoch_size: 256,
            ma_fraction: 0.5,
            stage2_threshold: 0.5,
            fov_threshold: crate::dataset::DEFAULT_FOV_THRESHOLD,
            median_window: crate::preprocess::DEFAULT_MEDIAN_WINDOW,
            leaky_slope: arch.leaky_slope,
            dropout: arch.dropout,
            maxout: arch.maxout,
            infer_stride: 1,
            infer_cascade: true,
            post_radius: crate::postprocess::DEFAULT_RADIUS,
            post_floor: crate::postprocess::DEFAULT_FLOOR,
            eval_radius: crate::evaluation::DEFAULT_MATCH_RADIUS,
            folds: 4,
            synthetic_n_images: synth.n_images,
            synthetic_image_size: synth.image_size,
            synthetic_min_lesions: synth.n_ma_range.0,
            synthetic_max_lesions: synth.n_ma_range.1,
            synthetic_min_contrast: synth.contrast_range.0,
            synthetic_max_contrast: synth.contrast_range.1,
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: [&str; 26] = [
    "seed",
    "threads",
    "learning_rate",
    "momentum",
    "batch_size",
    "epochs",
    "epoch_size",
    "ma_fraction",
    "stage2.threshold",
    "fov.threshold",
    "median.window",
    "model.leaky_slope",
    "model.dropout",
    "model.maxout",
    "infer.stride",
    "infer.cascade",
    "post.radius",
    "post.floor",
    "eval.radius",
    "folds",
    "synthetic.n_images",
    "synthetic.image_size",
    "synthetic.min_lesions",
    "synthetic.max_lesions",
    "synthetic.min_contrast",
    "synthetic.max_contrast",
];

fn parse_value<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("cannot parse `{value}`: {e}"))
}

fn check(ok: bool, msg: &str) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

impl RunConfig {
    /// Assign one key from its text value, checking the value's own
    /// constraint.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "seed" => self.seed = parse_value(value)?,
            "threads" => {
                self.threads = parse_value(value)?;
                check(self.threads >= 1, "must be at least 1")?;
            }
            "learning_rate" => {
                self.learning_rate = parse_value(value)?;
                check(self.learning_rate > 0.0 && self.learning_rate.is_finite(), "must be positive")?;
            }
            "momentum" => {
                self.momentum = parse_value(value)?;
                check((0.0..1.0).contains(&self.momentum), "must lie in [0, 1)")?;
            }
            "batch_size" => {
                self.batch_size = parse_value(value)?;
                check(self.batch_size >= 1, "must be at least 1")?;
            }
            "epochs" => self.epochs = parse_value(value)?,
            "epoch_size" => {
                self.epoch_size = parse_value(value)?;
                check(self.epoch_size >= 2, "must be at least 2")?;
            }
            "ma_fraction" => {
                self.ma_fraction = parse_value(value)?;
                check(self.ma_fraction > 0.0 && self.ma_fraction < 1.0, "must lie in (0, 1)")?;
            }
            "stage2.threshold" => {
                self.stage2_threshold = parse_value(value)?;
                check((0.0..=1.0).contains(&self.stage2_threshold), "must lie in [0, 1]")?;
            }
            "fov.threshold" => {
                self.fov_threshold = parse_value(value)?;
                check((0.0..1.0).contains(&self.fov_threshold), "must lie in [0, 1)")?;
            }
            "median.window" => {
                self.median_window = parse_value(value)?;
                check(self.median_window >= 1, "must be at least 1")?;
            }
            "model.leaky_slope" => {
                self.leaky_slope = parse_value(value)?;
                check((0.0..1.0).contains(&self.leaky_slope), "must lie in [0, 1)")?;
            }
            "model.dropout" => {
                self.dropout = parse_value(value)?;
                check((0.0..1.0).contains(&self.dropout), "must lie in [0, 1)")?;
            }
            "model.maxout" => self.maxout = parse_value(value)?,
            "infer.stride" => {
                self.infer_stride = parse_value(value)?;
                check(self.infer_stride >= 1, "must be at least 1")?;
            }
            "infer.cascade" => self.infer_cascade = parse_value(value)?,
            "post.radius" => {
                self.post_radius = parse_value(value)?;
                check(self.post_radius >= 1, "must be at least 1")?;
            }
            "post.floor" => {
                self.post_floor = parse_value(value)?;
                check((0.0..1.0).contains(&self.post_floor), "must lie in [0, 1)")?;
            }
            "eval.radius" => self.eval_radius = parse_value(value)?,
            "folds" => {
                self.folds = parse_value(value)?;
                check(self.folds >= 2, "must be at least 2")?;
            }
            "synthetic.n_images" => {
                self.synthetic_n_images = parse_value(value)?;
                check(self.synthetic_n_images >= 1, "must be at least 1")?;
            }
            "synthetic.image_size" => self.synthetic_image_size = parse_value(value)?,
            "synthetic.min_lesions" => self.synthetic_min_lesions = parse_value(value)?,
            "synthetic.max_lesions" => self.synthetic_max_lesions = parse_value(value)?,
            "synthetic.min_contrast" => {
                self.synthetic_min_contrast = parse_value(value)?;
                check((0.0..=1.0).contains(&self.synthetic_min_contrast), "must lie in [0, 1]")?;
            }
            "synthetic.max_contrast" => {
                self.synthetic_max_contrast = parse_value(value)?;
                check((0.0..=1.0).contains(&self.synthetic_max_contrast), "must lie in [0, 1]")?;
            }
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Constraints spanning several keys; returns the offending key.
    fn cross_check(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.synthetic_min_lesions > self.synthetic_max_lesions {
            return Err(("synthetic.max_lesions", "must not be below synthetic.min_lesions".into()));
        }
        if self.synthetic_min_contrast > self.synthetic_max_contrast {
            return Err(("synthetic.max_contrast", "must not be below synthetic.min_contrast".into()));
        }
        Ok(())
    }

    /// Effective value of every key as text.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let v: [String; 26] = [
            self.seed.to_string(),
            self.threads.to_string(),
            self.learning_rate.to_string(),
            self.momentum.to_string(),
            self.batch_size.to_string(),
            self.epochs.to_string(),
            self.epoch_size.to_string(),
            self.ma_fraction.to_string(),
            self.stage2_threshold.to_string(),
            self.fov_threshold.to_string(),
            self.median_window.to_string(),
            self.leaky_slope.to_string(),
            self.dropout.to_string(),
            self.maxout.to_string(),
            self.infer_stride.to_string(),
            self.infer_cascade.to_string(),
            self.post_radius.to_string(),
            self.post_floor.to_string(),
            self.eval_radius.to_string(),
            self.folds.to_string(),
            self.synthetic_n_images.to_string(),
            self.synthetic_image_size.to_string(),
            self.synthetic_min_lesions.to_string(),
            self.synthetic_max_lesions.to_string(),
            self.synthetic_min_contrast.to_string(),
            self.synthetic_max_contrast.to_string(),
        ];
        KEYS.into_iter().zip(v).collect()
    }

    /// The config in its own file syntax; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            plan: self.sample_plan(),
        }
    }

    pub fn sample_plan(&self) -> SamplePlan {
        SamplePlan {
            epoch_size: self.epoch_size,
            ma_fraction: self.ma_fraction,
            stage2_threshold: self.stage2_threshold,
            rng_seed: self.seed,
        }
    }

    pub fn arch_options(&self) -> ArchOptions {
        ArchOptions {
            leaky_slope: self.leaky_slope,
            dropout: self.dropout,
            maxout: self.maxout,
        }
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            seed: self.seed,
            n_images: self.synthetic_n_images,
            image_size: self.synthetic_image_size,
            n_ma_range: (self.synthetic_min_lesions, self.synthetic_max_lesions),
            contrast_range: (self.synthetic_min_contrast, self.synthetic_max_contrast),
        }
    }
}

/// Parse config text. Absent keys keep their defaults; unknown or repeated
/// keys, unparsable values and violated constraints are errors naming the
/// key and its 1-based line.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |key: &str, reason: String| Error::Config {
            key: key.to_string(),
            line,
            reason,
        };
        let Some((key, value)) = content.split_once('=') else {
            return Err(err(content, "expected `key = value`".into()));
        };
        let (key, value) = (key.trim(), value.trim());
        if let Some(first) = seen.insert(key.to_string(), line) {
            return Err(err(key, format!("already set on line {first}")));
        }
        cfg.set(key, value).map_err(|reason| err(key, reason))?;
    }
    cfg.cross_check().map_err(|(key, reason)| Error::Config {
        key: key.to_string(),
        line: seen.get(key).copied().unwrap_or(0),
        reason,
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Versions of the on-disk formats this build reads and writes.
pub fn format_versions() -> BTreeMap<&'static str, String> {
    BTreeMap::from([
        ("checkpoint", String::from_utf8_lossy(crate::model::MAGIC).into_owned()),
        ("pmap", format!("{} {}", crate::inference::PMAP_MAGIC, crate::inference::PMAP_VERSION)),
        ("annotations", crate::dataset::ANNOTATION_HEADER.to_string()),
        ("candidates", crate::postprocess::CANDIDATE_HEADER.to_string()),
        ("froc", crate::evaluation::FROC_HEADER.to_string()),
    ])
}

pub const TOOL_NAME: &str = "macnn";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Record of one run: what was asked, with which settings, on which
/// inputs (by content digest), producing which files.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<&'static str, String>,
    pub formats: BTreeMap<&'static str, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            tool: TOOL_NAME,
            version: TOOL_VERSION,
            command: command.to_string(),
            seed: config.seed,
            config: config.entries().into_iter().collect(),
            formats: format_versions(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    /// Record the sha256 of a file, or of every file under a directory.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        for file in files_under(path)? {
            let bytes = std::fs::read(&file).map_err(|e| Error::io(&file, e))?;
            self.inputs
                .insert(file.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        }
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest is serialisable") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

fn files_under(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for e in entries {
        if e.file_name().is_some_and(|n| n.to_string_lossy().ends_with("manifest.json")) {
            continue;
        }
        out.extend(files_under(&e)?);
    }
    Ok(out)
}
