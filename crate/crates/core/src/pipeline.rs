//! Two-stage detection pipeline: preprocessing, basic network, hard
//! negative mining, final network, candidate extraction and evaluation,
//! run fold by fold.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{Manifest, RunConfig};
use crate::dataset::{load_annotations, load_dataset, save_annotations, AnnotationSet, ImageRecord};
use crate::error::{Error, Result};
use crate::evaluation::{cpm, fold_assignment, format_froc, format_operating_points, froc, FrocCurve};
use crate::inference::{infer_map_gated, load_pmap, save_pmap, Gate, ProbabilityMap};
use crate::model::{build_basic_spec_with, build_final_spec_with, Checkpoint};
use crate::postprocess::{disk_smooth, extract_candidates, format_candidates, Candidate};
use crate::preprocess::{load_preprocessed, preprocess, save_preprocessed, PreprocessedImage};
use crate::trainer::{report_path, save_report, train, Stage, TrainConfig};

/// Offset between the basic and final network seeds.
const FINAL_SEED_OFFSET: u64 = 0x5EED;

pub fn preprocess_all(images: &[ImageRecord], window: usize) -> Result<Vec<PreprocessedImage>> {
    images.par_iter().map(|img| preprocess(img, window)).collect()
}

/// Residual and FOV file names of a preprocessed image inside a directory.
pub fn preprocessed_paths(dir: &Path, image_id: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{image_id}.residual.png")),
        dir.join(format!("{image_id}.fov.png")),
    )
}

pub const ANNOTATIONS_FILE: &str = "annotations.csv";
const RESIDUAL_SUFFIX: &str = ".residual.png";

/// Write residuals, FOV masks and the annotations next to them.
pub fn save_preprocessed_dir(images: &[PreprocessedImage], truths: &[AnnotationSet], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for img in images {
        let (r, f) = preprocessed_paths(dir, &img.image_id);
        save_preprocessed(img, &r, &f)?;
    }
    save_annotations(truths, &dir.join(ANNOTATIONS_FILE))
}

/// Read a directory written by [`save_preprocessed_dir`], images in id
/// order with their annotation sets aligned.
pub fn load_preprocessed_dir(dir: &Path) -> Result<(Vec<PreprocessedImage>, Vec<AnnotationSet>)> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids: Vec<String> = Vec::new();
    for e in entries {
        let name = e.map_err(|err| Error::io(dir, err))?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(RESIDUAL_SUFFIX) {
            ids.push(id.to_string());
        }
    }
    if ids.is_empty() {
        return Err(Error::PipelineOrder(format!(
            "{} holds no preprocessed images; run `preprocess` first",
            dir.display()
        )));
    }
    ids.sort();
    let images: Vec<PreprocessedImage> = ids
        .iter()
        .map(|id| {
            let (r, f) = preprocessed_paths(dir, id);
            load_preprocessed(id, &r, &f)
        })
        .collect::<Result<_>>()?;
    let mut sets = load_annotations(&dir.join(ANNOTATIONS_FILE))?;
    let mut truths = Vec::with_capacity(images.len());
    for img in &images {
        truths.push(match sets.iter().position(|s| s.image_id == img.image_id) {
            Some(k) => sets.swap_remove(k),
            None => AnnotationSet::empty(img.image_id.clone()),
        });
    }
    if let Some(orphan) = sets.first() {
        return Err(Error::Dataset(format!("annotations for unknown image `{}`", orphan.image_id)));
    }
    Ok((images, truths))
}

/// Read one `<image_id>.pmap` per image from `dir`.
pub fn load_maps_dir(dir: &Path, images: &[PreprocessedImage], producer: &str) -> Result<Vec<ProbabilityMap>> {
    images
        .iter()
        .map(|img| {
            let path = dir.join(format!("{}.pmap", img.image_id));
            if !path.is_file() {
                return Err(Error::PipelineOrder(format!(
                    "no probability map for `{}` in {}; run `{producer}` first",
                    img.image_id,
                    dir.display()
                )));
            }
            load_pmap(&path, img)
        })
        .collect()
}

/// One map per image; with `gate`, only grid points where the matching
/// gate map reaches the threshold are scored.
pub fn infer_maps(
    checkpoint: &Checkpoint,
    images: &[PreprocessedImage],
    stride: usize,
    gate: Option<(&[ProbabilityMap], f64)>,
) -> Result<Vec<ProbabilityMap>> {
    if let Some((maps, _)) = gate {
        if maps.len() != images.len() {
            return Err(Error::PipelineOrder(format!(
                "{} gate maps for {} images",
                maps.len(),
                images.len()
            )));
        }
    }
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let g = gate.map(|(maps, threshold)| Gate {
                map: &maps[i],
                threshold,
            });
            infer_map_gated(checkpoint, img, stride, g)
        })
        .collect()
}

/// Disk-smooth each map and extract its candidates.
pub fn candidates_from_maps(maps: &[ProbabilityMap], radius: usize, floor: f64) -> Result<Vec<Vec<Candidate>>> {
    maps.par_iter()
        .map(|m| Ok(extract_candidates(&disk_smooth(m, radius)?, radius, floor)))
        .collect()
}

pub fn save_maps(maps: &[ProbabilityMap], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for m in maps {
        save_pmap(m, &dir.join(format!("{}.pmap", m.image_id)))?;
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train_config(cfg: &RunConfig, seed: u64) -> TrainConfig {
    let mut t = cfg.train_config();
    t.seed = seed;
    t.plan.rng_seed = seed;
    t
}

/// Both trained networks of one fold.
#[derive(Debug, Clone)]
pub struct TrainedCascade {
    pub basic: Checkpoint,
    pub final_net: Checkpoint,
}

/// Train the basic network, map the training images with it, then train
/// the final network on its hard negatives.
pub fn train_cascade(
    cfg: &RunConfig,
    images: &[PreprocessedImage],
    truths: &[AnnotationSet],
    out_dir: Option<&Path>,
) -> Result<TrainedCascade> {
    let arch = cfg.arch_options();
    let ckpt_path = |name: &str| out_dir.map(|d| d.join(name));

    let basic_path = ckpt_path("basic.ckpt");
    let (basic, report) = train(
        &build_basic_spec_with(&arch),
        images,
        truths,
        &train_config(cfg, cfg.seed),
        Stage::Basic,
        basic_path.as_deref(),
    )?;
    if let Some(p) = &basic_path {
        save_report(&report, &report_path(p))?;
    }

    let maps = infer_maps(&basic, images, cfg.infer_stride, None)?;
    if let Some(d) = out_dir {
        save_maps(&maps, &d.join("maps_train_basic"))?;
    }

    let final_path = ckpt_path("final.ckpt");
    let (final_net, report) = train(
        &build_final_spec_with(&arch),
        images,
        truths,
        &train_config(cfg, cfg.seed.wrapping_add(FINAL_SEED_OFFSET)),
        Stage::Final(&maps),
        final_path.as_deref(),
    )?;
    if let Some(p) = &final_path {
        save_report(&report, &report_path(p))?;
    }
    Ok(TrainedCascade { basic, final_net })
}

/// Final-stage maps of `images`: the basic map gates the final network when
/// `infer.cascade` is on.
pub fn detect_maps(cfg: &RunConfig, nets: &TrainedCascade, images: &[PreprocessedImage]) -> Result<(Vec<ProbabilityMap>, Vec<ProbabilityMap>)> {
    if cfg.infer_cascade {
        let basic = infer_maps(&nets.basic, images, cfg.infer_stride, None)?;
        let fin = infer_maps(&nets.final_net, images, cfg.infer_stride, Some((&basic, cfg.stage2_threshold)))?;
        Ok((basic, fin))
    } else {
        let fin = infer_maps(&nets.final_net, images, cfg.infer_stride, None)?;
        Ok((Vec::new(), fin))
    }
}

/// Held-out result of one fold.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    /// Dataset indices of the held-out images.
    pub test_images: Vec<usize>,
    pub candidates: Vec<Vec<Candidate>>,
    pub curve: FrocCurve,
    pub cpm: f64,
}

#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub folds: Vec<FoldOutcome>,
    /// Candidates of every image (each scored by the fold holding it out),
    /// in dataset order.
    pub candidates: Vec<Vec<Candidate>>,
    pub pooled: FrocCurve,
    pub pooled_cpm: f64,
}

fn select<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Rotate through `cfg.folds` folds: train both stages on the others,
/// detect on the held-out one. Fold artifacts go to `out_dir/fold<k>/`.
pub fn cross_validate(
    cfg: &RunConfig,
    images: &[PreprocessedImage],
    truths: &[AnnotationSet],
    out_dir: Option<&Path>,
) -> Result<CrossValidation> {
    let assignment = fold_assignment(images.len(), cfg.folds, cfg.seed)?;
    let mut folds = Vec::with_capacity(cfg.folds);
    let mut pooled: Vec<Vec<Candidate>> = vec![Vec::new(); images.len()];
    for k in 0..cfg.folds {
        let test: Vec<usize> = (0..images.len()).filter(|&i| assignment[i] == k).collect();
        let train_idx: Vec<usize> = (0..images.len()).filter(|&i| assignment[i] != k).collect();
        let dir = out_dir.map(|d| d.join(format!("fold{k}")));
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let nets = train_cascade(cfg, &select(images, &train_idx), &select(truths, &train_idx), dir.as_deref())?;
        let test_images = select(images, &test);
        let test_truths = select(truths, &test);
        let (basic_maps, final_maps) = detect_maps(cfg, &nets, &test_images)?;
        let candidates = candidates_from_maps(&final_maps, cfg.post_radius, cfg.post_floor)?;
        let curve = froc(&candidates, &test_truths, cfg.eval_radius)?;
        if let Some(d) = &dir {
            if !basic_maps.is_empty() {
                save_maps(&basic_maps, &d.join("maps_test_basic"))?;
            }
            save_maps(&final_maps, &d.join("maps_test_final"))?;
            write(&d.join("candidates.csv"), &format_candidates(&candidates.concat()))?;
            write(&d.join("froc.csv"), &format_froc(&curve))?;
        }
        for (&i, c) in test.iter().zip(&candidates) {
            pooled[i] = c.clone();
        }
        folds.push(FoldOutcome {
            fold: k,
            test_images: test,
            cpm: cpm(&curve),
            candidates,
            curve,
        });
    }
    let pooled_curve = froc(&pooled, truths, cfg.eval_radius)?;
    Ok(CrossValidation {
        folds,
        pooled_cpm: cpm(&pooled_curve),
        candidates: pooled,
        pooled: pooled_curve,
    })
}

/// Output file names of a full pipeline run.
pub const CANDIDATES_FILE: &str = "candidates.csv";
pub const FROC_FILE: &str = "froc.csv";
pub const OPERATING_POINTS_FILE: &str = "operating_points.csv";
pub const FOLDS_FILE: &str = "folds.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Run every stage on the dataset in `data_dir`, writing artifacts under
/// `out_dir`.
pub fn run_pipeline(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<CrossValidation> {
    let mut manifest = Manifest::new("pipeline", cfg);
    manifest.add_input(data_dir)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write(&out_dir.join("config.txt"), &cfg.to_text())?;

    let (raw, truths) = load_dataset(data_dir, cfg.fov_threshold)?;
    let images = preprocess_all(&raw, cfg.median_window)?;
    save_preprocessed_dir(&images, &truths, &out_dir.join("preprocessed"))?;

    let cv = cross_validate(cfg, &images, &truths, Some(out_dir))?;

    let mut folds_csv = String::from("fold,n_test_images,cpm\n");
    for f in &cv.folds {
        folds_csv.push_str(&format!("{},{},{:.6}\n", f.fold, f.test_images.len(), f.cpm));
    }
    let outputs = [
        (CANDIDATES_FILE, format_candidates(&cv.candidates.concat())),
        (FROC_FILE, format_froc(&cv.pooled)),
        (OPERATING_POINTS_FILE, format_operating_points(&cv.pooled)),
        (FOLDS_FILE, folds_csv),
    ];
    for (name, text) in &outputs {
        let path = out_dir.join(name);
        write(&path, text)?;
        manifest.add_output(&path);
    }
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(cv)
}
