//! Minibatch SGD with momentum over freshly sampled patch epochs.
//!
//! Every random draw is keyed on `(seed, epoch, sample)`, so a run resumed
//! from an epoch checkpoint continues exactly as an uninterrupted one, and
//! per-sample gradients are summed in sample order whatever the thread
//! count.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dataset::AnnotationSet;
use crate::error::{Error, Result};
use crate::inference::ProbabilityMap;
use crate::model::{init_weights, loss_and_grad, sample_rng, Checkpoint, Mode, NetworkSpec, Params};
use crate::patcher::{sample_balanced, sample_stage2, Label, Patch, SamplePlan};
use crate::preprocess::PreprocessedImage;
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub plan: SamplePlan,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            plan: SamplePlan::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // Zero is allowed here as a frozen-weights control run; run
        // configuration files still require a positive rate.
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("TrainConfig", "learning_rate must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("TrainConfig", "momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("TrainConfig", "batch_size must be at least 1"));
        }
        self.plan.validate()
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub wall_seconds: f64,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "epoch,loss,accuracy";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for (i, (l, a)) in self.loss.iter().zip(&self.accuracy).enumerate() {
            s.push_str(&format!("{},{l:.6},{a:.6}\n", i + 1));
        }
        s
    }
}

/// `v' = momentum·v − lr·g`, `w' = w + v'`.
pub fn sgd_step(weights: &mut Params, grads: &Params, velocity: &mut Params, lr: Real, momentum: Real) -> Result<()> {
    for other in [grads, &*velocity] {
        if !weights.same_layout(other) {
            let shapes = |p: &Params| p.tensors().map(|t| t.len()).collect::<Vec<_>>();
            return Err(Error::shape("sgd_step", &shapes(weights), &shapes(other)));
        }
    }
    for ((w, g), v) in weights.tensors_mut().zip(grads.tensors()).zip(velocity.tensors_mut()) {
        for ((w, g), v) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *v = momentum * *v - lr * g;
            *w += *v;
        }
    }
    Ok(())
}

/// Loss and accuracy of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// Epoch-by-epoch SGD state for one network.
#[derive(Debug, Clone)]
pub struct Trainer {
    checkpoint: Checkpoint,
    velocity: Params,
    config: TrainConfig,
    accuracy: Vec<f64>,
}

const SHUFFLE_STREAM: u64 = u64::MAX;

impl Trainer {
    /// Start from He-initialised weights derived from `config.seed`.
    pub fn new(spec: &NetworkSpec, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let checkpoint = init_weights(spec, config.seed)?;
        Self::resume(checkpoint, config)
    }

    /// Continue from a checkpoint; its momentum buffer is restored when
    /// present.
    pub fn resume(mut checkpoint: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let velocity = match checkpoint.velocity.take() {
            Some(v) if v.same_layout(&checkpoint.params) => v,
            Some(_) => return Err(Error::Checkpoint("velocity layout does not match the weights".into())),
            None => checkpoint.params.zeros_like(),
        };
        checkpoint.meta.seed = config.seed;
        Ok(Self {
            checkpoint,
            velocity,
            config,
            accuracy: Vec::new(),
        })
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.checkpoint.meta.epoch as usize
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.checkpoint.params
    }

    /// Snapshot including the momentum buffer.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = self.checkpoint.clone();
        c.velocity = Some(self.velocity.clone());
        c
    }

    /// Sampling plan for the next epoch: the configured plan reseeded from
    /// `(seed, epoch)`.
    pub fn epoch_plan(&self) -> SamplePlan {
        let mut plan = self.config.plan.clone();
        plan.rng_seed = epoch_seed(self.config.seed, self.epoch() as u64);
        plan
    }

    /// One pass over `patches` in a seeded shuffled order.
    pub fn train_epoch(&mut self, patches: &[Patch]) -> Result<EpochStats> {
        if patches.is_empty() {
            return Err(Error::Dataset("an epoch needs at least one patch".into()));
        }
        let epoch = self.epoch() as u64;
        let seed = self.config.seed;
        let mut order: Vec<usize> = (0..patches.len()).collect();
        order.shuffle(&mut sample_rng(seed, epoch, SHUFFLE_STREAM));

        let spec = &self.checkpoint.spec;
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let params = &self.checkpoint.params;
            let results: Vec<(Real, Real, Params)> = batch
                .par_iter()
                .map(|&i| {
                    let p = &patches[i];
                    let mut rng = sample_rng(seed, epoch, i as u64);
                    loss_and_grad(spec, params, &p.data, p.label.target(), Mode::Train(&mut rng))
                })
                .collect::<Result<_>>()?;
            let mut total: Option<Params> = None;
            for ((loss, p, g), &i) in results.into_iter().zip(batch) {
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch: epoch as usize + 1,
                        batch: b + 1,
                        loss: loss as f64,
                    });
                }
                loss_sum += loss as f64;
                correct += usize::from((p >= 0.5) == (patches[i].label == Label::Ma));
                match total.as_mut() {
                    Some(t) => t.add_assign(&g),
                    None => total = Some(g),
                }
            }
            let mut grad = total.expect("non-empty batch");
            grad.scale(1.0 / batch.len() as Real);
            sgd_step(
                &mut self.checkpoint.params,
                &grad,
                &mut self.velocity,
                self.config.learning_rate as Real,
                self.config.momentum as Real,
            )?;
        }
        let stats = EpochStats {
            loss: loss_sum / patches.len() as f64,
            accuracy: correct as f64 / patches.len() as f64,
        };
        self.checkpoint.meta.epoch += 1;
        self.checkpoint.meta.loss_history.push(stats.loss);
        self.accuracy.push(stats.accuracy);
        Ok(stats)
    }
}

/// Seed of the sampling plan for a given epoch.
pub fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    seed.wrapping_add(epoch.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Which patches each epoch draws from.
#[derive(Debug, Clone, Copy)]
pub enum Stage<'a> {
    /// Class-balanced sampling.
    Basic,
    /// Hard negatives mined from the stage-one maps.
    Final(&'a [ProbabilityMap]),
}

/// Train `spec` for `config.epochs` epochs, resampling patches each epoch.
/// When `checkpoint_path` is set the checkpoint is rewritten after every
/// epoch.
pub fn train(
    spec: &NetworkSpec,
    images: &[PreprocessedImage],
    truths: &[AnnotationSet],
    config: &TrainConfig,
    stage: Stage<'_>,
    checkpoint_path: Option<&Path>,
) -> Result<(Checkpoint, TrainReport)> {
    let trainer = Trainer::new(spec, config.clone())?;
    continue_training(trainer, images, truths, stage, checkpoint_path)
}

/// Run a trainer up to `config.epochs` completed epochs.
pub fn continue_training(
    mut trainer: Trainer,
    images: &[PreprocessedImage],
    truths: &[AnnotationSet],
    stage: Stage<'_>,
    checkpoint_path: Option<&Path>,
) -> Result<(Checkpoint, TrainReport)> {
    let start = Instant::now();
    let mut report = TrainReport::default();
    while trainer.epoch() < trainer.config.epochs {
        let plan = trainer.epoch_plan();
        let patches = match stage {
            Stage::Basic => sample_balanced(images, truths, &plan)?,
            Stage::Final(maps) => sample_stage2(images, truths, maps, &plan)?,
        };
        let stats = trainer.train_epoch(&patches)?;
        report.loss.push(stats.loss);
        report.accuracy.push(stats.accuracy);
        if let Some(path) = checkpoint_path {
            trainer.checkpoint().save(path)?;
        }
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok((trainer.checkpoint(), report))
}

/// Train on one fixed patch set for `config.epochs` epochs.
pub fn train_on_patches(
    spec: &NetworkSpec,
    patches: &[Patch],
    config: &TrainConfig,
) -> Result<(Checkpoint, TrainReport)> {
    let start = Instant::now();
    let mut trainer = Trainer::new(spec, config.clone())?;
    let mut report = TrainReport::default();
    for _ in 0..config.epochs {
        let stats = trainer.train_epoch(patches)?;
        report.loss.push(stats.loss);
        report.accuracy.push(stats.accuracy);
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok((trainer.checkpoint(), report))
}

/// Where the training report of a checkpoint is written.
pub fn report_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("report.csv")
}

pub fn save_report(report: &TrainReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.to_csv()).map_err(|e| Error::io(path, e))
}

/// Fraction of patches the network classifies correctly in inference mode.
pub fn evaluate_accuracy(checkpoint: &Checkpoint, patches: &[Patch]) -> Result<f64> {
    let correct: usize = patches
        .par_iter()
        .map(|p| {
            let prob = crate::model::predict(&checkpoint.spec, &checkpoint.params, &p.data)?;
            Ok(usize::from((prob >= 0.5) == (p.label == Label::Ma)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(correct as f64 / patches.len().max(1) as f64)
}
