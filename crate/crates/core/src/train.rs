//! Mini-batch Adam training with per-epoch validation and best-checkpoint
//! selection, plus evaluation.
//!
//! Determinism: each example's dropout RNG is derived from
//! `(seed, epoch, step, position)`, per-example gradients are computed in
//! parallel but summed in batch order, and the shuffle is seeded per epoch.
//! Two runs with the same config therefore produce identical bits.

use std::fs;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;
use tracing::{info, warn};

use crate::dataset::{featurize, scan_dataset, DataError, LabeledExample, Split};
use crate::nn::{save_checkpoint, Adam, AdamConfig, Gradients, Model, NnError, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty {0:?} split; adjust val_fraction or add data")]
    EmptySplit(Split),
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub val_fraction: f64,
    pub dataset_root: PathBuf,
    /// Where the best-validation checkpoint is written, if anywhere.
    pub checkpoint_path: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(dataset_root: impl Into<PathBuf>) -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            val_fraction: 0.2,
            dataset_root: dataset_root.into(),
            checkpoint_path: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(TrainError::Config(format!(
                "val_fraction must be in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedFile {
    pub path: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    /// 1-based epoch numbers.
    pub epochs: Vec<usize>,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// Mean loss of the very first mini-batch, before any update.
    pub initial_batch_loss: f64,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub train_examples: usize,
    pub val_examples: usize,
    pub skipped_files: Vec<SkippedFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

/// A featurized example: `[1, 98, 257]` input and class index.
pub type Sample = (Tensor, usize);

/// Featurizes in parallel; unreadable files are logged and reported rather
/// than aborting. Order follows `examples`.
pub fn featurize_all(examples: &[LabeledExample]) -> (Vec<Sample>, Vec<SkippedFile>) {
    let results: Vec<_> = examples.par_iter().map(featurize).collect();
    let mut samples = Vec::with_capacity(results.len());
    let mut skipped = Vec::new();
    for (example, result) in examples.iter().zip(results) {
        match result {
            Ok(sample) => samples.push(sample),
            Err(e) => {
                warn!(path = %example.clip_path.display(), error = %e, "skipping file");
                skipped.push(SkippedFile {
                    path: example.relative_path.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    (samples, skipped)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Gradient of the batch-mean loss, and that mean loss.
fn batch_gradients(
    model: &Model,
    batch: &[&Sample],
    seeds: &[u64],
) -> Result<(f64, Gradients), NnError> {
    let per_example: Vec<(f64, Gradients)> = batch
        .par_iter()
        .zip(seeds)
        .map(|((input, class), &seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            model.loss_and_gradients(input, *class, &mut rng)
        })
        .collect::<Result<_, _>>()?;
    let mut total = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for (l, g) in &per_example {
        loss += l;
        total.add_assign(g)?;
    }
    let n = batch.len() as f64;
    total.scale((1.0 / n) as f32);
    Ok((loss / n, total))
}

/// Runs one full training job from a dataset directory. Returns the best
/// validation model (also written to `checkpoint_path` when set) and the run
/// report.
pub fn train(config: &TrainConfig) -> Result<(Model, RunReport), TrainError> {
    config.validate()?;
    let examples = scan_dataset(&config.dataset_root, config.val_fraction)?;
    let (train_ex, val_ex): (Vec<_>, Vec<_>) = examples
        .into_iter()
        .partition(|e| e.split == Split::Train);
    info!(train = train_ex.len(), val = val_ex.len(), "scanned dataset");
    let (train_set, mut skipped) = featurize_all(&train_ex);
    let (val_set, skipped_val) = featurize_all(&val_ex);
    skipped.extend(skipped_val);
    train_samples(config, &train_set, &val_set, skipped)
}

/// Training on already featurized samples.
pub fn train_samples(
    config: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    skipped_files: Vec<SkippedFile>,
) -> Result<(Model, RunReport), TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit(Split::Val));
    }
    let mut model = Model::default_digits(config.seed);
    let mut adam = Adam::new(
        &model,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );

    let mut report = RunReport {
        epochs: Vec::new(),
        train_loss: Vec::new(),
        val_accuracy: Vec::new(),
        initial_batch_loss: f64::NAN,
        best_epoch: 0,
        best_val_accuracy: f64::NEG_INFINITY,
        train_examples: train_set.len(),
        val_examples: val_set.len(),
        skipped_files,
    };
    let mut best = model.clone();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, epoch as u64]));
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let seeds: Vec<u64> = (0..batch.len())
                .map(|pos| derive_seed(&[config.seed, epoch as u64, step as u64, pos as u64]))
                .collect();
            let (loss, grads) = batch_gradients(&model, &batch, &seeds)?;
            if epoch == 1 && step == 0 {
                report.initial_batch_loss = loss;
            }
            loss_sum += loss * batch.len() as f64;
            adam.step(&mut model, &grads)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val = evaluate_samples(&model, val_set)?;
        info!(epoch, train_loss, val_accuracy = val.accuracy, "epoch complete");
        report.epochs.push(epoch);
        report.train_loss.push(train_loss);
        report.val_accuracy.push(val.accuracy);
        // Strictly greater: ties keep the earlier epoch.
        if val.accuracy > report.best_val_accuracy {
            report.best_val_accuracy = val.accuracy;
            report.best_epoch = epoch;
            best = model.clone();
            if let Some(path) = &config.checkpoint_path {
                fs::write(path, save_checkpoint(&best)).map_err(|source| TrainError::Io {
                    path: path.clone(),
                    source,
                })?;
            }
        }
    }
    Ok((best, report))
}

/// Accuracy and confusion matrix over featurized samples. Pure and
/// deterministic.
pub fn evaluate_samples(model: &Model, samples: &[Sample]) -> Result<Evaluation, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyEvalSet);
    }
    let k = model.num_classes();
    let predictions: Vec<usize> = samples
        .par_iter()
        .map(|(input, _)| model.predict(input).map(|p| p.argmax()))
        .collect::<Result<_, _>>()?;
    let mut confusion = vec![vec![0u64; k]; k];
    for ((_, truth), pred) in samples.iter().zip(predictions) {
        if *truth >= k {
            return Err(TrainError::Config(format!(
                "class {truth} outside the model's {k} outputs"
            )));
        }
        confusion[*truth][pred] += 1;
    }
    let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / samples.len() as f64,
        confusion,
    })
}

/// Featurizes and evaluates. Unreadable files are an error here: an
/// evaluation over a silently shrunken set would be misleading.
pub fn evaluate(model: &Model, examples: &[LabeledExample]) -> Result<Evaluation, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyEvalSet);
    }
    let samples: Vec<Sample> = examples
        .par_iter()
        .map(featurize)
        .collect::<Result<_, _>>()?;
    evaluate_samples(model, &samples)
}
