//! Optimisation, metrics, the supervised loop and distillation.

pub mod kd;
pub mod metrics;
pub mod optim;
pub mod probe;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tape;
use crate::data::{DataError, DatasetSplit, SplitName, Splits};
use crate::model::{Model, ModelError};

pub use kd::{kd_direct_logits, kd_pretrain, train_teacher, transfer_head, KdConfig, TeacherBundle};
pub use metrics::{argmax, binary_auc, compute_metrics, softmax, Metrics};
pub use optim::{lr_schedule, Adam, AdamConfig, StepOutcome, StepSchedule};
pub use probe::{linear_probe, ProbeResult};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("split is empty")]
    EmptySplit,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("width mismatch: {what} has width {got}, student needs {expected}")]
    Width { what: &'static str, expected: usize, got: usize },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Per-sample training target.
#[derive(Clone, Copy, Debug)]
pub enum Objective<'a> {
    CrossEntropy(usize),
    /// MSE between the classifier input and `target`, optionally after ReLU.
    Intermediate { target: &'a [f64], relu: bool },
    /// MSE between the logits and `target`.
    Logits(&'a [f64]),
}

/// Loss and parameter gradients summed over a batch.
pub struct BatchGrad {
    pub loss_sum: f64,
    pub grads: Vec<Vec<f64>>,
    /// Logits of every sample, `[batch, n_classes]`.
    pub logits: Vec<f64>,
}

fn sample_grad(model: &Model, image: &[f64], obj: Objective<'_>) -> Result<(f64, Vec<Vec<f64>>, Vec<f64>)> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, image)?;
    let loss = match obj {
        Objective::CrossEntropy(label) => tape.softmax_cross_entropy(out.logits, label).map_err(ModelError::from)?,
        Objective::Intermediate { target, relu } => {
            let t = if relu { out.intermediate_relu } else { out.intermediate };
            tape.mse_loss(t, target).map_err(ModelError::from)?
        }
        Objective::Logits(target) => tape.mse_loss(out.logits, target).map_err(ModelError::from)?,
    };
    let g = tape.backward(loss);
    let grads = out
        .params
        .iter()
        .zip(model.params.iter())
        .map(|(&t, p)| g.get_or_zeros(t, p.len()))
        .collect();
    Ok((tape.scalar(loss), grads, tape.value(out.logits).to_vec()))
}

/// Per-sample gradients computed in parallel and summed in sample order, so
/// the result does not depend on the worker count.
pub fn batch_gradients(model: &Model, items: &[(&[f64], Objective<'_>)]) -> Result<BatchGrad> {
    let per_sample: Vec<_> = items
        .par_iter()
        .map(|(img, obj)| sample_grad(model, img, *obj))
        .collect::<Result<Vec<_>>>()?;
    let mut grads: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.len()]).collect();
    let mut loss_sum = 0.0;
    let mut logits = Vec::with_capacity(items.len() * model.config.n_classes);
    for (loss, g, l) in per_sample {
        loss_sum += loss;
        for (acc, gi) in grads.iter_mut().zip(g) {
            for (a, b) in acc.iter_mut().zip(gi) {
                *a += b;
            }
        }
        logits.extend(l);
    }
    Ok(BatchGrad { loss_sum, grads, logits })
}

/// Mean-reduces `bg` over `batch` samples and applies one optimiser step.
pub(crate) fn apply_batch(model: &mut Model, opt: &mut Adam, mut bg: BatchGrad, batch: usize, lr: f64) -> Result<StepOutcome> {
    let inv = 1.0 / batch as f64;
    for g in bg.grads.iter_mut().flatten() {
        *g *= inv;
    }
    opt.step(model.params.iter_mut().map(|p| p.values.as_mut_slice()), &bg.grads, lr)
}

pub(crate) fn new_optimizer(model: &Model) -> Adam {
    Adam::new(AdamConfig::default(), model.params.iter().map(|p| p.len()))
}

/// Shuffled mini-batches of sample indices for one epoch.
pub(crate) fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    idx.shuffle(&mut rng);
    idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// Logits for every image in a split, computed in parallel, in order.
pub fn predict_split(model: &Model, split: &DatasetSplit) -> Result<Vec<f64>> {
    let rows: Vec<Vec<f64>> = (0..split.len())
        .into_par_iter()
        .map(|i| model.predict(split.image(i)))
        .collect::<std::result::Result<_, _>>()?;
    Ok(rows.concat())
}

/// Mean cross-entropy, accuracy and AUC on softmax probabilities.
pub fn evaluate(model: &Model, split: &DatasetSplit) -> Result<Metrics> {
    if split.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let c = model.config.n_classes;
    if split.n_classes != c {
        return Err(TrainError::Shape(format!("split has {} classes, model has {c}", split.n_classes)));
    }
    let logits = predict_split(model, split)?;
    metrics_from_logits(&logits, &split.labels, c)
}

pub fn metrics_from_logits(logits: &[f64], labels: &[usize], n_classes: usize) -> Result<Metrics> {
    let mut probs = Vec::with_capacity(logits.len());
    let mut loss = 0.0;
    for (row, &l) in logits.chunks(n_classes).zip(labels) {
        let p = softmax(row);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        loss += lse - row[l];
        probs.extend(p);
    }
    compute_metrics(&probs, labels, n_classes, loss / labels.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: StepSchedule,
    /// Keep the parameters from the epoch with the best validation AUC.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 32, seed: 0, schedule: StepSchedule::default(), keep_best: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: SplitName,
    pub loss: f64,
    pub acc: f64,
    pub auc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn push(&mut self, epoch: usize, split: SplitName, m: &Metrics) {
        self.records.push(EpochRecord { epoch, split, loss: m.loss, acc: m.accuracy, auc: m.auc });
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,split,loss,acc,auc\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{},{}", r.epoch, r.split, r.loss, r.acc, r.auc);
        }
        s
    }

    pub fn last(&self, split: SplitName) -> Option<&EpochRecord> {
        self.records.iter().rev().find(|r| r.split == split)
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub best_epoch: usize,
    pub history: History,
    pub test: Metrics,
}

/// Supervised cross-entropy training. Train-split metrics come from the
/// forward passes made during each epoch; validation is evaluated after
/// each epoch and the test split once at the end on the selected model.
pub fn train_loop(model: Model, splits: &Splits, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut model = model;
    let train = &splits.train;
    if train.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let mut opt = new_optimizer(&model);
    let mut history = History::default();
    let mut best: Option<(f64, usize, Model)> = None;
    let c = model.config.n_classes;

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr(epoch);
        let mut logits = vec![0.0; train.len() * c];
        let mut loss_sum = 0.0;
        for batch in epoch_batches(train.len(), cfg.batch_size, cfg.seed, epoch) {
            let items: Vec<_> =
                batch.iter().map(|&i| (train.image(i), Objective::CrossEntropy(train.labels[i]))).collect();
            let bg = batch_gradients(&model, &items)?;
            loss_sum += bg.loss_sum;
            for (k, &i) in batch.iter().enumerate() {
                logits[i * c..(i + 1) * c].copy_from_slice(&bg.logits[k * c..(k + 1) * c]);
            }
            apply_batch(&mut model, &mut opt, bg, batch.len(), lr)?;
        }
        let mut tm = metrics_from_logits(&logits, &train.labels, c)?;
        tm.loss = loss_sum / train.len() as f64;
        history.push(epoch, SplitName::Train, &tm);

        let vm = evaluate(&model, &splits.val)?;
        history.push(epoch, SplitName::Val, &vm);
        log::info!(
            "epoch {epoch:3} lr {lr:.0e} train loss {:.4} acc {:.4} | val loss {:.4} acc {:.4} auc {:.4}",
            tm.loss,
            tm.accuracy,
            vm.loss,
            vm.accuracy,
            vm.auc
        );
        if cfg.keep_best && best.as_ref().is_none_or(|(auc, _, _)| vm.auc > *auc) {
            best = Some((vm.auc, epoch, model.clone()));
        }
    }

    let (best_epoch, model) = match best {
        Some((_, e, m)) => (e, m),
        None => (cfg.epochs.saturating_sub(1), model),
    };
    let test = evaluate(&model, &splits.test)?;
    history.push(best_epoch, SplitName::Test, &test);
    Ok(TrainOutcome { model, best_epoch, history, test })
}
