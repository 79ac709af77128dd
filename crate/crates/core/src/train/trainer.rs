use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{argmax, Metrics};
use super::optim::Optimizer;
use super::{lr_at_epoch, TrainConfig};
use crate::data::PatchSet;
use crate::densenet::DenseNet;
use crate::error::{Error, Result};
use crate::tensor::{cross_entropy, cross_entropy_backward};

/// Summary of one training epoch; serialised as one JSON line in logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean training loss over the epoch.
    pub train_loss: f64,
    /// `None` when there is no validation partition.
    pub val_oa: Option<f64>,
    /// Optimiser steps taken during this epoch.
    pub steps: usize,
}

pub struct TrainOutcome {
    /// Parameters after the last epoch.
    pub last: DenseNet,
    /// Parameters of the epoch with the best validation OA (earliest on
    /// ties), or the last epoch without validation data.
    pub best: DenseNet,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

/// Trains with per-epoch seeded shuffling. `on_epoch` sees every record as
/// soon as it is produced; an error from it stops training.
pub fn train(
    mut net: DenseNet,
    train_set: &PatchSet<'_>,
    val_set: &PatchSet<'_>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training partition is empty".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut opt = Optimizer::new(cfg.optimizer, &net);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best = (net.clone(), 0usize, f64::NEG_INFINITY);

    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = train_set.batch(idx);
            let targets = train_set.targets(idx)?;
            let (logits, cache) = net.forward_train(&x, &mut dropout_rng)?;
            let loss = cross_entropy(&logits, &targets)?;
            if !loss.is_finite() {
                let layer = cache.first_nonfinite_layer().unwrap_or("loss");
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}, batch {b}; first non-finite output: {layer}"
                )));
            }
            let grads = net.backward(&cross_entropy_backward(&logits, &targets)?, &cache)?;
            if let Some(p) = grads.params().iter().find(|p| p.values.iter().any(|v| !v.is_finite())) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at epoch {epoch}, batch {b}; first offending tensor: {}",
                    p.name
                )));
            }
            opt.step(&mut net, &grads, lr, cfg)?;
            loss_sum += loss * idx.len() as f64;
            steps += 1;
        }
        let val_oa = if val_set.is_empty() { None } else { Some(evaluate(&net, val_set, cfg.batch_size)?.oa) };
        let record = EpochRecord { epoch, lr, train_loss: loss_sum / train_set.len() as f64, val_oa, steps };
        on_epoch(&record)?;
        let score = val_oa.unwrap_or(f64::INFINITY);
        if score > best.2 || val_oa.is_none() {
            best = (net.clone(), epoch, score);
        }
        log.push(record);
    }
    Ok(TrainOutcome { last: net, best: best.0, best_epoch: best.1, log })
}

/// Predicted zero-based classes in sample order (eval mode).
pub fn predict(net: &DenseNet, set: &PatchSet<'_>, batch_size: usize) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for idx in all.chunks(batch_size.max(1)) {
        let logits = net.forward_eval(&set.batch(idx))?;
        out.extend((0..logits.rows()).map(|r| argmax(logits.row(r))));
    }
    Ok(out)
}

pub fn evaluate(net: &DenseNet, set: &PatchSet<'_>, batch_size: usize) -> Result<Metrics> {
    if set.is_empty() {
        return Err(Error::Data("cannot evaluate an empty partition".into()));
    }
    let pred = predict(net, set, batch_size)?;
    let truth = set.targets(&(0..set.len()).collect::<Vec<_>>())?;
    Metrics::from_predictions(&truth, &pred, net.config().num_classes)
}
