use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub initial_lr: f64,
    /// Momentum for SGD; ignored by Adam.
    pub momentum: f64,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs (0-based) at which the learning rate drops tenfold.
    pub lr_drop_epochs: Vec<usize>,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::sgd100()
    }
}

impl TrainConfig {
    /// SGD with momentum 0.9, lr 0.1 dropping tenfold at epochs 30/60/90,
    /// 100 epochs.
    pub fn sgd100() -> Self {
        Self {
            optimizer: OptimizerKind::SgdMomentum,
            initial_lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 100,
            batch_size: 16,
            lr_drop_epochs: vec![30, 60, 90],
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }

    /// Adam at lr 1e-3 for 80 epochs without drops.
    pub fn adam80() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            initial_lr: 1e-3,
            epochs: 80,
            lr_drop_epochs: Vec::new(),
            ..Self::sgd100()
        }
    }

    pub fn recipe(name: &str) -> Result<Self> {
        match name {
            "sgd100" => Ok(Self::sgd100()),
            "adam80" => Ok(Self::adam80()),
            other => Err(Error::Config(format!("unknown recipe {other:?} (expected sgd100 or adam80)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad(format!("initial_lr must be positive, got {}", self.initial_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || self.adam_eps.is_nan()
            || self.adam_eps <= 0.0
        {
            return bad("Adam betas must be in [0, 1) and eps positive".into());
        }
        Ok(())
    }
}

/// `initial_lr * 10^-(number of drop epochs <= epoch)`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let drops = cfg.lr_drop_epochs.iter().filter(|&&d| epoch >= d).count();
    cfg.initial_lr / 10f64.powi(drops as i32)
}
