use std::path::{Path, PathBuf};

use dacnet::densenet::{growth_rate, DenseNetConfig};
use dacnet::train::{OptimizerKind, TrainConfig};
use dacnet::{Error, Result};
use serde::{Deserialize, Serialize};

/// One flat JSON document describing a run. Missing keys take the defaults
/// below; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Train, validation and test weights.
    pub split_ratios: [u32; 3],
    /// Side of the square neighbourhood around each pixel; odd.
    pub block: usize,
    /// Seeds the split, the initial weights, shuffling and dropout.
    pub seed: u64,
    /// Standardise every band with training-pixel statistics.
    pub standardize: bool,

    pub stages: Vec<usize>,
    pub k0: usize,
    pub growth_rates: Option<Vec<usize>>,
    pub kernels: usize,
    pub stem_channels: Option<usize>,
    pub dropout: f64,
    pub temperature: f64,
    pub bias: bool,

    pub optimizer: OptimizerKind,
    pub initial_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_drop_epochs: Vec<usize>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = DenseNetConfig::base(1, 2);
        let t = TrainConfig::sgd100();
        Self {
            data: None,
            out_dir: None,
            split_ratios: [5, 1, 4],
            block: net.patch,
            seed: 0,
            standardize: true,
            stages: net.stages,
            k0: net.k0,
            growth_rates: None,
            kernels: net.kernels,
            stem_channels: None,
            dropout: net.dropout,
            temperature: net.temperature,
            bias: net.bias,
            optimizer: t.optimizer,
            initial_lr: t.initial_lr,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_drop_epochs: t.lr_drop_epochs,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fills every optional field so the written copy reproduces the run.
    pub fn resolved(&self) -> Self {
        let mut r = self.clone();
        r.growth_rates.get_or_insert_with(|| (1..=self.stages.len()).map(|m| growth_rate(m, self.k0)).collect());
        r.stem_channels.get_or_insert(2 * self.k0);
        r
    }

    pub fn network(&self, bands: usize, num_classes: usize) -> Result<DenseNetConfig> {
        let r = self.resolved();
        let cfg = DenseNetConfig {
            stages: r.stages,
            k0: r.k0,
            growth_rates: r.growth_rates.expect("resolved"),
            kernels: r.kernels,
            num_classes,
            bands,
            patch: r.block,
            stem_channels: r.stem_channels.expect("resolved"),
            dropout: r.dropout,
            temperature: r.temperature,
            bias: r.bias,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn training(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            optimizer: self.optimizer,
            initial_lr: self.initial_lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_drop_epochs: self.lr_drop_epochs.clone(),
            seed: self.seed,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let net = cfg.network(200, 16).unwrap();
        assert_eq!(net, DenseNetConfig::base(200, 16));
        assert_eq!(cfg.training().unwrap(), TrainConfig::sgd100());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"heads": 4}"#).is_err());
    }

    #[test]
    fn resolved_copy_round_trips() {
        let cfg: RunConfig = serde_json::from_str(r#"{"stages": [1, 2], "k0": 3, "seed": 9}"#).unwrap();
        let r = cfg.resolved();
        assert_eq!(r.growth_rates, Some(vec![3, 6]));
        assert_eq!(r.stem_channels, Some(6));
        let back: RunConfig = serde_json::from_str(&r.to_pretty_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.network(4, 2).unwrap(), cfg.network(4, 2).unwrap());
    }

    #[test]
    fn wrong_growth_rates_are_a_config_error() {
        let cfg: RunConfig = serde_json::from_str(r#"{"stages": [1, 1], "growth_rates": [8, 8]}"#).unwrap();
        assert!(matches!(cfg.network(4, 2), Err(Error::Config(_))));
    }
}
