//! Optimisation, evaluation metrics and cost auditing.

mod audit;
mod config;
mod metrics;
mod optim;
mod trainer;

pub use audit::{audit, CostReport, LayerCost, LayerKind, PLAUSIBLE_PARAMS, REFERENCE_PARAMS};
pub use config::{lr_at_epoch, OptimizerKind, TrainConfig};
pub use metrics::{argmax, confusion_matrix, Metrics};
pub use optim::{adam_step, sgd_momentum_step, AdamParams, Optimizer};
pub use trainer::{evaluate, predict, train, EpochRecord, TrainOutcome};
