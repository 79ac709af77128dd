//! Staged dense network built from DAC layers.
//!
//! Stage `m` uses growth rate `2^(m-1) k0`. Inside a stage every block sees
//! the concatenation of all earlier feature maps. Between stages a
//! transition halves the resolution, and every feature map produced before
//! the transition (stem and earlier stage outputs) is average-pooled down
//! and concatenated to the next stage's input as well.

mod checkpoint;
mod config;
mod layout;
mod network;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
    Checkpoint, NamedTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{growth_rate, DenseNetConfig};
pub use layout::{halving_window, pooled_extent, Extent, NetworkLayout, StageLayout, TransitionLayout};
pub use network::{DenseLayer, DenseNet, ForwardCache, ParamView, Transition};
