//! Hyperspectral cubes: storage, synthetic generation, splitting and patch
//! extraction.

mod cube;
mod patches;
mod split;
mod synth;

pub use cube::{decode_cube, encode_cube, load_cube, pad_cube, save_cube, HsiCube, CUBE_MAGIC};
pub use patches::{extract_patches, patch_margin, BandStats, PatchSample, PatchSet, SplitPatches};
pub use split::{apportion, stratified_split, Partition, SplitSpec};
pub use synth::{class_signature, synth_cube};
