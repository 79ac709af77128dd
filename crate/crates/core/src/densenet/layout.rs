//! Channel and resolution bookkeeping, computed from a config alone.

use serde::Serialize;

use super::DenseNetConfig;
use crate::error::Result;

/// Spatial extent `[depth, height, width]`.
pub type Extent = [usize; 3];

/// Pooling window that halves every axis of at least 2 voxels and leaves
/// shorter axes alone.
pub fn halving_window(extent: Extent) -> [usize; 3] {
    extent.map(|d| if d >= 2 { 2 } else { 1 })
}

/// Extent after non-overlapping pooling with `window`.
pub fn pooled_extent(extent: Extent, window: [usize; 3]) -> Extent {
    [0, 1, 2].map(|a| extent[a] / window[a])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageLayout {
    pub extent: Extent,
    pub growth: usize,
    /// Channels entering the stage: transition output plus every downsampled
    /// earlier feature map.
    pub entry_channels: usize,
    /// Channel counts of the cross-stage feeds concatenated after the
    /// transition output (empty for the first stage).
    pub feed_channels: Vec<usize>,
    /// Input channels of each dense block.
    pub block_inputs: Vec<usize>,
    /// Channels leaving the stage.
    pub exit_channels: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TransitionLayout {
    pub channels: usize,
    pub in_extent: Extent,
    pub window: [usize; 3],
    pub out_extent: Extent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NetworkLayout {
    pub input: Extent,
    pub stem_channels: usize,
    pub stages: Vec<StageLayout>,
    pub transitions: Vec<TransitionLayout>,
    pub classifier_inputs: usize,
    pub num_classes: usize,
}

impl NetworkLayout {
    pub fn from_config(cfg: &DenseNetConfig) -> Result<Self> {
        cfg.validate()?;
        let input = [cfg.bands, cfg.patch, cfg.patch];
        let mut stages = Vec::with_capacity(cfg.stages.len());
        let mut transitions = Vec::new();
        // Channel counts of feature maps carried forward to later stages.
        let mut carried = vec![cfg.stem_channels];
        let mut extent = input;
        let mut entry = cfg.stem_channels;
        let mut feed_channels = Vec::new();
        for (m, (&blocks, &growth)) in cfg.stages.iter().zip(&cfg.growth_rates).enumerate() {
            if m > 0 {
                let prev: &StageLayout = &stages[m - 1];
                let window = halving_window(extent);
                let out_extent = pooled_extent(extent, window);
                transitions.push(TransitionLayout {
                    channels: prev.exit_channels,
                    in_extent: extent,
                    window,
                    out_extent,
                });
                feed_channels = carried.clone();
                entry = prev.exit_channels + carried.iter().sum::<usize>();
                if m + 1 < cfg.stages.len() {
                    carried.push(prev.exit_channels);
                }
                extent = out_extent;
            }
            let block_inputs: Vec<usize> = (0..blocks).map(|j| entry + j * growth).collect();
            stages.push(StageLayout {
                extent,
                growth,
                entry_channels: entry,
                feed_channels: feed_channels.clone(),
                block_inputs,
                exit_channels: entry + blocks * growth,
            });
        }
        let classifier_inputs = stages.last().map(|s| s.exit_channels).unwrap_or(0);
        Ok(Self {
            input,
            stem_channels: cfg.stem_channels,
            stages,
            transitions,
            classifier_inputs,
            num_classes: cfg.num_classes,
        })
    }

    /// Stem, every dense block, every transition and the classifier.
    pub fn layer_count(&self) -> usize {
        1 + self.stages.iter().map(|s| s.block_inputs.len()).sum::<usize>() + self.transitions.len() + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_layout_channels() {
        let layout = NetworkLayout::from_config(&DenseNetConfig::base(200, 16)).unwrap();
        assert_eq!(layout.layer_count(), 22);
        let [s1, s2, s3] = &layout.stages[..] else { panic!() };
        // stem 16 -> 16 + 4*8 = 48
        assert_eq!((s1.entry_channels, s1.exit_channels), (16, 48));
        // transition 48 + downsampled stem 16
        assert_eq!((s2.entry_channels, s2.exit_channels), (64, 64 + 6 * 16));
        assert_eq!(s2.feed_channels, vec![16]);
        // transition 160 + stem 16 + stage-one output 48
        assert_eq!(s3.entry_channels, 160 + 16 + 48);
        assert_eq!(s3.feed_channels, vec![16, 48]);
        assert_eq!(layout.classifier_inputs, 224 + 8 * 32);
        assert_eq!(s1.extent, [200, 17, 17]);
        assert_eq!(s2.extent, [100, 8, 8]);
        assert_eq!(s3.extent, [50, 4, 4]);
    }

    #[test]
    fn short_axes_are_not_pooled() {
        assert_eq!(halving_window([1, 5, 2]), [1, 2, 2]);
        assert_eq!(pooled_extent([1, 5, 2], [1, 2, 2]), [1, 2, 1]);
    }

    #[test]
    fn single_stage_has_no_transition() {
        let cfg = DenseNetConfig::with_stages(vec![2], 4, 6, 5, 3);
        let layout = NetworkLayout::from_config(&cfg).unwrap();
        assert!(layout.transitions.is_empty());
        assert_eq!(layout.layer_count(), 4);
        assert_eq!(layout.classifier_inputs, 8 + 2 * 4);
    }
}
