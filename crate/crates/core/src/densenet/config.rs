use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Growth rate of stage `stage` (1-based): `2^(stage-1) * k0`.
///
/// # Panics
///
/// Panics if `stage` is 0.
pub fn growth_rate(stage: usize, k0: usize) -> usize {
    assert!(stage >= 1, "stage index is 1-based");
    (1usize << (stage - 1)) * k0
}

/// Architecture of a staged DAC-DenseNet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseNetConfig {
    /// Dense blocks per stage.
    pub stages: Vec<usize>,
    /// Base growth rate.
    pub k0: usize,
    /// Per-stage growth rates; must equal `2^m * k0` for 0-based `m`.
    pub growth_rates: Vec<usize>,
    /// Parallel kernels per DAC layer.
    pub kernels: usize,
    pub num_classes: usize,
    /// Spectral bands of the input patch (its depth).
    pub bands: usize,
    /// Spatial side length of the square input patch.
    pub patch: usize,
    /// Output channels of the stem DAC convolution.
    pub stem_channels: usize,
    /// Dropout probability before the classifier.
    pub dropout: f64,
    /// Softmax temperature of every attention branch.
    pub temperature: f64,
    /// Whether DAC kernels carry biases.
    pub bias: bool,
}

impl DenseNetConfig {
    /// Staged configuration with growth rates derived from `k0`.
    pub fn with_stages(stages: Vec<usize>, k0: usize, bands: usize, patch: usize, num_classes: usize) -> Self {
        let growth_rates = (1..=stages.len()).map(|m| growth_rate(m, k0)).collect();
        Self {
            stages,
            k0,
            growth_rates,
            kernels: 4,
            num_classes,
            bands,
            patch,
            stem_channels: 2 * k0,
            dropout: 0.1,
            temperature: 1.0,
            bias: true,
        }
    }

    /// Three stages of 4, 6 and 8 blocks with growth rates 8, 16, 32.
    pub fn base(bands: usize, num_classes: usize) -> Self {
        Self::with_stages(vec![4, 6, 8], 8, bands, 17, num_classes)
    }

    /// Three stages of 14 blocks with growth rates 8, 16, 32.
    pub fn large(bands: usize, num_classes: usize) -> Self {
        Self::with_stages(vec![14, 14, 14], 8, bands, 17, num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.stages.is_empty() {
            return fail("at least one stage is required".into());
        }
        if let Some(m) = self.stages.iter().position(|&b| b == 0) {
            return fail(format!("stage {} has zero blocks", m + 1));
        }
        if self.k0 == 0 {
            return fail("k0 must be >= 1".into());
        }
        if self.growth_rates.len() != self.stages.len() {
            return fail(format!("{} growth rates for {} stages", self.growth_rates.len(), self.stages.len()));
        }
        for (m, &g) in self.growth_rates.iter().enumerate() {
            let want = growth_rate(m + 1, self.k0);
            if g != want {
                return fail(format!(
                    "growth rate of stage {} is {g}, but 2^{m} * k0 = 2^{m} * {} = {want}",
                    m + 1,
                    self.k0
                ));
            }
        }
        if self.kernels == 0 {
            return fail("kernels (K) must be >= 1".into());
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.bands == 0 || self.patch == 0 || self.stem_channels == 0 {
            return fail(format!(
                "bands ({}), patch ({}) and stem_channels ({}) must be >= 1",
                self.bands, self.patch, self.stem_channels
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        Ok(())
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
