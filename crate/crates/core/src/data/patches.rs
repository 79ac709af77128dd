use serde::{Deserialize, Serialize};

use super::{HsiCube, Partition, SplitSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor5;

/// One labelled pixel, in unpadded image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSample {
    pub row: usize,
    pub col: usize,
    /// Class label in `1..=C`.
    pub label: u16,
}

/// Patches centred on a list of pixels of a padded cube. Tensors are built
/// on demand by [`PatchSet::batch`].
#[derive(Clone, Debug)]
pub struct PatchSet<'a> {
    cube: &'a HsiCube,
    margin: usize,
    block: usize,
    samples: Vec<PatchSample>,
}

/// Patch sets of the three split partitions.
#[derive(Clone, Debug)]
pub struct SplitPatches<'a> {
    pub train: PatchSet<'a>,
    pub val: PatchSet<'a>,
    pub test: PatchSet<'a>,
}

/// Checks `block` is odd and positive and returns its half-width.
pub fn patch_margin(block: usize) -> Result<usize> {
    if block == 0 || block.is_multiple_of(2) {
        return Err(Error::Config(format!("patch block size must be odd, got {block}")));
    }
    Ok((block - 1) / 2)
}

impl<'a> PatchSet<'a> {
    /// Patches around `pixels` (row-major indices into the unpadded image).
    /// `padded` must carry `margin >= (block - 1) / 2` pixels of padding.
    pub fn new(
        padded: &'a HsiCube,
        margin: usize,
        block: usize,
        pixels: impl IntoIterator<Item = usize>,
        labels: Option<&[u16]>,
    ) -> Result<Self> {
        let half = patch_margin(block)?;
        if margin < half {
            return Err(Error::Config(format!("block {block} needs {half} pixels of padding, cube has {margin}")));
        }
        if padded.height() < 2 * margin + 1 || padded.width() < 2 * margin + 1 {
            return Err(Error::Data(format!(
                "{}x{} cube is too small for padding {margin}",
                padded.height(),
                padded.width()
            )));
        }
        let width = padded.width() - 2 * margin;
        let pixels_total = width * (padded.height() - 2 * margin);
        let mut samples = Vec::new();
        for p in pixels {
            if p >= pixels_total {
                return Err(Error::Data(format!("pixel {p} outside the {pixels_total}-pixel image")));
            }
            let label = labels.map_or(0, |l| l[p]);
            samples.push(PatchSample { row: p / width, col: p % width, label });
        }
        Ok(Self { cube: padded, margin, block, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[PatchSample] {
        &self.samples
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn bands(&self) -> usize {
        self.cube.bands()
    }

    /// Zero-based class targets of the given samples.
    pub fn targets(&self, indices: &[usize]) -> Result<Vec<usize>> {
        indices
            .iter()
            .map(|&i| {
                let s = self.samples[i];
                (s.label as usize)
                    .checked_sub(1)
                    .ok_or_else(|| Error::Data(format!("pixel ({}, {}) has no class label", s.row, s.col)))
            })
            .collect()
    }

    /// Patches of the given samples as `(n, 1, bands, block, block)`.
    pub fn batch(&self, indices: &[usize]) -> Tensor5 {
        let (m, bands) = (self.block, self.cube.bands());
        let half = (m - 1) / 2;
        let mut data = vec![0.0; indices.len() * bands * m * m];
        for (n, &i) in indices.iter().enumerate() {
            let s = self.samples[i];
            let out = &mut data[n * bands * m * m..(n + 1) * bands * m * m];
            let top = s.row + self.margin - half;
            let left = s.col + self.margin - half;
            for dy in 0..m {
                for dx in 0..m {
                    let spec = self.cube.spectrum(top + dy, left + dx);
                    for (b, &v) in spec.iter().enumerate() {
                        out[(b * m + dy) * m + dx] = v as f64;
                    }
                }
            }
        }
        Tensor5::new([indices.len(), 1, bands, m, m], data).expect("patch dims are consistent")
    }
}

/// One patch per labelled pixel of each partition, in row-major pixel order.
pub fn extract_patches<'a>(
    padded: &'a HsiCube,
    margin: usize,
    split: &SplitSpec,
    block: usize,
) -> Result<SplitPatches<'a>> {
    let labels = padded.require_labels("patch extraction")?;
    let width = padded.width().saturating_sub(2 * margin);
    let height = padded.height().saturating_sub(2 * margin);
    if split.assignment.len() != width * height {
        return Err(Error::Data(format!(
            "split covers {} pixels, padded cube holds {width}x{height}",
            split.assignment.len()
        )));
    }
    let inner: Vec<u16> =
        (0..height * width).map(|p| labels[(p / width + margin) * padded.width() + p % width + margin]).collect();
    let set = |part| PatchSet::new(padded, margin, block, split.pixels(part), Some(&inner));
    Ok(SplitPatches { train: set(Partition::Train)?, val: set(Partition::Val)?, test: set(Partition::Test)? })
}

/// Per-band mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl BandStats {
    /// Statistics over the given (unpadded) pixels. Bands with zero spread
    /// get unit standard deviation.
    pub fn fit(cube: &HsiCube, pixels: impl IntoIterator<Item = usize>) -> Result<Self> {
        let b = cube.bands();
        let (mut mean, mut sq) = (vec![0.0; b], vec![0.0; b]);
        let mut count = 0usize;
        for p in pixels {
            let s = cube.spectrum(p / cube.width(), p % cube.width());
            for (i, &v) in s.iter().enumerate() {
                mean[i] += v as f64;
                sq[i] += v as f64 * v as f64;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::Data("band statistics need at least one pixel".into()));
        }
        let n = count as f64;
        let std = mean
            .iter_mut()
            .zip(&sq)
            .map(|(m, &s)| {
                *m /= n;
                let var = (s / n - *m * *m).max(0.0);
                if var.sqrt() > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, cube: &HsiCube) -> Result<HsiCube> {
        if self.mean.len() != cube.bands() {
            return Err(Error::Data(format!(
                "band statistics for {} bands applied to a {}-band cube",
                self.mean.len(),
                cube.bands()
            )));
        }
        cube.map_bands(|b, v| ((v as f64 - self.mean[b]) / self.std[b]) as f32)
    }
}
