//! Rank-5 tensors and the differentiable primitives built on them.
//!
//! Every activation in the network is a [`Tensor5`] laid out row-major as
//! `(batch, channels, depth, height, width)`, where depth is the spectral
//! axis. All arithmetic is `f64`. Operations are plain functions; anything a
//! backward pass needs is returned explicitly by the forward pass.

mod conv;
mod dense;
mod norm;
mod pool;

pub use conv::{conv3d_backward, conv3d_forward, conv_output_dims, Conv3dGeometry, ConvGrads, ConvKernel};
pub(crate) use conv::{conv_sample_backward, conv_sample_forward};
pub use dense::{
    cross_entropy, cross_entropy_backward, relu, relu_backward, softmax_rows, softmax_rows_backward, Linear,
};
pub use norm::{BatchNorm, BatchNormCache, RunningStats, BN_EPSILON, BN_MOMENTUM};
pub use pool::{avg_pool3d, avg_pool3d_backward, global_avg_pool3d, global_avg_pool3d_backward};

use crate::error::{shape_err, Result};

/// Dimensions of a [`Tensor5`]: `[n, c, d, h, w]`.
pub type Dims5 = [usize; 5];

/// Dense rank-5 `f64` array in `(n, c, d, h, w)` row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor5 {
    dims: Dims5,
    data: Vec<f64>,
}

impl Tensor5 {
    pub fn new(dims: Dims5, data: Vec<f64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(shape_err!("tensor dims {dims:?} need {len} elements, got {}", data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims5) -> Self {
        Self { dims, data: vec![0.0; dims.iter().product()] }
    }

    pub fn full(dims: Dims5, value: f64) -> Self {
        Self { dims, data: vec![value; dims.iter().product()] }
    }

    #[inline]
    pub fn dims(&self) -> Dims5 {
        self.dims
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    /// Spatial extent `[d, h, w]`.
    #[inline]
    pub fn spatial(&self) -> [usize; 3] {
        [self.dims[2], self.dims[3], self.dims[4]]
    }

    /// Number of voxels per channel, `d * h * w`.
    #[inline]
    pub fn volume(&self) -> usize {
        self.dims[2] * self.dims[3] * self.dims[4]
    }

    /// Number of elements per batch sample.
    #[inline]
    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.volume()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, d: usize, h: usize, w: usize) -> usize {
        let [_, cs, ds, hs, ws] = self.dims;
        (((n * cs + c) * ds + d) * hs + h) * ws + w
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, d: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, c, d, h, w)]
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor5]) -> Result<Tensor5> {
        let first = parts.first().ok_or_else(|| shape_err!("concat of zero tensors"))?;
        let [n, _, d, h, w] = first.dims;
        for p in parts {
            if p.dims[0] != n || p.spatial() != [d, h, w] {
                return Err(shape_err!("cannot concat {:?} with {:?} along channels", first.dims, p.dims));
            }
        }
        let c: usize = parts.iter().map(|p| p.dims[1]).sum();
        let mut data = Vec::with_capacity(n * c * d * h * w);
        for i in 0..n {
            for p in parts {
                data.extend_from_slice(p.sample(i));
            }
        }
        Ok(Tensor5 { dims: [n, c, d, h, w], data })
    }

    /// Copies channels `start..start + count` into a new tensor.
    pub fn channel_slice(&self, start: usize, count: usize) -> Result<Tensor5> {
        let [n, c, d, h, w] = self.dims;
        if start + count > c {
            return Err(shape_err!("channel slice {start}..{} out of range for {c} channels", start + count));
        }
        let vol = d * h * w;
        let mut data = Vec::with_capacity(n * count * vol);
        for i in 0..n {
            let s = self.sample(i);
            data.extend_from_slice(&s[start * vol..(start + count) * vol]);
        }
        Ok(Tensor5 { dims: [n, count, d, h, w], data })
    }

    /// Adds `src` into channels `start..start + src.channels()` of `self`.
    pub fn add_into_channels(&mut self, start: usize, src: &Tensor5) -> Result<()> {
        let [n, c, d, h, w] = self.dims;
        let count = src.channels();
        if src.batch() != n || src.spatial() != [d, h, w] || start + count > c {
            return Err(shape_err!("cannot add {:?} into channels {start}.. of {:?}", src.dims, self.dims));
        }
        let vol = d * h * w;
        let sample_len = self.sample_len();
        for i in 0..n {
            let dst = &mut self.data[i * sample_len + start * vol..i * sample_len + (start + count) * vol];
            for (a, b) in dst.iter_mut().zip(src.sample(i)) {
                *a += *b;
            }
        }
        Ok(())
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor5) -> Result<()> {
        if self.dims != other.dims {
            return Err(shape_err!("add of {:?} and {:?}", self.dims, other.dims));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    /// Stacks per-sample buffers (each `c*d*h*w` long) into a batch.
    pub fn stack(samples: &[&[f64]], sample_dims: [usize; 4]) -> Result<Tensor5> {
        let len: usize = sample_dims.iter().product();
        let mut data = Vec::with_capacity(len * samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.len() != len {
                return Err(shape_err!("sample {i} has {} elements, expected {len}", s.len()));
            }
            data.extend_from_slice(s);
        }
        let [c, d, h, w] = sample_dims;
        Ok(Tensor5 { dims: [samples.len(), c, d, h, w], data })
    }
}

/// Dense row-major `f64` matrix, used for pooled features, attention
/// weights and logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err!("matrix {rows}x{cols} needs {} elements, got {}", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor5::new([1, 2, 1, 1, 1], vec![0.0; 3]).is_err());
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn concat_then_slice_recovers_parts() {
        let a = Tensor5::new([2, 1, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor5::new([2, 2, 1, 1, 2], (10..18).map(f64::from).collect()).unwrap();
        let cat = Tensor5::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.dims(), [2, 3, 1, 1, 2]);
        assert_eq!(cat.sample(0), &[1.0, 2.0, 10.0, 11.0, 12.0, 13.0]);
        assert_eq!(cat.channel_slice(0, 1).unwrap(), a);
        assert_eq!(cat.channel_slice(1, 2).unwrap(), b);
        assert!(cat.channel_slice(2, 2).is_err());
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor5::zeros([1, 1, 2, 2, 2]);
        let b = Tensor5::zeros([1, 1, 1, 2, 2]);
        assert!(Tensor5::concat_channels(&[&a, &b]).is_err());
    }

    #[test]
    fn add_into_channels_targets_range() {
        let mut t = Tensor5::zeros([1, 3, 1, 1, 1]);
        let s = Tensor5::full([1, 1, 1, 1, 1], 2.5);
        t.add_into_channels(1, &s).unwrap();
        assert_eq!(t.data(), &[0.0, 2.5, 0.0]);
        assert!(t.add_into_channels(3, &s).is_err());
    }
}
