use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Tensor5;
use crate::error::{shape_err, Result};

/// Below this many multiply-adds a sample is processed on the calling thread.
const PAR_THRESHOLD: usize = 1 << 15;

/// Stride and zero-padding of a 3D convolution, per `(d, h, w)` axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv3dGeometry {
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl Conv3dGeometry {
    pub const fn new(stride: [usize; 3], pad: [usize; 3]) -> Self {
        Self { stride, pad }
    }

    /// Stride 1 with `pad` on every axis.
    pub const fn same(pad: usize) -> Self {
        Self { stride: [1; 3], pad: [pad; 3] }
    }
}

/// Weights `(c_out, c_in, k_d, k_h, k_w)` plus an optional bias of length
/// `c_out`. An empty bias means the convolution has none.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    dims: [usize; 5],
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvKernel {
    pub fn new(dims: [usize; 5], weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(shape_err!("kernel dims must all be >= 1, got {dims:?}"));
        }
        let len: usize = dims.iter().product();
        if weights.len() != len {
            return Err(shape_err!("kernel dims {dims:?} need {len} weights, got {}", weights.len()));
        }
        if !bias.is_empty() && bias.len() != dims[0] {
            return Err(shape_err!("bias length {} does not match c_out {}", bias.len(), dims[0]));
        }
        Ok(Self { dims, weights, bias })
    }

    /// All-zero kernel, with a bias vector when `with_bias` is set.
    pub fn zeros(dims: [usize; 5], with_bias: bool) -> Self {
        let bias = if with_bias { vec![0.0; dims[0]] } else { Vec::new() };
        Self { dims, weights: vec![0.0; dims.iter().product()], bias }
    }

    /// A zero kernel with the same shape and bias layout as `self`.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims, self.has_bias())
    }

    #[inline]
    pub fn dims(&self) -> [usize; 5] {
        self.dims
    }

    #[inline]
    pub fn c_out(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn c_in(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn size(&self) -> [usize; 3] {
        [self.dims[2], self.dims[3], self.dims[4]]
    }

    /// `k_d * k_h * k_w`.
    #[inline]
    pub fn volume(&self) -> usize {
        self.dims[2] * self.dims[3] * self.dims[4]
    }

    #[inline]
    pub fn has_bias(&self) -> bool {
        !self.bias.is_empty()
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    #[inline]
    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    #[inline]
    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn same_layout(&self, other: &ConvKernel) -> bool {
        self.dims == other.dims && self.has_bias() == other.has_bias()
    }
}

/// Gradients of a convolution with respect to its input and kernel.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub grad_x: Tensor5,
    pub grad_kernel: ConvKernel,
}

/// `floor((in + 2*pad - kernel) / stride) + 1` per axis.
pub fn conv_output_dims(input: [usize; 3], kernel: [usize; 3], geom: Conv3dGeometry) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for a in 0..3 {
        let s = geom.stride[a];
        if s == 0 {
            return Err(shape_err!("stride must be >= 1 on every axis, got {:?}", geom.stride));
        }
        let padded = input[a] + 2 * geom.pad[a];
        if padded < kernel[a] {
            return Err(shape_err!("kernel {:?} does not fit padded input {:?} (pad {:?})", kernel, input, geom.pad));
        }
        out[a] = (padded - kernel[a]) / s + 1;
    }
    Ok(out)
}

/// Output positions `o` along one axis for which `o*stride + k - pad` lands
/// inside `0..input`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, pad: usize, k: usize) -> Range<usize> {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if in_len + pad > k { ((in_len - 1 + pad - k) / stride + 1).min(out_len) } else { 0 };
    lo..hi.max(lo)
}

fn for_each_chunk<F>(buf: &mut [f64], chunk: usize, work: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if work >= PAR_THRESHOLD {
        buf.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        buf.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Convolves one sample. `x` is `(c_in, d, h, w)`, `out` is `(c_out, out_sp)`
/// and is overwritten.
pub(crate) fn conv_sample_forward(
    x: &[f64],
    in_sp: [usize; 3],
    kernel: &ConvKernel,
    geom: Conv3dGeometry,
    out_sp: [usize; 3],
    out: &mut [f64],
) {
    let [c_out, c_in, kd, kh, kw] = kernel.dims;
    let [id, ih, iw] = in_sp;
    let [od, oh, ow] = out_sp;
    let [sd, sh, sw] = geom.stride;
    let [pd, ph, pw] = geom.pad;
    let in_vol = id * ih * iw;
    let out_vol = od * oh * ow;
    debug_assert_eq!(x.len(), c_in * in_vol);
    debug_assert_eq!(out.len(), c_out * out_vol);
    let work = out.len() * c_in * kernel.volume();

    for_each_chunk(out, out_vol, work, |co, o| {
        o.fill(if kernel.has_bias() { kernel.bias[co] } else { 0.0 });
        for ci in 0..c_in {
            let xc = &x[ci * in_vol..(ci + 1) * in_vol];
            for z in 0..kd {
                let rz = valid_range(od, id, sd, pd, z);
                for y in 0..kh {
                    let ry = valid_range(oh, ih, sh, ph, y);
                    for xk in 0..kw {
                        let rx = valid_range(ow, iw, sw, pw, xk);
                        let wv = kernel.weights[(((co * c_in + ci) * kd + z) * kh + y) * kw + xk];
                        for oz in rz.clone() {
                            let iz = oz * sd + z - pd;
                            for oy in ry.clone() {
                                let iy = oy * sh + y - ph;
                                let orow = &mut o[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                                let irow = &xc[(iz * ih + iy) * iw..(iz * ih + iy + 1) * iw];
                                if sw == 1 {
                                    let off = xk as isize - pw as isize;
                                    for ox in rx.clone() {
                                        orow[ox] += wv * irow[(ox as isize + off) as usize];
                                    }
                                } else {
                                    for ox in rx.clone() {
                                        orow[ox] += wv * irow[ox * sw + xk - pw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

/// Backward pass for one sample. Overwrites `grad_x` (`(c_in, in_sp)`),
/// `grad_w` (kernel-shaped) and `grad_b` (`c_out`, or empty).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_sample_backward(
    grad_out: &[f64],
    x: &[f64],
    in_sp: [usize; 3],
    kernel: &ConvKernel,
    geom: Conv3dGeometry,
    out_sp: [usize; 3],
    grad_x: &mut [f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let [c_out, c_in, kd, kh, kw] = kernel.dims;
    let [id, ih, iw] = in_sp;
    let [od, oh, ow] = out_sp;
    let [sd, sh, sw] = geom.stride;
    let [pd, ph, pw] = geom.pad;
    let in_vol = id * ih * iw;
    let out_vol = od * oh * ow;
    let kvol = kd * kh * kw;
    let work = c_out * out_vol * c_in * kvol;

    for (co, gb) in grad_b.iter_mut().enumerate() {
        *gb = grad_out[co * out_vol..(co + 1) * out_vol].iter().sum();
    }

    // Kernel gradient: one chunk per output channel.
    for_each_chunk(grad_w, c_in * kvol, work, |co, gw| {
        let g = &grad_out[co * out_vol..(co + 1) * out_vol];
        for ci in 0..c_in {
            let xc = &x[ci * in_vol..(ci + 1) * in_vol];
            for z in 0..kd {
                let rz = valid_range(od, id, sd, pd, z);
                for y in 0..kh {
                    let ry = valid_range(oh, ih, sh, ph, y);
                    for xk in 0..kw {
                        let rx = valid_range(ow, iw, sw, pw, xk);
                        let mut acc = 0.0;
                        for oz in rz.clone() {
                            let iz = oz * sd + z - pd;
                            for oy in ry.clone() {
                                let iy = oy * sh + y - ph;
                                let grow = &g[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                                let irow = &xc[(iz * ih + iy) * iw..(iz * ih + iy + 1) * iw];
                                for ox in rx.clone() {
                                    acc += grow[ox] * irow[ox * sw + xk - pw];
                                }
                            }
                        }
                        gw[(ci * kd + z) * kh * kw + y * kw + xk] = acc;
                    }
                }
            }
        }
    });

    // Input gradient: one chunk per input channel, scatter within the chunk.
    for_each_chunk(grad_x, in_vol, work, |ci, gx| {
        gx.fill(0.0);
        for co in 0..c_out {
            let g = &grad_out[co * out_vol..(co + 1) * out_vol];
            for z in 0..kd {
                let rz = valid_range(od, id, sd, pd, z);
                for y in 0..kh {
                    let ry = valid_range(oh, ih, sh, ph, y);
                    for xk in 0..kw {
                        let rx = valid_range(ow, iw, sw, pw, xk);
                        let wv = kernel.weights[(((co * c_in + ci) * kd + z) * kh + y) * kw + xk];
                        for oz in rz.clone() {
                            let iz = oz * sd + z - pd;
                            for oy in ry.clone() {
                                let iy = oy * sh + y - ph;
                                let grow = &g[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                                let xrow = &mut gx[(iz * ih + iy) * iw..(iz * ih + iy + 1) * iw];
                                for ox in rx.clone() {
                                    xrow[ox * sw + xk - pw] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

fn check_conv_input(x: &Tensor5, kernel: &ConvKernel, geom: Conv3dGeometry) -> Result<[usize; 3]> {
    if x.channels() != kernel.c_in() {
        return Err(shape_err!("input has {} channels but kernel expects {}", x.channels(), kernel.c_in()));
    }
    conv_output_dims(x.spatial(), kernel.size(), geom)
}

/// Zero-padded 3D convolution (cross-correlation) plus bias.
pub fn conv3d_forward(x: &Tensor5, kernel: &ConvKernel, geom: Conv3dGeometry) -> Result<Tensor5> {
    let out_sp = check_conv_input(x, kernel, geom)?;
    let n = x.batch();
    let mut out = Tensor5::zeros([n, kernel.c_out(), out_sp[0], out_sp[1], out_sp[2]]);
    for i in 0..n {
        conv_sample_forward(x.sample(i), x.spatial(), kernel, geom, out_sp, out.sample_mut(i));
    }
    Ok(out)
}

/// Gradients of `sum(grad_out * conv3d_forward(x, kernel))`.
///
/// Kernel and bias gradients are accumulated sample by sample, in batch
/// order, from per-sample partial sums.
pub fn conv3d_backward(
    grad_out: &Tensor5,
    x: &Tensor5,
    kernel: &ConvKernel,
    geom: Conv3dGeometry,
) -> Result<ConvGrads> {
    let out_sp = check_conv_input(x, kernel, geom)?;
    let expected = [x.batch(), kernel.c_out(), out_sp[0], out_sp[1], out_sp[2]];
    if grad_out.dims() != expected {
        return Err(shape_err!("grad_out dims {:?} do not match forward output {:?}", grad_out.dims(), expected));
    }
    let mut grad_x = Tensor5::zeros(x.dims());
    let mut grad_kernel = kernel.zeros_like();
    let mut gw = vec![0.0; kernel.weights.len()];
    let mut gb = vec![0.0; kernel.bias.len()];
    for i in 0..x.batch() {
        conv_sample_backward(
            grad_out.sample(i),
            x.sample(i),
            x.spatial(),
            kernel,
            geom,
            out_sp,
            grad_x.sample_mut(i),
            &mut gw,
            &mut gb,
        );
        for (a, b) in grad_kernel.weights.iter_mut().zip(&gw) {
            *a += *b;
        }
        for (a, b) in grad_kernel.bias.iter_mut().zip(&gb) {
            *a += *b;
        }
    }
    Ok(ConvGrads { grad_x, grad_kernel })
}
