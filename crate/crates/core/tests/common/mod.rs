#![allow(dead_code)]

use dacnet::dac::DacLayer;
use dacnet::tensor::{Conv3dGeometry, ConvKernel, Matrix, Tensor5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_tensor(rng: &mut impl Rng, dims: [usize; 5]) -> Tensor5 {
    Tensor5::new(dims, random_vec(rng, dims.iter().product())).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn central_difference(mut f: impl FnMut(f64) -> f64, at: f64) -> f64 {
    (f(at + FD_EPS) - f(at - FD_EPS)) / (2.0 * FD_EPS)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// DAC layer with every parameter random, including the attention maps.
pub fn random_dac(
    rng: &mut ChaCha8Rng,
    c_in: usize,
    c_out: usize,
    size: [usize; 3],
    k: usize,
    geometry: Conv3dGeometry,
    bias: bool,
) -> DacLayer {
    let mut layer = DacLayer::init(rng, c_in, c_out, size, k, geometry, bias).unwrap();
    for kernel in layer.kernels_mut() {
        kernel.weights_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        kernel.bias_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    for fc in 0..2 {
        let fc = if fc == 0 { layer.fc1_mut() } else { layer.fc2_mut() };
        fc.weight.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        fc.bias.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    layer
}

/// Direct seven-loop convolution of one sample.
pub fn naive_conv(x: &Tensor5, n: usize, kernel: &ConvKernel, geom: Conv3dGeometry) -> Vec<f64> {
    let [_, c_in, d, h, w] = x.dims();
    let [c_out, _, kd, kh, kw] = kernel.dims();
    let out = |i: usize, k: usize, a: usize| (i + 2 * geom.pad[a] - k) / geom.stride[a] + 1;
    let (od, oh, ow) = (out(d, kd, 0), out(h, kh, 1), out(w, kw, 2));
    let mut y = vec![0.0; c_out * od * oh * ow];
    for co in 0..c_out {
        for z in 0..od {
            for r in 0..oh {
                for c in 0..ow {
                    let mut acc = if kernel.has_bias() { kernel.bias()[co] } else { 0.0 };
                    for ci in 0..c_in {
                        for a in 0..kd {
                            for b in 0..kh {
                                for e in 0..kw {
                                    let iz = (z * geom.stride[0] + a) as isize - geom.pad[0] as isize;
                                    let iy = (r * geom.stride[1] + b) as isize - geom.pad[1] as isize;
                                    let ix = (c * geom.stride[2] + e) as isize - geom.pad[2] as isize;
                                    if iz < 0 || iy < 0 || ix < 0 {
                                        continue;
                                    }
                                    let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                    if iz >= d || iy >= h || ix >= w {
                                        continue;
                                    }
                                    let wi = (((co * c_in + ci) * kd + a) * kh + b) * kw + e;
                                    acc += kernel.weights()[wi] * x.get(n, ci, iz, iy, ix);
                                }
                            }
                        }
                    }
                    y[((co * od + z) * oh + r) * ow + c] = acc;
                }
            }
        }
    }
    y
}

/// Attention weights computed from scratch: spatial mean, affine, ReLU,
/// affine, tempered softmax.
pub fn naive_attention(x: &Tensor5, n: usize, layer: &DacLayer, temperature: f64) -> Vec<f64> {
    let [_, c_in, ..] = x.dims();
    let vol = x.volume();
    let pooled: Vec<f64> =
        (0..c_in).map(|c| x.sample(n)[c * vol..(c + 1) * vol].iter().sum::<f64>() / vol as f64).collect();
    let affine = |m: &dacnet::tensor::Linear, v: &[f64]| -> Vec<f64> {
        (0..m.out_dim()).map(|o| m.bias[o] + dot(&m.weight[o * m.in_dim()..(o + 1) * m.in_dim()], v)).collect()
    };
    let hidden: Vec<f64> = affine(layer.fc1(), &pooled).into_iter().map(|v| v.max(0.0)).collect();
    let logits: Vec<f64> = affine(layer.fc2(), &hidden).into_iter().map(|v| v / temperature).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
    Matrix::new(rows, cols, data).unwrap()
}
