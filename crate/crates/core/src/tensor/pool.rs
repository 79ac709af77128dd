use super::{Dims5, Matrix, Tensor5};
use crate::error::{shape_err, Result};

/// Mean over `(d, h, w)` for every `(n, c)`; returns an `n x c` matrix.
pub fn global_avg_pool3d(x: &Tensor5) -> Result<Matrix> {
    let [n, c, ..] = x.dims();
    let vol = x.volume();
    if vol == 0 {
        return Err(shape_err!("global pooling over empty volume {:?}", x.dims()));
    }
    let data = x.data().chunks(vol).map(|ch| ch.iter().sum::<f64>() / vol as f64).collect();
    Matrix::new(n, c, data)
}

/// Spreads `grad[n, c] / (d*h*w)` uniformly over the pooled volume.
pub fn global_avg_pool3d_backward(grad: &Matrix, input_dims: Dims5) -> Result<Tensor5> {
    let [n, c, d, h, w] = input_dims;
    if grad.rows() != n || grad.cols() != c {
        return Err(shape_err!("pool gradient {}x{} does not match input {:?}", grad.rows(), grad.cols(), input_dims));
    }
    let vol = d * h * w;
    let mut out = Tensor5::zeros(input_dims);
    for (ch, &g) in out.data_mut().chunks_mut(vol).zip(grad.data()) {
        ch.fill(g / vol as f64);
    }
    Ok(out)
}

fn pool_output_dims(input: [usize; 3], window: [usize; 3], stride: [usize; 3]) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for a in 0..3 {
        if window[a] == 0 || stride[a] == 0 {
            return Err(shape_err!("pool window {window:?} and stride {stride:?} must be >= 1"));
        }
        if window[a] > input[a] {
            return Err(shape_err!("pool window {window:?} larger than input {input:?}"));
        }
        out[a] = (input[a] - window[a]) / stride[a] + 1;
    }
    Ok(out)
}

/// Windowed mean. Trailing partial windows are dropped.
pub fn avg_pool3d(x: &Tensor5, window: [usize; 3], stride: [usize; 3]) -> Result<Tensor5> {
    let [n, c, id, ih, iw] = x.dims();
    let [od, oh, ow] = pool_output_dims([id, ih, iw], window, stride)?;
    let count = (window[0] * window[1] * window[2]) as f64;
    let mut out = Tensor5::zeros([n, c, od, oh, ow]);
    let in_vol = id * ih * iw;
    let out_vol = od * oh * ow;
    for (src, dst) in x.data().chunks(in_vol).zip(out.data_mut().chunks_mut(out_vol)) {
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = 0.0;
                    for a in 0..window[0] {
                        let iz = z * stride[0] + a;
                        for b in 0..window[1] {
                            let iy = y * stride[1] + b;
                            let row = &src[(iz * ih + iy) * iw..];
                            for cc in 0..window[2] {
                                acc += row[xx * stride[2] + cc];
                            }
                        }
                    }
                    dst[(z * oh + y) * ow + xx] = acc / count;
                }
            }
        }
    }
    Ok(out)
}

pub fn avg_pool3d_backward(
    grad_out: &Tensor5,
    input_dims: Dims5,
    window: [usize; 3],
    stride: [usize; 3],
) -> Result<Tensor5> {
    let [n, c, id, ih, iw] = input_dims;
    let [od, oh, ow] = pool_output_dims([id, ih, iw], window, stride)?;
    if grad_out.dims() != [n, c, od, oh, ow] {
        return Err(shape_err!("pool gradient {:?} does not match output {:?}", grad_out.dims(), [n, c, od, oh, ow]));
    }
    let count = (window[0] * window[1] * window[2]) as f64;
    let mut grad_x = Tensor5::zeros(input_dims);
    let in_vol = id * ih * iw;
    let out_vol = od * oh * ow;
    for (g, dst) in grad_out.data().chunks(out_vol).zip(grad_x.data_mut().chunks_mut(in_vol)) {
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let share = g[(z * oh + y) * ow + xx] / count;
                    for a in 0..window[0] {
                        let iz = z * stride[0] + a;
                        for b in 0..window[1] {
                            let iy = y * stride[1] + b;
                            let base = (iz * ih + iy) * iw + xx * stride[2];
                            for v in &mut dst[base..base + window[2]] {
                                *v += share;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(grad_x)
}
