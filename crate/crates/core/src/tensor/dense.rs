use super::Matrix;
use crate::error::{shape_err, Error, Result};

/// Affine map `y = W x + b` with `W` stored row-major as `out x in`.
/// The same type holds its gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    in_dim: usize,
    out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(shape_err!("affine map {in_dim} -> {out_dim} must have nonzero dims"));
        }
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(shape_err!(
                "affine map {in_dim} -> {out_dim} given {} weights and {} biases",
                weight.len(),
                bias.len()
            ));
        }
        Ok(Self { in_dim, out_dim, weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weight: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim {
            return Err(shape_err!("affine map expects {} inputs, got {}", self.in_dim, x.cols()));
        }
        let mut y = Matrix::zeros(x.rows(), self.out_dim);
        for r in 0..x.rows() {
            let xr = x.row(r);
            for (o, yo) in y.row_mut(r).iter_mut().enumerate() {
                let w = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                *yo = self.bias[o] + w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(y)
    }

    /// Returns `(grad_x, grad_params)` for `y = forward(x)`.
    pub fn backward(&self, grad_y: &Matrix, x: &Matrix) -> Result<(Matrix, Linear)> {
        if grad_y.cols() != self.out_dim || x.cols() != self.in_dim || grad_y.rows() != x.rows() {
            return Err(shape_err!(
                "affine backward: grad {}x{}, input {}x{}, map {} -> {}",
                grad_y.rows(),
                grad_y.cols(),
                x.rows(),
                x.cols(),
                self.in_dim,
                self.out_dim
            ));
        }
        let mut grads = Linear::zeros(self.in_dim, self.out_dim);
        let mut grad_x = Matrix::zeros(x.rows(), self.in_dim);
        for r in 0..x.rows() {
            let (g, xr) = (grad_y.row(r), x.row(r));
            for (o, &go) in g.iter().enumerate() {
                grads.bias[o] += go;
                let gw = &mut grads.weight[o * self.in_dim..(o + 1) * self.in_dim];
                for (w, &xi) in gw.iter_mut().zip(xr) {
                    *w += go * xi;
                }
            }
            for (i, gx) in grad_x.row_mut(r).iter_mut().enumerate() {
                let mut acc = 0.0;
                for (o, &go) in g.iter().enumerate() {
                    acc += self.weight[o * self.in_dim + i] * go;
                }
                *gx = acc;
            }
        }
        Ok((grad_x, grads))
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient through `relu`, given the pre-activation input.
pub fn relu_backward(grad: &[f64], input: &[f64]) -> Vec<f64> {
    grad.iter().zip(input).map(|(&g, &x)| if x > 0.0 { g } else { 0.0 }).collect()
}

/// Numerically stable softmax over each row.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Gradient with respect to the softmax input, given the softmax output `p`.
pub fn softmax_rows_backward(grad_p: &Matrix, p: &Matrix) -> Result<Matrix> {
    if grad_p.rows() != p.rows() || grad_p.cols() != p.cols() {
        return Err(shape_err!("softmax gradient shape mismatch"));
    }
    let mut out = Matrix::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let (g, pr) = (grad_p.row(r), p.row(r));
        let mut dot = 0.0;
        for (a, b) in g.iter().zip(pr) {
            dot += a * b;
        }
        for ((o, &gi), &pi) in out.row_mut(r).iter_mut().zip(g).zip(pr) {
            *o = pi * (gi - dot);
        }
    }
    Ok(out)
}

fn check_targets(logits: &Matrix, targets: &[usize]) -> Result<()> {
    if targets.len() != logits.rows() {
        return Err(shape_err!("{} targets for {} logit rows", targets.len(), logits.rows()));
    }
    if logits.rows() == 0 {
        return Err(shape_err!("cross-entropy over an empty batch"));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= logits.cols()) {
        return Err(Error::Data(format!("target class {t} out of range for {} classes", logits.cols())));
    }
    Ok(())
}

/// Mean negative log-likelihood of integer targets under `softmax(logits)`.
pub fn cross_entropy(logits: &Matrix, targets: &[usize]) -> Result<f64> {
    check_targets(logits, targets)?;
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[t];
    }
    Ok(total / targets.len() as f64)
}

/// Gradient of [`cross_entropy`] with respect to the logits.
pub fn cross_entropy_backward(logits: &Matrix, targets: &[usize]) -> Result<Matrix> {
    check_targets(logits, targets)?;
    let mut g = softmax_rows(logits);
    let n = targets.len() as f64;
    for (r, &t) in targets.iter().enumerate() {
        let row = g.row_mut(r);
        row[t] -= 1.0;
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(g)
}
