use super::Tensor5;
use crate::error::{shape_err, Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
/// Fraction of the previous running statistic retained at each update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel affine parameters of a batch-norm layer. The same type holds
/// their gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Running mean / variance used in eval mode.
///
/// The first training update copies the batch statistics; later updates
/// blend them in with [`BN_MOMENTUM`]. Eval before any update is an error.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub updates: u64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], var: vec![1.0; channels], updates: 0 }
    }

    pub fn is_initialized(&self) -> bool {
        self.updates > 0
    }
}

/// What the backward pass needs from a training-mode forward.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    x_hat: Tensor5,
    inv_std: Vec<f64>,
}

impl BatchNormCache {
    pub fn normalized(&self) -> &Tensor5 {
        &self.x_hat
    }
}

impl BatchNorm {
    /// Identity initialisation: `gamma = 1`, `beta = 0`.
    pub fn new(channels: usize) -> Self {
        Self { gamma: vec![1.0; channels], beta: vec![0.0; channels] }
    }

    pub fn zeros(channels: usize) -> Self {
        Self { gamma: vec![0.0; channels], beta: vec![0.0; channels] }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn num_params(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    fn check(&self, x: &Tensor5, running: &RunningStats) -> Result<()> {
        let c = self.channels();
        if x.channels() != c || self.beta.len() != c || running.mean.len() != c || running.var.len() != c {
            return Err(shape_err!("batch norm over {c} channels applied to input {:?}", x.dims()));
        }
        if x.batch() == 0 || x.volume() == 0 {
            return Err(shape_err!("batch norm over empty input {:?}", x.dims()));
        }
        Ok(())
    }

    /// Normalises with batch statistics and returns the updated running stats.
    pub fn forward_train(
        &self,
        x: &Tensor5,
        running: &RunningStats,
    ) -> Result<(Tensor5, BatchNormCache, RunningStats)> {
        self.check(x, running)?;
        let [n, c, ..] = x.dims();
        let vol = x.volume();
        let count = (n * vol) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for i in 0..n {
            for (ch, m) in x.sample(i).chunks(vol).zip(mean.iter_mut()) {
                *m += ch.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for i in 0..n {
            for ((ch, v), m) in x.sample(i).chunks(vol).zip(var.iter_mut()).zip(&mean) {
                *v += ch.iter().map(|&a| (a - m) * (a - m)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();

        let mut x_hat = Tensor5::zeros(x.dims());
        let mut y = Tensor5::zeros(x.dims());
        for i in 0..n {
            let src = x.sample(i);
            let xh = x_hat.sample_mut(i);
            for ch in 0..c {
                let r = ch * vol..(ch + 1) * vol;
                for (h, &a) in xh[r.clone()].iter_mut().zip(&src[r]) {
                    *h = (a - mean[ch]) * inv_std[ch];
                }
            }
            let dst = y.sample_mut(i);
            for ch in 0..c {
                let r = ch * vol..(ch + 1) * vol;
                for (o, &h) in dst[r.clone()].iter_mut().zip(&xh[r]) {
                    *o = self.gamma[ch] * h + self.beta[ch];
                }
            }
        }

        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        let updated = if running.is_initialized() {
            RunningStats {
                mean: running.mean.iter().zip(&mean).map(|(r, b)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * b).collect(),
                var: running
                    .var
                    .iter()
                    .zip(&var)
                    .map(|(r, b)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * b * unbias)
                    .collect(),
                updates: running.updates + 1,
            }
        } else {
            RunningStats { mean, var: var.iter().map(|v| v * unbias).collect(), updates: 1 }
        };
        Ok((y, BatchNormCache { x_hat, inv_std }, updated))
    }

    /// Normalises with running statistics.
    pub fn forward_eval(&self, x: &Tensor5, running: &RunningStats) -> Result<Tensor5> {
        self.check(x, running)?;
        if !running.is_initialized() {
            return Err(Error::State("eval-mode batch norm before any training update".into()));
        }
        let [n, c, ..] = x.dims();
        let vol = x.volume();
        let mut y = Tensor5::zeros(x.dims());
        for i in 0..n {
            let src = x.sample(i);
            let dst = y.sample_mut(i);
            for ch in 0..c {
                let inv = 1.0 / (running.var[ch] + BN_EPSILON).sqrt();
                let r = ch * vol..(ch + 1) * vol;
                for (o, &a) in dst[r.clone()].iter_mut().zip(&src[r]) {
                    *o = self.gamma[ch] * ((a - running.mean[ch]) * inv) + self.beta[ch];
                }
            }
        }
        Ok(y)
    }

    /// Gradients with respect to the input and `(gamma, beta)` of a
    /// training-mode forward.
    pub fn backward(&self, grad_y: &Tensor5, cache: &BatchNormCache) -> Result<(Tensor5, BatchNorm)> {
        if grad_y.dims() != cache.x_hat.dims() {
            return Err(shape_err!(
                "batch norm gradient {:?} does not match cached input {:?}",
                grad_y.dims(),
                cache.x_hat.dims()
            ));
        }
        let [n, c, ..] = grad_y.dims();
        let vol = grad_y.volume();
        let count = (n * vol) as f64;
        let mut grads = BatchNorm::zeros(c);
        for i in 0..n {
            let g = grad_y.sample(i);
            let xh = cache.x_hat.sample(i);
            for ch in 0..c {
                let r = ch * vol..(ch + 1) * vol;
                grads.beta[ch] += g[r.clone()].iter().sum::<f64>();
                grads.gamma[ch] += g[r.clone()].iter().zip(&xh[r]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let mut grad_x = Tensor5::zeros(grad_y.dims());
        for i in 0..n {
            let g = grad_y.sample(i);
            let xh = cache.x_hat.sample(i);
            let dst = grad_x.sample_mut(i);
            for ch in 0..c {
                let scale = self.gamma[ch] * cache.inv_std[ch] / count;
                let (sum_g, sum_gx) = (grads.beta[ch], grads.gamma[ch]);
                let r = ch * vol..(ch + 1) * vol;
                for ((o, &a), &h) in dst[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xh[r]) {
                    *o = scale * (count * a - sum_g - h * sum_gx);
                }
            }
        }
        Ok((grad_x, grads))
    }
}
