use super::{OptimizerKind, TrainConfig};
use crate::densenet::DenseNet;
use crate::error::{shape_err, Result};

/// One SGD step with momentum; weight decay is added to the gradient:
/// `v <- momentum v + (g + wd w)`, `w <- w - lr v`.
pub fn sgd_momentum_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() || velocity.len() != params.len() {
        return Err(shape_err!(
            "SGD step over {} params with {} grads and {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        ));
    }
    for ((w, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + (g + weight_decay * *w);
        *w -= lr * *v;
    }
    Ok(())
}

/// Hyperparameters of [`adam_step`].
#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// One bias-corrected Adam step; `step` counts from 1.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    step: u64,
    hp: AdamParams,
) -> Result<()> {
    if grads.len() != params.len() || first.len() != params.len() || second.len() != params.len() {
        return Err(shape_err!("Adam step over {} params with mismatched state", params.len()));
    }
    let c1 = 1.0 - hp.beta1.powi(step as i32);
    let c2 = 1.0 - hp.beta2.powi(step as i32);
    for (((w, &g), m), v) in params.iter_mut().zip(grads).zip(first.iter_mut()).zip(second.iter_mut()) {
        let g = g + hp.weight_decay * *w;
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        *w -= hp.lr * (*m / c1) / ((*v / c2).sqrt() + hp.eps);
    }
    Ok(())
}

/// Optimiser state for every parameter tensor of a network.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, net: &DenseNet) -> Self {
        let zeros: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.values.len()]).collect();
        let second = if kind == OptimizerKind::Adam { zeros.clone() } else { Vec::new() };
        Self { kind, first: zeros, second, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, net: &mut DenseNet, grads: &DenseNet, lr: f64, cfg: &TrainConfig) -> Result<()> {
        let g: Vec<&[f64]> = grads.params().iter().map(|p| p.values).collect();
        if g.len() != self.first.len() {
            return Err(shape_err!("{} gradient tensors for {} parameters", g.len(), self.first.len()));
        }
        self.steps += 1;
        let mut result = Ok(());
        let (kind, steps) = (self.kind, self.steps);
        let (first, second) = (&mut self.first, &mut self.second);
        net.visit_params_mut(|i, w| {
            if result.is_err() {
                return;
            }
            result = match kind {
                OptimizerKind::SgdMomentum => {
                    sgd_momentum_step(w, g[i], &mut first[i], lr, cfg.momentum, cfg.weight_decay)
                }
                OptimizerKind::Adam => adam_step(
                    w,
                    g[i],
                    &mut first[i],
                    &mut second[i],
                    steps,
                    AdamParams {
                        lr,
                        beta1: cfg.adam_beta1,
                        beta2: cfg.adam_beta2,
                        eps: cfg.adam_eps,
                        weight_decay: cfg.weight_decay,
                    },
                ),
            };
        });
        result
    }
}
