//! Dynamic attention convolution.
//!
//! A DAC layer holds `K` convolution kernels of identical shape. For every
//! input sample it computes attention weights `pi` on the probability simplex
//! (global average pool, affine map, ReLU, affine map, softmax) and convolves
//! the sample with the convex combination `sum_k pi_k W_k` (and likewise for
//! the biases). Batch norm and activation are left to the enclosing block.

mod cost;

pub use cost::{aggregation_cost, attention_cost, conv_cost, dac_param_count, satisfies_cost_constraint};

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{
    conv_output_dims, conv_sample_backward, conv_sample_forward, global_avg_pool3d, global_avg_pool3d_backward, relu,
    relu_backward, softmax_rows, softmax_rows_backward, Conv3dGeometry, ConvKernel, Linear, Matrix, Tensor5,
};

/// Width of the attention bottleneck: `c_in / 4`, at least 1.
pub fn attention_hidden_dim(c_in: usize) -> usize {
    (c_in / 4).max(1)
}

/// Parameters of one DAC layer. The same type holds their gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct DacLayer {
    kernels: Vec<ConvKernel>,
    fc1: Linear,
    fc2: Linear,
    geometry: Conv3dGeometry,
}

impl DacLayer {
    pub fn new(kernels: Vec<ConvKernel>, fc1: Linear, fc2: Linear, geometry: Conv3dGeometry) -> Result<Self> {
        let first = kernels.first().ok_or_else(|| shape_err!("a DAC layer needs at least one kernel"))?;
        if let Some(k) = kernels.iter().find(|k| !k.same_layout(first)) {
            return Err(shape_err!("DAC kernels must share one shape: {:?} vs {:?}", first.dims(), k.dims()));
        }
        let c_in = first.c_in();
        if fc1.in_dim() != c_in || fc1.out_dim() != fc2.in_dim() || fc2.out_dim() != kernels.len() {
            return Err(shape_err!(
                "attention maps {} -> {} -> {} do not fit c_in {c_in} and K {}",
                fc1.in_dim(),
                fc1.out_dim(),
                fc2.out_dim(),
                kernels.len()
            ));
        }
        Ok(Self { kernels, fc1, fc2, geometry })
    }

    /// Random initialisation.
    ///
    /// Every kernel is drawn independently, uniform in `+-sqrt(6 / fan_in)`
    /// with biases in `+-1/sqrt(fan_in)`. The first attention map uses the
    /// same `+-1/sqrt(fan_in)` rule; the second starts at zero so the
    /// initial attention is uniform.
    pub fn init(
        rng: &mut impl Rng,
        c_in: usize,
        c_out: usize,
        size: [usize; 3],
        num_kernels: usize,
        geometry: Conv3dGeometry,
        with_bias: bool,
    ) -> Result<Self> {
        if num_kernels == 0 || c_in == 0 || c_out == 0 {
            return Err(shape_err!("DAC layer needs K, c_in, c_out >= 1 (got {num_kernels}, {c_in}, {c_out})"));
        }
        let dims = [c_out, c_in, size[0], size[1], size[2]];
        let fan_in = (c_in * size.iter().product::<usize>()) as f64;
        let w_bound = (6.0 / fan_in).sqrt();
        let b_bound = 1.0 / fan_in.sqrt();
        let kernels = (0..num_kernels)
            .map(|_| {
                let w = (0..dims.iter().product::<usize>()).map(|_| rng.random_range(-w_bound..w_bound)).collect();
                let b = if with_bias {
                    (0..c_out).map(|_| rng.random_range(-b_bound..b_bound)).collect()
                } else {
                    Vec::new()
                };
                ConvKernel::new(dims, w, b)
            })
            .collect::<Result<Vec<_>>>()?;
        let hidden = attention_hidden_dim(c_in);
        let a_bound = 1.0 / (c_in as f64).sqrt();
        let fc1 = Linear::new(
            c_in,
            hidden,
            (0..c_in * hidden).map(|_| rng.random_range(-a_bound..a_bound)).collect(),
            (0..hidden).map(|_| rng.random_range(-a_bound..a_bound)).collect(),
        )?;
        let fc2 = Linear::zeros(hidden, num_kernels);
        Self::new(kernels, fc1, fc2, geometry)
    }

    /// A zero-valued layer with the same layout, used for gradients.
    pub fn zeros_like(&self) -> Self {
        Self {
            kernels: self.kernels.iter().map(ConvKernel::zeros_like).collect(),
            fc1: Linear::zeros(self.fc1.in_dim(), self.fc1.out_dim()),
            fc2: Linear::zeros(self.fc2.in_dim(), self.fc2.out_dim()),
            geometry: self.geometry,
        }
    }

    pub fn num_kernels(&self) -> usize {
        self.kernels.len()
    }

    pub fn c_in(&self) -> usize {
        self.kernels[0].c_in()
    }

    pub fn c_out(&self) -> usize {
        self.kernels[0].c_out()
    }

    pub fn kernel_size(&self) -> [usize; 3] {
        self.kernels[0].size()
    }

    pub fn has_bias(&self) -> bool {
        self.kernels[0].has_bias()
    }

    pub fn geometry(&self) -> Conv3dGeometry {
        self.geometry
    }

    pub fn kernels(&self) -> &[ConvKernel] {
        &self.kernels
    }

    pub fn kernels_mut(&mut self) -> &mut [ConvKernel] {
        &mut self.kernels
    }

    pub fn fc1(&self) -> &Linear {
        &self.fc1
    }

    pub fn fc1_mut(&mut self) -> &mut Linear {
        &mut self.fc1
    }

    pub fn fc2(&self) -> &Linear {
        &self.fc2
    }

    pub fn fc2_mut(&mut self) -> &mut Linear {
        &mut self.fc2
    }

    pub fn num_params(&self) -> usize {
        self.kernels.iter().map(ConvKernel::num_params).sum::<usize>() + self.fc1.num_params() + self.fc2.num_params()
    }

    /// Cheap content hash used to detect a cache from different parameters.
    fn fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |vals: &[f64]| {
            for v in vals {
                h = (h ^ v.to_bits()).wrapping_mul(PRIME);
            }
        };
        for k in &self.kernels {
            eat(k.weights());
            eat(k.bias());
        }
        eat(&self.fc1.weight);
        eat(&self.fc1.bias);
        eat(&self.fc2.weight);
        eat(&self.fc2.bias);
        h
    }
}

/// Per-sample attention over the `K` kernels: an `n x K` row-stochastic
/// matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pi: Matrix,
}

impl AttentionWeights {
    pub fn matrix(&self) -> &Matrix {
        &self.pi
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.pi.row(i)
    }

    pub fn batch(&self) -> usize {
        self.pi.rows()
    }
}

struct AttentionTrace {
    pooled: Matrix,
    hidden_pre: Matrix,
    hidden: Matrix,
    pi: Matrix,
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("softmax temperature must be positive, got {temperature}")))
    }
}

fn attention_trace(x: &Tensor5, layer: &DacLayer, temperature: f64) -> Result<AttentionTrace> {
    check_temperature(temperature)?;
    if x.channels() != layer.c_in() {
        return Err(shape_err!("DAC layer expects {} input channels, got {}", layer.c_in(), x.channels()));
    }
    let pooled = global_avg_pool3d(x)?;
    let hidden_pre = layer.fc1.forward(&pooled)?;
    let hidden = Matrix::new(hidden_pre.rows(), hidden_pre.cols(), relu(hidden_pre.data()))?;
    let mut logits = layer.fc2.forward(&hidden)?;
    logits.data_mut().iter_mut().for_each(|v| *v /= temperature);
    let pi = softmax_rows(&logits);
    Ok(AttentionTrace { pooled, hidden_pre, hidden, pi })
}

/// `softmax(fc2(relu(fc1(gap(x)))) / temperature)`, one row per sample.
pub fn attention_weights(x: &Tensor5, layer: &DacLayer, temperature: f64) -> Result<AttentionWeights> {
    Ok(AttentionWeights { pi: attention_trace(x, layer, temperature)?.pi })
}

/// Convex combination of the layer's kernels and biases under `pi_row`.
pub fn aggregate_kernels(pi_row: &[f64], layer: &DacLayer) -> Result<ConvKernel> {
    if pi_row.len() != layer.num_kernels() {
        return Err(shape_err!("{} attention weights for {} kernels", pi_row.len(), layer.num_kernels()));
    }
    let sum: f64 = pi_row.iter().sum();
    if pi_row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
        return Err(shape_err!("attention weights {pi_row:?} are not on the simplex"));
    }
    let first = &layer.kernels[0];
    let scale = |v: &[f64], p: f64| v.iter().map(|a| p * a).collect::<Vec<_>>();
    let mut weights = scale(first.weights(), pi_row[0]);
    let mut bias = scale(first.bias(), pi_row[0]);
    for (k, &p) in layer.kernels.iter().zip(pi_row).skip(1) {
        for (a, b) in weights.iter_mut().zip(k.weights()) {
            *a += p * b;
        }
        for (a, b) in bias.iter_mut().zip(k.bias()) {
            *a += p * b;
        }
    }
    ConvKernel::new(first.dims(), weights, bias)
}

/// Intermediates retained by [`dac_forward`] for [`dac_backward`].
#[derive(Clone, Debug)]
pub struct DacCache {
    x: Tensor5,
    pooled: Matrix,
    hidden_pre: Matrix,
    hidden: Matrix,
    pi: Matrix,
    aggregated: Vec<ConvKernel>,
    temperature: f64,
    out_spatial: [usize; 3],
    fingerprint: u64,
}

impl DacCache {
    /// The layer input seen by the forward pass.
    pub fn input(&self) -> &Tensor5 {
        &self.x
    }

    pub fn attention(&self) -> &Matrix {
        &self.pi
    }

    pub fn aggregated_kernels(&self) -> &[ConvKernel] {
        &self.aggregated
    }
}

/// Convolves every sample with its own aggregated kernel.
pub fn dac_forward(x: &Tensor5, layer: &DacLayer, temperature: f64) -> Result<(Tensor5, DacCache)> {
    let trace = attention_trace(x, layer, temperature)?;
    let out_sp = conv_output_dims(x.spatial(), layer.kernel_size(), layer.geometry)?;
    let n = x.batch();
    let mut y = Tensor5::zeros([n, layer.c_out(), out_sp[0], out_sp[1], out_sp[2]]);
    let mut aggregated = Vec::with_capacity(n);
    for i in 0..n {
        let kernel = aggregate_kernels(trace.pi.row(i), layer)?;
        conv_sample_forward(x.sample(i), x.spatial(), &kernel, layer.geometry, out_sp, y.sample_mut(i));
        aggregated.push(kernel);
    }
    let cache = DacCache {
        x: x.clone(),
        pooled: trace.pooled,
        hidden_pre: trace.hidden_pre,
        hidden: trace.hidden,
        pi: trace.pi,
        aggregated,
        temperature,
        out_spatial: out_sp,
        fingerprint: layer.fingerprint(),
    };
    Ok((y, cache))
}

/// Gradients of a DAC layer: input gradient plus a layer-shaped parameter
/// gradient.
#[derive(Clone, Debug)]
pub struct DacGrads {
    pub grad_x: Tensor5,
    pub params: DacLayer,
}

/// Exact gradients through both the kernel aggregation and the attention
/// branch (which depends on the input through global pooling).
pub fn dac_backward(grad_y: &Tensor5, cache: &DacCache, layer: &DacLayer) -> Result<DacGrads> {
    if cache.fingerprint != layer.fingerprint()
        || cache.pi.cols() != layer.num_kernels()
        || cache.x.channels() != layer.c_in()
    {
        return Err(Error::State("DAC cache was produced by different layer parameters".into()));
    }
    let x = &cache.x;
    let n = x.batch();
    let out_sp = cache.out_spatial;
    let expected = [n, layer.c_out(), out_sp[0], out_sp[1], out_sp[2]];
    if grad_y.dims() != expected {
        return Err(shape_err!("DAC gradient {:?} does not match forward output {:?}", grad_y.dims(), expected));
    }

    let mut grad_x = Tensor5::zeros(x.dims());
    let mut params = layer.zeros_like();
    let mut grad_pi = Matrix::zeros(n, layer.num_kernels());
    let first = &layer.kernels[0];
    let mut gw = vec![0.0; first.weights().len()];
    let mut gb = vec![0.0; first.bias().len()];
    for i in 0..n {
        conv_sample_backward(
            grad_y.sample(i),
            x.sample(i),
            x.spatial(),
            &cache.aggregated[i],
            layer.geometry,
            out_sp,
            grad_x.sample_mut(i),
            &mut gw,
            &mut gb,
        );
        for (k, kernel) in layer.kernels.iter().enumerate() {
            let p = cache.pi.get(i, k);
            let acc = &mut params.kernels[k];
            for (a, g) in acc.weights_mut().iter_mut().zip(&gw) {
                *a += p * g;
            }
            for (a, g) in acc.bias_mut().iter_mut().zip(&gb) {
                *a += p * g;
            }
            let dot_w: f64 = gw.iter().zip(kernel.weights()).map(|(a, b)| a * b).sum();
            let dot_b: f64 = gb.iter().zip(kernel.bias()).map(|(a, b)| a * b).sum();
            grad_pi.row_mut(i)[k] = dot_w + dot_b;
        }
    }

    let mut grad_logits = softmax_rows_backward(&grad_pi, &cache.pi)?;
    grad_logits.data_mut().iter_mut().for_each(|v| *v /= cache.temperature);
    let (grad_hidden, g_fc2) = layer.fc2.backward(&grad_logits, &cache.hidden)?;
    let grad_hidden_pre = Matrix::new(
        grad_hidden.rows(),
        grad_hidden.cols(),
        relu_backward(grad_hidden.data(), cache.hidden_pre.data()),
    )?;
    let (grad_pooled, g_fc1) = layer.fc1.backward(&grad_hidden_pre, &cache.pooled)?;
    let grad_x_attention = global_avg_pool3d_backward(&grad_pooled, x.dims())?;
    grad_x.add_assign(&grad_x_attention)?;
    params.fc1 = g_fc1;
    params.fc2 = g_fc2;
    Ok(DacGrads { grad_x, params })
}
