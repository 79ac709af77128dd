use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layout::NetworkLayout;
use super::DenseNetConfig;
use crate::dac::{dac_backward, dac_forward, DacCache, DacLayer};
use crate::error::{shape_err, Result};
use crate::tensor::{
    avg_pool3d, avg_pool3d_backward, conv3d_backward, conv3d_forward, global_avg_pool3d, global_avg_pool3d_backward,
    relu, relu_backward, BatchNorm, BatchNormCache, Conv3dGeometry, ConvKernel, Dims5, Linear, Matrix, RunningStats,
    Tensor5,
};

const SAME_3X3X3: Conv3dGeometry = Conv3dGeometry::same(1);
const POINTWISE: Conv3dGeometry = Conv3dGeometry::same(0);

/// Pre-activation dense block: batch norm, ReLU, 3x3x3 DAC convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub norm: BatchNorm,
    pub stats: RunningStats,
    pub conv: DacLayer,
}

/// Batch norm, ReLU, pointwise static convolution, average pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub norm: BatchNorm,
    pub stats: RunningStats,
    pub conv: ConvKernel,
    pub window: [usize; 3],
}

/// A named, shaped view of one parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamView<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: &'a [f64],
}

/// DAC-DenseNet for hyperspectral patches shaped `(n, 1, bands, patch, patch)`.
///
/// Gradients are returned as a `DenseNet` of the same layout whose running
/// statistics are unused.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    config: DenseNetConfig,
    layout: NetworkLayout,
    stem: DacLayer,
    stages: Vec<Vec<DenseLayer>>,
    transitions: Vec<Transition>,
    head_norm: BatchNorm,
    head_stats: RunningStats,
    classifier: Linear,
}

fn uniform(rng: &mut impl Rng, len: usize, bound: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

impl DenseNet {
    /// Builds a freshly initialised network; identical seeds give identical
    /// weights.
    pub fn new(config: DenseNetConfig, seed: u64) -> Result<Self> {
        let layout = NetworkLayout::from_config(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, bias, cube) = (config.kernels, config.bias, [3, 3, 3]);
        let stem = DacLayer::init(&mut rng, 1, config.stem_channels, cube, k, SAME_3X3X3, bias)?;
        let mut stages = Vec::with_capacity(layout.stages.len());
        for stage in &layout.stages {
            let mut blocks = Vec::with_capacity(stage.block_inputs.len());
            for &c_in in &stage.block_inputs {
                blocks.push(DenseLayer {
                    norm: BatchNorm::new(c_in),
                    stats: RunningStats::new(c_in),
                    conv: DacLayer::init(&mut rng, c_in, stage.growth, cube, k, SAME_3X3X3, bias)?,
                });
            }
            stages.push(blocks);
        }
        let mut transitions = Vec::with_capacity(layout.transitions.len());
        for t in &layout.transitions {
            let c = t.channels;
            let conv = ConvKernel::new(
                [c, c, 1, 1, 1],
                uniform(&mut rng, c * c, (6.0 / c as f64).sqrt()),
                uniform(&mut rng, c, 1.0 / (c as f64).sqrt()),
            )?;
            transitions.push(Transition {
                norm: BatchNorm::new(c),
                stats: RunningStats::new(c),
                conv,
                window: t.window,
            });
        }
        let c = layout.classifier_inputs;
        let bound = 1.0 / (c as f64).sqrt();
        let classifier = Linear::new(
            c,
            config.num_classes,
            uniform(&mut rng, c * config.num_classes, bound),
            uniform(&mut rng, config.num_classes, bound),
        )?;
        Ok(Self {
            config,
            layout,
            stem,
            stages,
            transitions,
            head_norm: BatchNorm::new(c),
            head_stats: RunningStats::new(c),
            classifier,
        })
    }

    /// Zero-valued network of the same layout, used to hold gradients.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_params_mut(|_, v| v.fill(0.0));
        z
    }

    pub fn config(&self) -> &DenseNetConfig {
        &self.config
    }

    pub fn layout(&self) -> &NetworkLayout {
        &self.layout
    }

    pub fn stem(&self) -> &DacLayer {
        &self.stem
    }

    pub fn stages(&self) -> &[Vec<DenseLayer>] {
        &self.stages
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn head_norm(&self) -> (&BatchNorm, &RunningStats) {
        (&self.head_norm, &self.head_stats)
    }

    pub fn classifier(&self) -> &Linear {
        &self.classifier
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.values.len()).sum()
    }

    /// Every trainable tensor, in a fixed order shared with
    /// [`visit_params_mut`](Self::visit_params_mut).
    pub fn params(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        push_dac(&mut out, "stem", &self.stem);
        for (m, blocks) in self.stages.iter().enumerate() {
            for (j, b) in blocks.iter().enumerate() {
                let p = format!("stage{}.block{}", m + 1, j + 1);
                push_norm(&mut out, &p, &b.norm);
                push_dac(&mut out, &format!("{p}.conv"), &b.conv);
            }
        }
        for (m, t) in self.transitions.iter().enumerate() {
            let p = format!("transition{}", m + 1);
            push_norm(&mut out, &p, &t.norm);
            push_kernel(&mut out, &format!("{p}.conv"), &t.conv);
        }
        push_norm(&mut out, "head", &self.head_norm);
        let c = &self.classifier;
        out.push(view("classifier.weight", vec![c.out_dim(), c.in_dim()], &c.weight));
        out.push(view("classifier.bias", vec![c.out_dim()], &c.bias));
        out
    }

    /// Visits every trainable tensor with its index in [`params`](Self::params).
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(usize, &mut [f64])) {
        let mut idx = 0;
        let mut g = |v: &mut [f64]| {
            f(idx, v);
            idx += 1;
        };
        visit_dac(&mut g, &mut self.stem);
        for b in self.stages.iter_mut().flatten() {
            g(&mut b.norm.gamma);
            g(&mut b.norm.beta);
            visit_dac(&mut g, &mut b.conv);
        }
        for t in &mut self.transitions {
            g(&mut t.norm.gamma);
            g(&mut t.norm.beta);
            g(t.conv.weights_mut());
            if t.conv.has_bias() {
                g(t.conv.bias_mut());
            }
        }
        g(&mut self.head_norm.gamma);
        g(&mut self.head_norm.beta);
        g(&mut self.classifier.weight);
        g(&mut self.classifier.bias);
    }

    /// Running statistics in execution order: each stage's blocks, then the
    /// transition leaving it, and finally the head.
    fn stats_refs(&self) -> Vec<(String, &RunningStats)> {
        let mut out = Vec::new();
        for (m, blocks) in self.stages.iter().enumerate() {
            if m > 0 {
                out.push((format!("transition{m}"), &self.transitions[m - 1].stats));
            }
            for (j, b) in blocks.iter().enumerate() {
                out.push((format!("stage{}.block{}", m + 1, j + 1), &b.stats));
            }
        }
        out.push(("head".to_string(), &self.head_stats));
        out
    }

    fn stats_mut(&mut self) -> Vec<&mut RunningStats> {
        let mut out = Vec::new();
        let mut transitions = self.transitions.iter_mut();
        for (m, blocks) in self.stages.iter_mut().enumerate() {
            if m > 0 {
                out.push(&mut transitions.next().expect("one transition per later stage").stats);
            }
            out.extend(blocks.iter_mut().map(|b| &mut b.stats));
        }
        out.push(&mut self.head_stats);
        out
    }

    /// Batch-norm running statistics, keyed by the owning layer's name.
    pub fn running_stats(&self) -> Vec<(String, RunningStats)> {
        self.stats_refs().into_iter().map(|(n, s)| (n, s.clone())).collect()
    }

    /// Replaces every running statistic, in [`running_stats`](Self::running_stats) order.
    pub fn set_running_stats(&mut self, stats: Vec<RunningStats>) -> Result<()> {
        let slots = self.stats_mut();
        if slots.len() != stats.len() {
            return Err(shape_err!("{} running stats for {} norms", stats.len(), slots.len()));
        }
        for (slot, s) in slots.into_iter().zip(stats) {
            if s.mean.len() != slot.mean.len() || s.var.len() != slot.mean.len() {
                return Err(shape_err!(
                    "running stats of width {} for a norm over {} channels",
                    s.mean.len(),
                    slot.mean.len()
                ));
            }
            *slot = s;
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor5) -> Result<()> {
        let [_, c, d, h, w] = x.dims();
        let [bands, p1, p2] = self.layout.input;
        if c != 1 || [d, h, w] != [bands, p1, p2] || x.batch() == 0 {
            return Err(shape_err!("network expects input (n >= 1, 1, {bands}, {p1}, {p2}), got {:?}", x.dims()));
        }
        Ok(())
    }

    /// Logits with running statistics and no dropout.
    pub fn forward_eval(&self, x: &Tensor5) -> Result<Matrix> {
        self.run(x, None).map(|(logits, _)| logits)
    }

    /// Logits with batch statistics and dropout. Running statistics are
    /// updated in place; the cache feeds [`backward`](Self::backward).
    pub fn forward_train(&mut self, x: &Tensor5, rng: &mut dyn RngCore) -> Result<(Matrix, ForwardCache)> {
        let (logits, cache) = self.run(x, Some(rng))?;
        let cache = cache.expect("training pass keeps its cache");
        for (slot, s) in self.stats_mut().into_iter().zip(&cache.stats) {
            *slot = s.clone();
        }
        Ok((logits, cache))
    }

    fn run(&self, x: &Tensor5, rng: Option<&mut dyn RngCore>) -> Result<(Matrix, Option<ForwardCache>)> {
        self.check_input(x)?;
        let train = rng.is_some();
        let temp = self.config.temperature;
        let mut stats = Vec::new();
        let mut activity = Vec::new();

        let (stem_out, stem_cache) = dac_forward(x, &self.stem, temp)?;
        activity.push(("stem".to_string(), stem_out.is_finite()));
        let mut carried = vec![stem_out.clone()];
        let mut bundle = stem_out;
        let mut block_caches = Vec::new();
        let mut transition_caches = Vec::new();
        let mut carried_dims = Vec::new();
        let mut exit_dims = Vec::new();
        let last = self.stages.len() - 1;

        for (m, blocks) in self.stages.iter().enumerate() {
            if m > 0 {
                let tr = &self.transitions[m - 1];
                let (t_out, t_cache) = transition_forward(tr, &bundle, train, &mut stats)?;
                activity.push((format!("transition{m}"), t_out.is_finite()));
                transition_caches.push(t_cache);
                let w = tr.window;
                carried_dims.push(carried.iter().map(Tensor5::dims).collect::<Vec<_>>());
                let mut feeds = carried.iter().map(|c| avg_pool3d(c, w, w)).collect::<Result<Vec<_>>>()?;
                let mut parts = vec![&t_out];
                parts.extend(feeds.iter());
                let entry = Tensor5::concat_channels(&parts)?;
                if m < last {
                    feeds.push(avg_pool3d(&bundle, w, w)?);
                }
                carried = feeds;
                bundle = entry;
            }
            let mut caches = Vec::with_capacity(blocks.len());
            for (j, b) in blocks.iter().enumerate() {
                let (act, bn) = norm_relu(&b.norm, &b.stats, &bundle, train, &mut stats)?;
                let (new, dac) = dac_forward(&act, &b.conv, temp)?;
                activity.push((format!("stage{}.block{}", m + 1, j + 1), new.is_finite()));
                bundle = Tensor5::concat_channels(&[&bundle, &new])?;
                if let Some(bn) = bn {
                    caches.push(BlockCache { bn, dac });
                }
            }
            block_caches.push(caches);
            exit_dims.push(bundle.dims());
        }

        let (head_act, head_bn) = norm_relu(&self.head_norm, &self.head_stats, &bundle, train, &mut stats)?;
        let pooled = global_avg_pool3d(&head_act)?;
        let (features, mask) = match rng {
            Some(r) if self.config.dropout > 0.0 => {
                let p = self.config.dropout;
                let scale = 1.0 / (1.0 - p);
                let mask: Vec<f64> =
                    (0..pooled.data().len()).map(|_| if r.random::<f64>() < p { 0.0 } else { scale }).collect();
                let data = pooled.data().iter().zip(&mask).map(|(a, b)| a * b).collect();
                (Matrix::new(pooled.rows(), pooled.cols(), data)?, Some(mask))
            }
            _ => (pooled, None),
        };
        let logits = self.classifier.forward(&features)?;
        activity.push(("classifier".to_string(), logits.is_finite()));

        let cache = head_bn.map(|head_bn| ForwardCache {
            stem: stem_cache,
            blocks: block_caches,
            transitions: transition_caches,
            carried_dims,
            exit_dims,
            head_bn,
            head_act,
            mask,
            features,
            stats,
            activity,
        });
        Ok((logits, cache))
    }

    /// Parameter gradients of `sum(grad_logits * logits)` for the training
    /// pass that produced `cache`.
    pub fn backward(&self, grad_logits: &Matrix, cache: &ForwardCache) -> Result<DenseNet> {
        let mut grads = self.zeros_like();
        let (g_features, g_cls) = self.classifier.backward(grad_logits, &cache.features)?;
        grads.classifier = g_cls;
        let mut g_pooled = g_features;
        if let Some(mask) = &cache.mask {
            g_pooled.data_mut().iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
        }
        let g_act = global_avg_pool3d_backward(&g_pooled, cache.head_act.dims())?;
        let g_pre = relu_backward_tensor(&g_act, &cache.head_act)?;
        let (mut g_bundle, g_head) = self.head_norm.backward(&g_pre, &cache.head_bn)?;
        grads.head_norm = g_head;

        // Gradients of the maps carried into the next stage, at this stage's
        // resolution.
        let mut pending: Option<Vec<Tensor5>> = None;
        for m in (0..self.stages.len()).rev() {
            for (j, b) in self.stages[m].iter().enumerate().rev() {
                let bc = &cache.blocks[m][j];
                let c_in = self.layout.stages[m].block_inputs[j];
                let g_new = g_bundle.channel_slice(c_in, self.layout.stages[m].growth)?;
                let dg = dac_backward(&g_new, &bc.dac, &b.conv)?;
                let g_pre = relu_backward_tensor(&dg.grad_x, bc.dac.input())?;
                let (g_in, g_bn) = b.norm.backward(&g_pre, &bc.bn)?;
                let gb = &mut grads.stages[m][j];
                gb.conv = dg.params;
                gb.norm = g_bn;
                g_bundle = g_bundle.channel_slice(0, c_in)?;
                g_bundle.add_assign(&g_in)?;
            }
            if m == 0 {
                if let Some(p) = pending.take() {
                    g_bundle.add_assign(&p[0])?;
                }
                break;
            }

            let tr = &self.transitions[m - 1];
            let w = tr.window;
            let t_channels = self.layout.transitions[m - 1].channels;
            let mut offset = t_channels;
            let mut g_feeds = Vec::new();
            for &c in &self.layout.stages[m].feed_channels {
                g_feeds.push(g_bundle.channel_slice(offset, c)?);
                offset += c;
            }
            let g_t = g_bundle.channel_slice(0, t_channels)?;
            let (mut g_prev, g_tr) = transition_backward(tr, &g_t, &cache.transitions[m - 1])?;
            grads.transitions[m - 1].norm = g_tr.norm;
            grads.transitions[m - 1].conv = g_tr.conv;
            if let Some(p) = pending.take() {
                for (g, extra) in g_feeds.iter_mut().zip(&p) {
                    g.add_assign(extra)?;
                }
                let own = p.last().expect("carried exit map");
                g_prev.add_assign(&avg_pool3d_backward(own, cache.exit_dims[m - 1], w, w)?)?;
            }
            pending = Some(
                g_feeds
                    .iter()
                    .zip(&cache.carried_dims[m - 1])
                    .map(|(g, &d)| avg_pool3d_backward(g, d, w, w))
                    .collect::<Result<Vec<_>>>()?,
            );
            g_bundle = g_prev;
        }

        let dg = dac_backward(&g_bundle, &cache.stem, &self.stem)?;
        grads.stem = dg.params;
        Ok(grads)
    }
}

struct BlockCache {
    bn: BatchNormCache,
    dac: DacCache,
}

struct TransitionCache {
    bn: BatchNormCache,
    act: Tensor5,
    conv_dims: Dims5,
}

/// Intermediates of a training pass.
pub struct ForwardCache {
    stem: DacCache,
    blocks: Vec<Vec<BlockCache>>,
    transitions: Vec<Option<TransitionCache>>,
    carried_dims: Vec<Vec<Dims5>>,
    exit_dims: Vec<Dims5>,
    head_bn: BatchNormCache,
    head_act: Tensor5,
    mask: Option<Vec<f64>>,
    features: Matrix,
    stats: Vec<RunningStats>,
    activity: Vec<(String, bool)>,
}

impl ForwardCache {
    /// Name of the first layer whose output contained a NaN or infinity.
    pub fn first_nonfinite_layer(&self) -> Option<&str> {
        self.activity.iter().find(|(_, ok)| !ok).map(|(n, _)| n.as_str())
    }

    /// Channel counts of the feature maps actually leaving each stage.
    pub fn stage_exit_channels(&self) -> Vec<usize> {
        self.exit_dims.iter().map(|d| d[1]).collect()
    }

    /// Attention weights of every DAC layer, stem first.
    pub fn attention(&self) -> Vec<&Matrix> {
        std::iter::once(&self.stem)
            .chain(self.blocks.iter().flatten().map(|b| &b.dac))
            .map(DacCache::attention)
            .collect()
    }
}

fn relu_tensor(x: &Tensor5) -> Result<Tensor5> {
    Tensor5::new(x.dims(), relu(x.data()))
}

/// ReLU gradient; `act` is the ReLU output, positive exactly where its input was.
fn relu_backward_tensor(grad: &Tensor5, act: &Tensor5) -> Result<Tensor5> {
    Tensor5::new(grad.dims(), relu_backward(grad.data(), act.data()))
}

fn norm_relu(
    norm: &BatchNorm,
    running: &RunningStats,
    x: &Tensor5,
    train: bool,
    stats: &mut Vec<RunningStats>,
) -> Result<(Tensor5, Option<BatchNormCache>)> {
    if train {
        let (y, cache, updated) = norm.forward_train(x, running)?;
        stats.push(updated);
        Ok((relu_tensor(&y)?, Some(cache)))
    } else {
        Ok((relu_tensor(&norm.forward_eval(x, running)?)?, None))
    }
}

fn transition_forward(
    tr: &Transition,
    x: &Tensor5,
    train: bool,
    stats: &mut Vec<RunningStats>,
) -> Result<(Tensor5, Option<TransitionCache>)> {
    let (act, bn) = norm_relu(&tr.norm, &tr.stats, x, train, stats)?;
    let y = conv3d_forward(&act, &tr.conv, POINTWISE)?;
    let out = avg_pool3d(&y, tr.window, tr.window)?;
    let cache = bn.map(|bn| TransitionCache { bn, conv_dims: y.dims(), act });
    Ok((out, cache))
}

struct TransitionGrads {
    norm: BatchNorm,
    conv: ConvKernel,
}

fn transition_backward(
    tr: &Transition,
    grad: &Tensor5,
    cache: &Option<TransitionCache>,
) -> Result<(Tensor5, TransitionGrads)> {
    let cache = cache.as_ref().expect("training pass keeps transition caches");
    let g_y = avg_pool3d_backward(grad, cache.conv_dims, tr.window, tr.window)?;
    let cg = conv3d_backward(&g_y, &cache.act, &tr.conv, POINTWISE)?;
    let g_pre = relu_backward_tensor(&cg.grad_x, &cache.act)?;
    let (g_x, g_norm) = tr.norm.backward(&g_pre, &cache.bn)?;
    Ok((g_x, TransitionGrads { norm: g_norm, conv: cg.grad_kernel }))
}

fn view<'a>(name: &str, dims: Vec<usize>, values: &'a [f64]) -> ParamView<'a> {
    ParamView { name: name.to_string(), dims, values }
}

fn push_norm<'a>(out: &mut Vec<ParamView<'a>>, prefix: &str, n: &'a BatchNorm) {
    out.push(view(&format!("{prefix}.norm.gamma"), vec![n.channels()], &n.gamma));
    out.push(view(&format!("{prefix}.norm.beta"), vec![n.channels()], &n.beta));
}

fn push_kernel<'a>(out: &mut Vec<ParamView<'a>>, prefix: &str, k: &'a ConvKernel) {
    out.push(view(&format!("{prefix}.weight"), k.dims().to_vec(), k.weights()));
    if k.has_bias() {
        out.push(view(&format!("{prefix}.bias"), vec![k.c_out()], k.bias()));
    }
}

fn push_dac<'a>(out: &mut Vec<ParamView<'a>>, prefix: &str, l: &'a DacLayer) {
    for (k, kernel) in l.kernels().iter().enumerate() {
        push_kernel(out, &format!("{prefix}.kernel{k}"), kernel);
    }
    for (name, fc) in [("fc1", l.fc1()), ("fc2", l.fc2())] {
        out.push(view(&format!("{prefix}.attn.{name}.weight"), vec![fc.out_dim(), fc.in_dim()], &fc.weight));
        out.push(view(&format!("{prefix}.attn.{name}.bias"), vec![fc.out_dim()], &fc.bias));
    }
}

fn visit_dac(g: &mut impl FnMut(&mut [f64]), l: &mut DacLayer) {
    for kernel in l.kernels_mut() {
        g(kernel.weights_mut());
        if kernel.has_bias() {
            g(kernel.bias_mut());
        }
    }
    g(&mut l.fc1_mut().weight);
    g(&mut l.fc1_mut().bias);
    g(&mut l.fc2_mut().weight);
    g(&mut l.fc2_mut().bias);
}
