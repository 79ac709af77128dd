use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dac::{aggregation_cost, attention_cost, conv_cost, dac_param_count, satisfies_cost_constraint};
use crate::densenet::{DenseNetConfig, Extent, NetworkLayout};
use crate::error::Result;

/// Plausible total parameter range for the base configuration.
pub const PLAUSIBLE_PARAMS: (u64, u64) = (100_000, 2_000_000);
/// Reference parameter budget quoted for the base configuration.
pub const REFERENCE_PARAMS: u64 = 440_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dac,
    Conv,
    Classifier,
}

/// Parameters and multiply-adds of one layer for a single input sample.
/// Batch-norm parameters are attributed to the layer they precede.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub in_extent: Extent,
    pub out_extent: Extent,
    pub params: u64,
    pub conv_madds: u64,
    pub attention_madds: u64,
    pub aggregation_madds: u64,
    /// Whether the convolution strictly outweighs attention plus
    /// aggregation; DAC layers only.
    pub conv_dominates: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub config: DenseNetConfig,
    pub layers: Vec<LayerCost>,
    pub total_params: u64,
    pub total_madds: u64,
    pub all_dac_layers_dominated_by_conv: bool,
    pub notes: Vec<String>,
}

fn volume(e: Extent) -> u64 {
    e.iter().map(|&d| d as u64).product()
}

fn dac_layer(name: String, c_in: usize, c_out: usize, extent: Extent, cfg: &DenseNetConfig) -> LayerCost {
    let (ci, co, k, vol) = (c_in as u64, c_out as u64, cfg.kernels as u64, 27);
    let conv = conv_cost(volume(extent), ci, co, vol);
    let attention = attention_cost(volume(extent), ci, k);
    let aggregation = aggregation_cost(ci, co, vol, k);
    LayerCost {
        name,
        kind: LayerKind::Dac,
        c_in,
        c_out,
        in_extent: extent,
        out_extent: extent,
        params: dac_param_count(ci, co, vol, k, cfg.bias),
        conv_madds: conv,
        attention_madds: attention,
        aggregation_madds: aggregation,
        conv_dominates: Some(satisfies_cost_constraint(conv, attention, aggregation)),
    }
}

/// Per-layer parameter and multiply-add counts derived from the config
/// alone. Normalisation, activations and pooling are not counted as
/// multiply-adds.
pub fn audit(cfg: &DenseNetConfig) -> Result<CostReport> {
    let layout = NetworkLayout::from_config(cfg)?;
    let mut layers = vec![dac_layer("stem".into(), 1, cfg.stem_channels, layout.input, cfg)];
    for (m, stage) in layout.stages.iter().enumerate() {
        if m > 0 {
            let t = &layout.transitions[m - 1];
            let c = t.channels as u64;
            layers.push(LayerCost {
                name: format!("transition{m}"),
                kind: LayerKind::Conv,
                c_in: t.channels,
                c_out: t.channels,
                in_extent: t.in_extent,
                out_extent: t.out_extent,
                params: 2 * c + c * c + c,
                conv_madds: conv_cost(volume(t.in_extent), c, c, 1),
                attention_madds: 0,
                aggregation_madds: 0,
                conv_dominates: None,
            });
        }
        for (j, &c_in) in stage.block_inputs.iter().enumerate() {
            let mut layer = dac_layer(format!("stage{}.block{}", m + 1, j + 1), c_in, stage.growth, stage.extent, cfg);
            layer.params += 2 * c_in as u64;
            layers.push(layer);
        }
    }
    let (c, k) = (layout.classifier_inputs as u64, cfg.num_classes as u64);
    let last = layout.stages.last().expect("validated config has a stage").extent;
    layers.push(LayerCost {
        name: "classifier".into(),
        kind: LayerKind::Classifier,
        c_in: layout.classifier_inputs,
        c_out: cfg.num_classes,
        in_extent: last,
        out_extent: [1, 1, 1],
        params: 2 * c + c * k + k,
        conv_madds: c * k,
        attention_madds: 0,
        aggregation_madds: 0,
        conv_dominates: None,
    });

    let total_params = layers.iter().map(|l| l.params).sum();
    let total_madds = layers.iter().map(|l| l.conv_madds + l.attention_madds + l.aggregation_madds).sum();
    let all = layers.iter().all(|l| l.conv_dominates != Some(false));
    let mut notes = vec![
        "multiply-adds cover convolutions, attention branches, kernel aggregation and the classifier; \
         batch norm, activations and pooling are not counted"
            .to_string(),
        "batch-norm scale and shift are included in the parameter count of the layer that follows them".to_string(),
    ];
    let (lo, hi) = PLAUSIBLE_PARAMS;
    if !(lo..=hi).contains(&total_params) {
        notes.push(format!(
            "total of {total_params} parameters is outside the plausible range {lo}-{hi} \
             (reference budget {REFERENCE_PARAMS}); every dense block here holds {} full 3x3x3 kernels, \
             transitions keep all channels and earlier feature maps are re-fed to later stages, \
             and no grouping, head or gating reductions are applied",
            cfg.kernels
        ));
    }
    Ok(CostReport {
        config: cfg.clone(),
        layers,
        total_params,
        total_madds,
        all_dac_layers_dominated_by_conv: all,
        notes,
    })
}

impl CostReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<18} {:<10} {:>6} {:>6} {:>14} {:>12} {:>16} {:>12} {:>12} {:>5}",
            "layer", "kind", "c_in", "c_out", "extent", "params", "conv", "attention", "aggregation", "dom"
        );
        for l in &self.layers {
            let kind = match l.kind {
                LayerKind::Dac => "dac",
                LayerKind::Conv => "conv",
                LayerKind::Classifier => "classifier",
            };
            let dom = match l.conv_dominates {
                Some(true) => "yes",
                Some(false) => "NO",
                None => "-",
            };
            let ext = format!("{}x{}x{}", l.in_extent[0], l.in_extent[1], l.in_extent[2]);
            let _ = writeln!(
                s,
                "{:<18} {:<10} {:>6} {:>6} {:>14} {:>12} {:>16} {:>12} {:>12} {:>5}",
                l.name, kind, l.c_in, l.c_out, ext, l.params, l.conv_madds, l.attention_madds, l.aggregation_madds, dom
            );
        }
        let _ = writeln!(s, "total params {}  total madds {}", self.total_params, self.total_madds);
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}
