//! The folded tiny U-net topology.
//!
//! ```text
//! fold(alpha)
//!   stem1..3   1x1 convs                       (H/alpha)
//!   enc0       3x3 conv                 ──skip─────────────────┐
//!   pool1 enc1 2x2 max pool, 3x3 conv   ──skip────────────┐    │
//!   pool2 enc2                          ──skip───────┐    │    │
//!   pool3 enc3                                       │    │    │
//!   up1 -> cat1(up1, enc2) ──────────────────────────┘    │    │
//!   up2 -> cat2(up2, enc1) ───────────────────────────────┘    │
//!   up3 -> cat3(up3, enc0) ────────────────────────────────────┘
//!   head1, head2 3x3 convs; head3..5 1x1 convs; logits 1x1 (alpha^2 * classes)
//! unfold(alpha)
//! ```
//!
//! Every conv except `logits` is followed by ReLU. 3x3 convs use padding 1;
//! transposed convs use stride 2, padding 1, output padding 1.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fold::FoldSpec;
use crate::nn::graph::{param_count, LayerSpec, ModelGraph, GRAPH_INPUT};
use crate::nn::ops::{Activation, ConvTransposeParams};
use crate::tensor::{Data, Kernel4D, Shape};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Widths {
    /// Outputs of the three 1x1 stem convs.
    pub stem: [usize; 3],
    /// Outputs of the full-resolution 3x3 conv and the three pooled 3x3 convs.
    pub enc: [usize; 4],
    /// Outputs of the three transposed convs, deepest first.
    pub dec: [usize; 3],
    /// Outputs of the two 3x3 and three hidden 1x1 head convs. The final
    /// logits conv width is `alpha^2 * num_classes`.
    pub head: [usize; 5],
}

impl Default for Widths {
    fn default() -> Self {
        Widths { stem: [64, 64, 32], enc: [24, 48, 64, 96], dec: [64, 48, 24], head: [32, 48, 64, 64, 64] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub alpha: usize,
    pub input_channels: usize,
    pub input_hw: usize,
    pub num_classes: usize,
    pub widths: Widths,
    /// Quantized-mode accumulator shift applied to every conv layer.
    pub output_shift: i32,
    /// Per-layer overrides of `output_shift`, keyed by layer name.
    pub layer_shifts: BTreeMap<String, i32>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            alpha: 4,
            input_channels: 3,
            input_hw: 352,
            num_classes: 4,
            widths: Widths::default(),
            output_shift: 7,
            layer_shifts: BTreeMap::new(),
        }
    }
}

impl ArchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ArchConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        ArchConfig::from_json(&std::fs::read_to_string(path)?)
    }

    /// Channel count entering `unfold`.
    pub fn logits_channels(&self) -> usize {
        self.alpha * self.alpha * self.num_classes
    }

    pub fn folded_hw(&self) -> usize {
        self.input_hw / self.alpha
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.alpha == 0 {
            return bad("alpha must be >= 1".into());
        }
        if self.input_channels == 0 {
            return bad("input_channels must be >= 1".into());
        }
        if !(2..=256).contains(&self.num_classes) {
            return bad(format!("num_classes must be in 2..=256, got {}", self.num_classes));
        }
        if self.input_hw == 0 || !self.input_hw.is_multiple_of(self.alpha) {
            return bad(format!("input_hw {} is not divisible by alpha {}", self.input_hw, self.alpha));
        }
        if !self.folded_hw().is_multiple_of(8) {
            return bad(format!(
                "folded resolution {} must be divisible by 8 for three pooling stages",
                self.folded_hw()
            ));
        }
        let w = &self.widths;
        if w.stem.iter().chain(&w.enc).chain(&w.dec).chain(&w.head).any(|&c| c == 0) {
            return bad("all widths must be >= 1".into());
        }
        Ok(())
    }
}

/// Builds the graph with zero-valued float kernels.
pub fn build_l3unet(cfg: &ArchConfig) -> Result<ModelGraph> {
    cfg.validate()?;
    let spec = FoldSpec::new(cfg.alpha)?;
    let w = &cfg.widths;
    let mut layers = Vec::new();
    let conv = |name: &str, input: &str, cin: usize, cout: usize, k: usize, act: Activation| -> Result<LayerSpec> {
        Ok(LayerSpec::conv2d(name, input, Kernel4D::zeros(cout, cin, k, k)?, 1, k / 2, act))
    };

    layers.push(LayerSpec::fold("fold", GRAPH_INPUT, spec));
    let mut cin = cfg.input_channels * cfg.alpha * cfg.alpha;
    let mut prev = "fold".to_string();
    for (i, &c) in w.stem.iter().enumerate() {
        let name = format!("stem{}", i + 1);
        layers.push(conv(&name, &prev, cin, c, 1, Activation::Relu)?);
        (cin, prev) = (c, name);
    }
    layers.push(conv("enc0", &prev, cin, w.enc[0], 3, Activation::Relu)?);
    (cin, prev) = (w.enc[0], "enc0".to_string());
    for i in 1..4 {
        let pool = format!("pool{i}");
        let enc = format!("enc{i}");
        layers.push(LayerSpec::maxpool2x2(&pool, &prev));
        layers.push(conv(&enc, &pool, cin, w.enc[i], 3, Activation::Relu)?);
        (cin, prev) = (w.enc[i], enc);
    }
    for (i, &c) in w.dec.iter().enumerate() {
        let up = format!("up{}", i + 1);
        let cat = format!("cat{}", i + 1);
        let skip_idx = 2 - i;
        let skip = format!("enc{skip_idx}");
        let params = ConvTransposeParams::doubling().relu();
        layers.push(LayerSpec::conv_transpose2d(&up, &prev, Kernel4D::zeros(c, cin, 3, 3)?, params));
        layers.push(LayerSpec::concat(&cat, &up, &skip));
        (cin, prev) = (c + w.enc[skip_idx], cat);
    }
    for (i, &c) in w.head.iter().enumerate() {
        let name = format!("head{}", i + 1);
        let k = if i < 2 { 3 } else { 1 };
        layers.push(conv(&name, &prev, cin, c, k, Activation::Relu)?);
        (cin, prev) = (c, name);
    }
    layers.push(conv("logits", &prev, cin, cfg.logits_channels(), 1, Activation::None)?);
    layers.push(LayerSpec::unfold("unfold", "logits", spec));

    for layer in &mut layers {
        if layer.kind.is_conv() {
            layer.output_shift = cfg.layer_shifts.get(&layer.name).copied().unwrap_or(cfg.output_shift);
        }
    }
    if let Some(name) = cfg.layer_shifts.keys().find(|n| !layers.iter().any(|l| l.kind.is_conv() && &l.name == *n)) {
        return Err(Error::Config(format!("layer_shifts names unknown conv layer `{name}`")));
    }

    let hw = cfg.input_hw;
    ModelGraph::new(Shape::new(cfg.input_channels, hw, hw), layers, "unfold")
}

/// Fills every kernel with seeded uniform values: weights within
/// `+-min(sqrt(6 / fan_in), 0.99)`, biases within `+-0.05`.
pub fn randomize_weights(g: &mut ModelGraph, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<(String, (usize, usize, usize, usize))> =
        g.kernels().map(|(n, k)| (n.to_string(), (k.out_channels, k.in_channels, k.kh, k.kw))).collect();
    for (name, (o, i, kh, kw)) in names {
        let bound = (6.0 / (i * kh * kw) as f32).sqrt().min(0.99);
        let weights: Vec<f32> = (0..o * i * kh * kw).map(|_| rng.gen_range(-bound..bound)).collect();
        let bias: Vec<f32> = (0..o).map(|_| rng.gen_range(-0.05f32..0.05)).collect();
        g.set_kernel(&name, Kernel4D::new(o, i, kh, kw, Data::F32(weights), Data::F32(bias))?)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchRow {
    pub name: String,
    pub kind: String,
    pub kernel: Option<(usize, usize)>,
    pub stride: usize,
    pub inputs: Vec<Shape>,
    pub output: Shape,
    pub params: usize,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchReport {
    pub rows: Vec<ArchRow>,
    pub total_params: usize,
    pub total_macs: u64,
}

/// Per-layer table of shapes, parameters and dense MAC counts.
pub fn report_architecture(g: &ModelGraph) -> Result<ArchReport> {
    let shapes = g.shapes()?;
    let rows: Vec<ArchRow> = g
        .layers()
        .iter()
        .zip(shapes)
        .map(|(l, s)| ArchRow {
            name: l.name.clone(),
            kind: l.kind.label().to_string(),
            kernel: l.kernel.as_ref().map(|k| (k.kh, k.kw)),
            stride: l.stride,
            macs: l.macs(s.output),
            inputs: s.inputs,
            output: s.output,
            params: l.param_count(),
        })
        .collect();
    let total_macs = rows.iter().map(|r| r.macs).sum();
    Ok(ArchReport { rows, total_params: param_count(g), total_macs })
}

impl fmt::Display for ArchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut table: Vec<[String; 8]> =
            vec![["layer", "kind", "kernel", "stride", "input", "output", "params", "macs"].map(String::from)];
        for r in &self.rows {
            let mut inputs = String::new();
            for (i, s) in r.inputs.iter().enumerate() {
                if i > 0 {
                    inputs.push('+');
                }
                write!(inputs, "{s}")?;
            }
            table.push([
                r.name.clone(),
                r.kind.clone(),
                r.kernel.map_or("-".into(), |(h, w)| format!("{h}x{w}")),
                r.stride.to_string(),
                inputs,
                r.output.to_string(),
                r.params.to_string(),
                r.macs.to_string(),
            ]);
        }
        table.push([
            "total".into(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            self.total_params.to_string(),
            self.total_macs.to_string(),
        ]);
        write_table(f, &table)
    }
}

/// Left-aligned text columns separated by two spaces; numeric columns are
/// right-aligned.
pub(crate) fn write_table<const N: usize>(f: &mut impl fmt::Write, rows: &[[String; N]]) -> fmt::Result {
    let mut widths = [0usize; N];
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    for row in rows {
        let mut line = String::new();
        for (i, (cell, w)) in row.iter().zip(widths).enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            if !cell.is_empty() && cell.chars().all(|c| c.is_ascii_digit() || c == '.') {
                write!(line, "{cell:>w$}")?;
            } else {
                write!(line, "{cell:<w$}")?;
            }
        }
        writeln!(f, "{}", line.trim_end())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_json() {
        let cfg = ArchConfig::default();
        assert_eq!(ArchConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let partial = ArchConfig::from_json(r#"{"num_classes": 2}"#).unwrap();
        assert_eq!(partial.num_classes, 2);
        assert_eq!(partial.alpha, 4);
        assert!(ArchConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = ArchConfig { input_hw: 350, ..ArchConfig::default() };
        assert!(cfg.validate().is_err());
        cfg = ArchConfig { input_hw: 360, ..ArchConfig::default() };
        // 360 / 4 = 90, not divisible by 8.
        assert!(cfg.validate().is_err());
        cfg = ArchConfig { num_classes: 1, ..ArchConfig::default() };
        assert!(cfg.validate().is_err());
        cfg = ArchConfig::default();
        cfg.layer_shifts.insert("pool1".into(), 3);
        assert!(build_l3unet(&cfg).is_err());
    }

    #[test]
    fn layer_shift_override() {
        let mut cfg = ArchConfig::default();
        cfg.layer_shifts.insert("logits".into(), 5);
        let g = build_l3unet(&cfg).unwrap();
        assert_eq!(g.layer("logits").unwrap().output_shift, 5);
        assert_eq!(g.layer("stem1").unwrap().output_shift, 7);
    }

    #[test]
    fn single_layer_report() {
        let k = Kernel4D::zeros(2, 1, 3, 3).unwrap();
        let g = ModelGraph::new(
            Shape::new(1, 4, 4),
            vec![LayerSpec::conv2d("c", GRAPH_INPUT, k, 1, 1, Activation::None)],
            "c",
        )
        .unwrap();
        let r = report_architecture(&g).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.total_params, 20);
        assert_eq!(r.total_macs, 2 * 16 * 9);
        let text = r.to_string();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().last().unwrap().starts_with("total"));
    }

    #[test]
    fn randomize_is_seeded() {
        let cfg = ArchConfig { alpha: 1, input_hw: 16, widths: tiny(), ..ArchConfig::default() };
        let mut a = build_l3unet(&cfg).unwrap();
        let mut b = a.clone();
        randomize_weights(&mut a, 3).unwrap();
        randomize_weights(&mut b, 3).unwrap();
        assert_eq!(a, b);
        randomize_weights(&mut b, 4).unwrap();
        assert_ne!(a, b);
    }

    fn tiny() -> Widths {
        Widths { stem: [4, 4, 4], enc: [4, 4, 4, 4], dec: [4, 4, 4], head: [4, 4, 4, 4, 4] }
    }
}
