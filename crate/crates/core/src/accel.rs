//! Analytic cost model for an accelerator that parallelizes convolutions
//! over input channels: each processor handles one input channel (or a
//! round-robin group of them) for every output pixel and output channel.
//!
//! Layers run sequentially and processors within a layer run in parallel,
//! so the sum over layers of the busiest processor's MAC count serves as a
//! relative latency proxy.

use std::fmt::{self, Write as _};

use crate::arch::write_table;
use crate::error::{Error, Result};
use crate::nn::graph::{LayerKind, LayerSpec, ModelGraph};
use crate::nn::param_count;
use crate::tensor::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcceleratorSpec {
    pub num_processors: usize,
    pub weight_memory_bytes: usize,
    pub bytes_per_weight: usize,
}

impl Default for AcceleratorSpec {
    fn default() -> Self {
        AcceleratorSpec { num_processors: 64, weight_memory_bytes: 442 * 1024, bytes_per_weight: 1 }
    }
}

impl AcceleratorSpec {
    pub fn with_processors(num_processors: usize) -> Result<Self> {
        if num_processors == 0 {
            return Err(Error::Config("num_processors must be >= 1".into()));
        }
        Ok(AcceleratorSpec { num_processors, ..Self::default() })
    }
}

/// Input channels held by each processor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelAssignment {
    pub channels_per_processor: Vec<usize>,
}

impl ChannelAssignment {
    pub fn active_processors(&self) -> usize {
        self.channels_per_processor.iter().filter(|&&c| c > 0).count()
    }

    /// Processor that owns input channel `c`.
    pub fn processor_of(&self, c: usize) -> usize {
        c % self.channels_per_processor.len()
    }
}

/// Channel `c` goes to processor `c mod P`; processor `i` ends up with
/// `ceil((cin - i) / P)` channels.
pub fn assign_channels(cin: usize, spec: &AcceleratorSpec) -> ChannelAssignment {
    let p = spec.num_processors.max(1);
    let channels_per_processor = (0..p).map(|i| if i < cin { (cin - i).div_ceil(p) } else { 0 }).collect();
    ChannelAssignment { channels_per_processor }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub layer_name: String,
    pub kind: String,
    pub active_processors: usize,
    pub macs_per_processor: Vec<u64>,
    pub max_macs: u64,
    pub total_macs: u64,
    /// Comparison count for pooling layers; zero elsewhere.
    pub comparisons: u64,
    /// False when the layer kind carries no MAC accounting.
    pub mac_accounted: bool,
}

/// Per-processor loads of a convolution with `cin` inputs producing a
/// `cout x hout x wout` output with a `kh x kw` kernel.
pub fn conv_workload(
    name: &str,
    kind: &str,
    cin: usize,
    out: Shape,
    kh: usize,
    kw: usize,
    spec: &AcceleratorSpec,
) -> LayerCost {
    let assignment = assign_channels(cin, spec);
    let per_channel = out.len() as u64 * kh as u64 * kw as u64;
    let macs_per_processor: Vec<u64> =
        assignment.channels_per_processor.iter().map(|&c| c as u64 * per_channel).collect();
    LayerCost {
        layer_name: name.to_string(),
        kind: kind.to_string(),
        active_processors: assignment.active_processors(),
        max_macs: macs_per_processor.iter().copied().max().unwrap_or(0),
        total_macs: macs_per_processor.iter().sum(),
        macs_per_processor,
        comparisons: 0,
        mac_accounted: true,
    }
}

/// MAC distribution of one layer. Non-convolution layers report zero MACs
/// with `mac_accounted = false`; pooling layers record their comparisons.
pub fn layer_macs_per_processor(layer: &LayerSpec, in_shapes: &[Shape], spec: &AcceleratorSpec) -> Result<LayerCost> {
    let out = layer.output_shape(in_shapes)?;
    if let (Some(k), true) = (&layer.kernel, layer.kind.is_conv()) {
        return Ok(conv_workload(&layer.name, layer.kind.label(), k.in_channels, out, k.kh, k.kw, spec));
    }
    let comparisons = if layer.kind == LayerKind::MaxPool2d { out.len() as u64 * 3 } else { 0 };
    Ok(LayerCost {
        layer_name: layer.name.clone(),
        kind: layer.kind.label().to_string(),
        active_processors: 0,
        macs_per_processor: vec![0; spec.num_processors],
        max_macs: 0,
        total_macs: 0,
        comparisons,
        mac_accounted: false,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub spec: AcceleratorSpec,
    pub layers: Vec<LayerCost>,
    pub total_macs: u64,
    /// Sum over layers of the busiest processor's MACs.
    pub latency_proxy: u64,
    pub weight_bytes: usize,
    pub fits_weight_memory: bool,
}

pub fn graph_cost_report(g: &ModelGraph, spec: &AcceleratorSpec) -> Result<CostReport> {
    let shapes = g.shapes()?;
    let layers = g
        .layers()
        .iter()
        .zip(&shapes)
        .map(|(l, s)| layer_macs_per_processor(l, &s.inputs, spec))
        .collect::<Result<Vec<_>>>()?;
    let weight_bytes = param_count(g) * spec.bytes_per_weight;
    Ok(CostReport {
        spec: *spec,
        total_macs: layers.iter().map(|c| c.total_macs).sum(),
        latency_proxy: layers.iter().map(|c| c.max_macs).sum(),
        layers,
        weight_bytes,
        fits_weight_memory: weight_bytes <= spec.weight_memory_bytes,
    })
}

impl CostReport {
    /// `name,kind,active_processors,max_macs,total_macs`, one row per layer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,kind,active_processors,max_macs,total_macs\n");
        for c in &self.layers {
            writeln!(out, "{},{},{},{},{}", c.layer_name, c.kind, c.active_processors, c.max_macs, c.total_macs)
                .expect("write to String");
        }
        out
    }

    pub fn budget_line(&self) -> String {
        format!(
            "weight memory: {} / {} bytes ({})",
            self.weight_bytes,
            self.spec.weight_memory_bytes,
            if self.fits_weight_memory { "PASS" } else { "FAIL" }
        )
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut rows: Vec<[String; 5]> = vec![["layer", "kind", "active", "max_macs", "total_macs"].map(String::from)];
        for c in &self.layers {
            rows.push([
                c.layer_name.clone(),
                c.kind.clone(),
                c.active_processors.to_string(),
                c.max_macs.to_string(),
                c.total_macs.to_string(),
            ]);
        }
        rows.push([
            "total".into(),
            String::new(),
            String::new(),
            self.latency_proxy.to_string(),
            self.total_macs.to_string(),
        ]);
        write_table(f, &rows)?;
        writeln!(f, "processors: {}", self.spec.num_processors)?;
        writeln!(f, "latency proxy (sum of per-layer max MACs): {}", self.latency_proxy)?;
        writeln!(f, "{}", self.budget_line())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldComparisonRow {
    pub alpha: usize,
    pub in_channels: usize,
    pub input_hw: (usize, usize),
    pub active_processors: usize,
    pub max_macs: u64,
    /// `max_macs` relative to the first row.
    pub ratio: f64,
}

/// Applies one conv layer's kernel, stride and padding to `base` folded by
/// each `alpha`, showing how the per-processor load shrinks.
pub fn folding_comparison(
    layer: &LayerSpec,
    base: Shape,
    alphas: &[usize],
    spec: &AcceleratorSpec,
) -> Result<Vec<FoldComparisonRow>> {
    let k = layer
        .kernel
        .as_ref()
        .filter(|_| layer.kind == LayerKind::Conv2d)
        .ok_or_else(|| Error::layer(&layer.name, "folding comparison needs a Conv2d layer"))?;
    let mut rows: Vec<FoldComparisonRow> = Vec::new();
    for &alpha in alphas {
        let folded = crate::fold::FoldSpec::new(alpha)?.folded_shape(base)?;
        let dim = |size: usize, kk: usize| -> Result<usize> {
            let span = (size + 2 * layer.padding)
                .checked_sub(kk)
                .ok_or_else(|| Error::layer(&layer.name, "kernel larger than folded input"))?;
            Ok(span / layer.stride + 1)
        };
        let out = Shape::new(k.out_channels, dim(folded.height, k.kh)?, dim(folded.width, k.kw)?);
        let cost = conv_workload(&layer.name, "Conv2d", folded.channels, out, k.kh, k.kw, spec);
        let ratio = rows.first().map_or(1.0, |r| cost.max_macs as f64 / r.max_macs as f64);
        rows.push(FoldComparisonRow {
            alpha,
            in_channels: folded.channels,
            input_hw: (folded.height, folded.width),
            active_processors: cost.active_processors,
            max_macs: cost.max_macs,
            ratio,
        });
    }
    Ok(rows)
}

pub fn folding_comparison_text(rows: &[FoldComparisonRow]) -> String {
    let mut table: Vec<[String; 6]> =
        vec![["alpha", "in_channels", "input", "active", "max_macs", "ratio"].map(String::from)];
    for r in rows {
        table.push([
            r.alpha.to_string(),
            r.in_channels.to_string(),
            format!("{}x{}", r.input_hw.0, r.input_hw.1),
            r.active_processors.to_string(),
            r.max_macs.to_string(),
            format!("{}", r.ratio),
        ]);
    }
    let mut out = String::new();
    write_table(&mut out, &table).expect("write to String");
    out
}
