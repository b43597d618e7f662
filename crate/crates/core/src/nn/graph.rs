//! Declarative layer graphs with skip connections.

use std::collections::{HashMap, HashSet};
use std::fmt;

use crate::error::{Error, Result};
use crate::fold::{fold, unfold, FoldSpec};
use crate::nn::ops::{
    concat_channels, concat_output_shape, conv2d, conv2d_output_shape, conv_transpose2d, conv_transpose2d_output_shape,
    maxpool2x2, maxpool2x2_output_shape, Activation, ConvParams, ConvTransposeParams,
};
use crate::nn::quant::{dequantize_weights, quantize_weights, QuantSpec};
use crate::tensor::{Dtype, Kernel4D, Shape, Tensor};

/// Name by which layers refer to the graph input.
pub const GRAPH_INPUT: &str = "input";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    ConvTranspose2d {
        output_padding: usize,
    },
    /// Always 2x2 with stride 2.
    MaxPool2d,
    Concat,
    Fold(FoldSpec),
    Unfold(FoldSpec),
}

impl LayerKind {
    pub fn is_conv(&self) -> bool {
        matches!(self, LayerKind::Conv2d | LayerKind::ConvTranspose2d { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Conv2d => "Conv2d",
            LayerKind::ConvTranspose2d { .. } => "ConvTranspose2d",
            LayerKind::MaxPool2d => "MaxPool2d",
            LayerKind::Concat => "Concat",
            LayerKind::Fold(_) => "Fold",
            LayerKind::Unfold(_) => "Unfold",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub kernel: Option<Kernel4D>,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
    pub output_shift: i32,
    pub inputs: Vec<String>,
}

impl LayerSpec {
    fn base(name: &str, kind: LayerKind, inputs: &[&str]) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind,
            kernel: None,
            stride: 1,
            padding: 0,
            activation: Activation::None,
            output_shift: 0,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn conv2d(
        name: &str,
        input: &str,
        kernel: Kernel4D,
        stride: usize,
        padding: usize,
        activation: Activation,
    ) -> Self {
        LayerSpec { kernel: Some(kernel), stride, padding, activation, ..Self::base(name, LayerKind::Conv2d, &[input]) }
    }

    pub fn conv_transpose2d(name: &str, input: &str, kernel: Kernel4D, p: ConvTransposeParams) -> Self {
        LayerSpec {
            kernel: Some(kernel),
            stride: p.stride,
            padding: p.padding,
            activation: p.activation,
            output_shift: p.output_shift,
            ..Self::base(name, LayerKind::ConvTranspose2d { output_padding: p.output_padding }, &[input])
        }
    }

    pub fn maxpool2x2(name: &str, input: &str) -> Self {
        LayerSpec { stride: 2, ..Self::base(name, LayerKind::MaxPool2d, &[input]) }
    }

    pub fn concat(name: &str, first: &str, second: &str) -> Self {
        Self::base(name, LayerKind::Concat, &[first, second])
    }

    pub fn fold(name: &str, input: &str, spec: FoldSpec) -> Self {
        Self::base(name, LayerKind::Fold(spec), &[input])
    }

    pub fn unfold(name: &str, input: &str, spec: FoldSpec) -> Self {
        Self::base(name, LayerKind::Unfold(spec), &[input])
    }

    pub fn with_shift(mut self, output_shift: i32) -> Self {
        self.output_shift = output_shift;
        self
    }

    fn conv_params(&self) -> ConvParams {
        ConvParams {
            stride: self.stride,
            padding: self.padding,
            activation: self.activation,
            output_shift: self.output_shift,
        }
    }

    fn transpose_params(&self, output_padding: usize) -> ConvTransposeParams {
        ConvTransposeParams {
            stride: self.stride,
            padding: self.padding,
            output_padding,
            activation: self.activation,
            output_shift: self.output_shift,
        }
    }

    fn expected_inputs(&self) -> usize {
        if self.kind == LayerKind::Concat {
            2
        } else {
            1
        }
    }

    fn kernel_ref(&self) -> Result<&Kernel4D> {
        self.kernel.as_ref().ok_or_else(|| Error::layer(&self.name, "convolution layer has no kernel"))
    }

    /// Static shape inference.
    pub fn output_shape(&self, inputs: &[Shape]) -> Result<Shape> {
        if inputs.len() != self.expected_inputs() {
            return Err(Error::layer(
                &self.name,
                format!("expects {} inputs, got {}", self.expected_inputs(), inputs.len()),
            ));
        }
        let wrap = |e: Error| Error::layer(&self.name, e);
        match self.kind {
            LayerKind::Conv2d => {
                conv2d_output_shape(inputs[0], self.kernel_ref()?, self.stride, self.padding).map_err(wrap)
            }
            LayerKind::ConvTranspose2d { output_padding } => {
                conv_transpose2d_output_shape(inputs[0], self.kernel_ref()?, &self.transpose_params(output_padding))
                    .map_err(wrap)
            }
            LayerKind::MaxPool2d => maxpool2x2_output_shape(inputs[0]).map_err(wrap),
            LayerKind::Concat => concat_output_shape(inputs[0], inputs[1]).map_err(wrap),
            LayerKind::Fold(spec) => spec.folded_shape(inputs[0]).map_err(wrap),
            LayerKind::Unfold(spec) => spec.unfolded_shape(inputs[0]).map_err(wrap),
        }
    }

    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        if inputs.len() != self.expected_inputs() {
            return Err(Error::layer(&self.name, "wrong number of inputs"));
        }
        let wrap = |e: Error| Error::layer(&self.name, e);
        match self.kind {
            LayerKind::Conv2d => conv2d(inputs[0], self.kernel_ref()?, &self.conv_params()).map_err(wrap),
            LayerKind::ConvTranspose2d { output_padding } => {
                conv_transpose2d(inputs[0], self.kernel_ref()?, &self.transpose_params(output_padding)).map_err(wrap)
            }
            LayerKind::MaxPool2d => maxpool2x2(inputs[0]).map_err(wrap),
            LayerKind::Concat => concat_channels(inputs[0], inputs[1]).map_err(wrap),
            LayerKind::Fold(spec) => fold(inputs[0], spec).map_err(wrap),
            LayerKind::Unfold(spec) => unfold(inputs[0], spec).map_err(wrap),
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernel.as_ref().map_or(0, Kernel4D::param_count)
    }

    /// Dense multiply count `Cout * Hout * Wout * Cin * kh * kw`; zero for
    /// non-convolution layers. Transposed layers are counted at output
    /// resolution, as the equivalent zero-inserted convolution.
    pub fn macs(&self, output: Shape) -> u64 {
        match &self.kernel {
            Some(k) if self.kind.is_conv() => output.len() as u64 * k.in_channels as u64 * k.kh as u64 * k.kw as u64,
            _ => 0,
        }
    }
}

/// Input and output shapes of one layer after propagation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShapes {
    pub inputs: Vec<Shape>,
    pub output: Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Float,
    Quantized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    output_layer: String,
}

impl ModelGraph {
    /// Validates naming, topological order and end-to-end shape propagation.
    pub fn new(input_shape: Shape, layers: Vec<LayerSpec>, output_layer: &str) -> Result<Self> {
        let mut seen: HashSet<&str> = HashSet::from([GRAPH_INPUT]);
        for layer in &layers {
            if layer.name.is_empty() || seen.contains(layer.name.as_str()) {
                return Err(Error::Graph(format!("duplicate or reserved layer name `{}`", layer.name)));
            }
            for input in &layer.inputs {
                if !seen.contains(input.as_str()) {
                    return Err(Error::layer(&layer.name, format!("input `{input}` is not defined before this layer")));
                }
            }
            if layer.kind.is_conv() != layer.kernel.is_some() {
                return Err(Error::layer(&layer.name, "kernels belong to convolution layers only"));
            }
            if layer.kind == LayerKind::MaxPool2d && layer.stride != 2 {
                return Err(Error::layer(&layer.name, "max pool is fixed at 2x2 stride 2"));
            }
            seen.insert(&layer.name);
        }
        if !seen.contains(output_layer) {
            return Err(Error::Graph(format!("output layer `{output_layer}` does not exist")));
        }
        let g = ModelGraph { input_shape, layers, output_layer: output_layer.to_string() };
        g.shapes()?;
        Ok(g)
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn output_layer(&self) -> &str {
        &self.output_layer
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Per-layer shapes, in layer order. Fails on the first layer whose
    /// shape cannot be inferred.
    pub fn shapes(&self) -> Result<Vec<LayerShapes>> {
        let mut known: HashMap<&str, Shape> = HashMap::from([(GRAPH_INPUT, self.input_shape)]);
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let inputs: Vec<Shape> = layer.inputs.iter().map(|n| known[n.as_str()]).collect();
            let output = layer.output_shape(&inputs)?;
            known.insert(&layer.name, output);
            out.push(LayerShapes { inputs, output });
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<Shape> {
        if self.output_layer == GRAPH_INPUT {
            return Ok(self.input_shape);
        }
        let idx = self.layers.iter().position(|l| l.name == self.output_layer).expect("validated");
        Ok(self.shapes()?[idx].output)
    }

    /// Replaces a layer's kernel; dimensions and mode class must stay valid.
    pub fn set_kernel(&mut self, name: &str, kernel: Kernel4D) -> Result<()> {
        let layer = self
            .layers
            .iter_mut()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::WeightBinding(format!("no layer named `{name}`")))?;
        let old = layer.kernel.as_ref().ok_or_else(|| Error::WeightBinding(format!("layer `{name}` has no kernel")))?;
        let dims = |k: &Kernel4D| (k.out_channels, k.in_channels, k.kh, k.kw);
        if dims(old) != dims(&kernel) {
            return Err(Error::WeightBinding(format!(
                "layer `{name}` expects kernel {:?}, got {:?}",
                dims(old),
                dims(&kernel)
            )));
        }
        layer.kernel = Some(kernel);
        Ok(())
    }

    pub fn kernels(&self) -> impl Iterator<Item = (&str, &Kernel4D)> {
        self.layers.iter().filter_map(|l| l.kernel.as_ref().map(|k| (l.name.as_str(), k)))
    }

    fn map_kernels(&self, f: impl Fn(&Kernel4D) -> Kernel4D) -> ModelGraph {
        let mut g = self.clone();
        for layer in &mut g.layers {
            if let Some(k) = &layer.kernel {
                layer.kernel = Some(f(k));
            }
        }
        g
    }

    /// Copy with every float kernel quantized to int8.
    pub fn quantized(&self, q: &QuantSpec) -> ModelGraph {
        self.map_kernels(|k| quantize_weights(k, q))
    }

    /// Copy with every int8 kernel scaled back to float.
    pub fn dequantized(&self, q: &QuantSpec) -> ModelGraph {
        self.map_kernels(|k| dequantize_weights(k, q))
    }

    fn check_mode(&self, x: &Tensor, mode: ExecMode) -> Result<()> {
        let (tensor_dtype, quantized_kernels) = match mode {
            ExecMode::Float => (Dtype::F32, false),
            ExecMode::Quantized => (Dtype::I8, true),
        };
        if x.dtype() != tensor_dtype {
            return Err(Error::ModeMismatch(format!("{mode:?} mode needs {tensor_dtype} input, got {}", x.dtype())));
        }
        if let Some((name, _)) = self.kernels().find(|(_, k)| k.is_quantized() != quantized_kernels) {
            return Err(Error::ModeMismatch(format!("layer `{name}` kernel does not match {mode:?} mode")));
        }
        Ok(())
    }
}

/// Runs the graph on `x` and returns the output layer's tensor.
pub fn run_graph(g: &ModelGraph, x: &Tensor, mode: ExecMode) -> Result<Tensor> {
    run_graph_observed(g, x, mode, |_, _| {})
}

/// [`run_graph`] with a callback invoked on every layer output, in order.
pub fn run_graph_observed(
    g: &ModelGraph,
    x: &Tensor,
    mode: ExecMode,
    mut observe: impl FnMut(&LayerSpec, &Tensor),
) -> Result<Tensor> {
    if x.shape() != g.input_shape {
        return Err(Error::layer(GRAPH_INPUT, format!("expected shape {}, got {}", g.input_shape, x.shape())));
    }
    g.check_mode(x, mode)?;

    // Remaining consumers per tensor; a tensor is dropped once it hits zero.
    let mut uses: HashMap<&str, usize> = HashMap::new();
    for layer in &g.layers {
        for input in &layer.inputs {
            *uses.entry(input.as_str()).or_default() += 1;
        }
    }
    *uses.entry(g.output_layer.as_str()).or_default() += 1;

    let mut live: HashMap<&str, Tensor> = HashMap::from([(GRAPH_INPUT, x.clone())]);
    for layer in &g.layers {
        let y = {
            let inputs: Vec<&Tensor> = layer.inputs.iter().map(|n| &live[n.as_str()]).collect();
            layer.forward(&inputs)?
        };
        for input in &layer.inputs {
            let n = uses.get_mut(input.as_str()).expect("counted");
            *n -= 1;
            if *n == 0 {
                live.remove(input.as_str());
            }
        }
        observe(layer, &y);
        if uses.get(layer.name.as_str()).copied().unwrap_or(0) > 0 {
            live.insert(&layer.name, y);
        }
    }
    Ok(live.remove(g.output_layer.as_str()).expect("output retained"))
}

/// Stored weight and bias elements over all convolution layers.
pub fn param_count(g: &ModelGraph) -> usize {
    g.layers.iter().map(LayerSpec::param_count).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones_kernel(o: usize, i: usize, k: usize) -> Kernel4D {
        Kernel4D::new(o, i, k, k, vec![1f32; o * i * k * k], vec![0f32; o]).unwrap()
    }

    #[test]
    fn empty_graph() {
        let g = ModelGraph::new(Shape::new(1, 2, 2), vec![], GRAPH_INPUT).unwrap();
        assert_eq!(param_count(&g), 0);
        let x = Tensor::new(Shape::new(1, 2, 2), vec![1f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(run_graph(&g, &x, ExecMode::Float).unwrap(), x);
    }

    #[test]
    fn one_by_one_param_count() {
        let layers =
            vec![LayerSpec::conv2d("c", GRAPH_INPUT, Kernel4D::zeros(64, 48, 1, 1).unwrap(), 1, 0, Activation::None)];
        let g = ModelGraph::new(Shape::new(48, 4, 4), layers, "c").unwrap();
        assert_eq!(param_count(&g), 3136);
    }

    #[test]
    fn rejects_forward_reference_and_bad_shapes() {
        let layers = vec![
            LayerSpec::maxpool2x2("p", "c"),
            LayerSpec::conv2d("c", GRAPH_INPUT, ones_kernel(1, 1, 1), 1, 0, Activation::None),
        ];
        assert!(ModelGraph::new(Shape::new(1, 4, 4), layers, "c").is_err());

        let layers = vec![
            LayerSpec::conv2d("ok", GRAPH_INPUT, ones_kernel(2, 1, 1), 1, 0, Activation::None),
            LayerSpec::conv2d("bad", "ok", ones_kernel(1, 3, 1), 1, 0, Activation::None),
        ];
        match ModelGraph::new(Shape::new(1, 4, 4), layers, "bad") {
            Err(Error::Layer { layer, .. }) => assert_eq!(layer, "bad"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mode_checks() {
        let layers = vec![LayerSpec::conv2d("c", GRAPH_INPUT, ones_kernel(1, 1, 1), 1, 0, Activation::None)];
        let g = ModelGraph::new(Shape::new(1, 2, 2), layers, "c").unwrap();
        let xq = Tensor::zeros(Shape::new(1, 2, 2), Dtype::I8).unwrap();
        assert!(matches!(run_graph(&g, &xq, ExecMode::Quantized), Err(Error::ModeMismatch(_))));
        let gq = g.quantized(&QuantSpec::default());
        assert!(run_graph(&gq, &xq, ExecMode::Quantized).is_ok());
        let wrong = Tensor::zeros(Shape::new(1, 4, 4), Dtype::I8).unwrap();
        assert!(matches!(run_graph(&gq, &wrong, ExecMode::Quantized), Err(Error::Layer { .. })));
    }
}
