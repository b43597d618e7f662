//! Forward-only layer engine: float reference mode and int8 quantized mode.

pub mod batchnorm;
pub mod graph;
pub mod ops;
pub mod quant;
pub mod weights;

pub use batchnorm::{batchnorm_forward, fuse_batchnorm, BatchNormParams};
pub use graph::{
    param_count, run_graph, run_graph_observed, ExecMode, LayerKind, LayerShapes, LayerSpec, ModelGraph, GRAPH_INPUT,
};
pub use ops::{
    concat_channels, conv2d, conv2d_accumulate, conv_transpose2d, conv_transpose2d_accumulate, maxpool2x2, requantize,
    Activation, ConvParams, ConvTransposeParams,
};
pub use quant::{dequantize_tensor, dequantize_weights, quantize_tensor, quantize_weights, QuantSpec};
pub use weights::{WeightFile, WeightRecord};
