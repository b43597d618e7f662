//! Q7 weight quantization.
//!
//! Weights map to int8 with scale 2^7. Activations in the quantized
//! pipeline are also Q7, so a raw accumulator carries `2^14` units per 1.0
//! and biases are stored as int32 at that scale. A layer with
//! `output_shift = 7` therefore maps Q7 inputs back to Q7 outputs.

use crate::error::{Error, Result};
use crate::tensor::{Data, Kernel4D, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantSpec {
    pub weight_bits: u32,
    /// Fractional bits of the weight encoding (scale `2^weight_frac_bits`).
    pub weight_frac_bits: u32,
    pub activation_bits: u32,
    pub activation_frac_bits: u32,
    pub accumulator_bits: u32,
}

impl Default for QuantSpec {
    fn default() -> Self {
        QuantSpec {
            weight_bits: 8,
            weight_frac_bits: 7,
            activation_bits: 8,
            activation_frac_bits: 7,
            accumulator_bits: 32,
        }
    }
}

impl QuantSpec {
    pub fn weight_scale(&self) -> f64 {
        (1u64 << self.weight_frac_bits) as f64
    }

    pub fn activation_scale(&self) -> f64 {
        (1u64 << self.activation_frac_bits) as f64
    }

    /// Scale of int32 biases and raw accumulators.
    pub fn bias_scale(&self) -> f64 {
        self.weight_scale() * self.activation_scale()
    }

    /// Shift that brings an accumulator back to the activation scale.
    pub fn requant_shift(&self) -> i32 {
        self.weight_frac_bits as i32
    }
}

/// `round_half_away(v * scale)` clamped to int8. `f64::round` already
/// rounds half away from zero.
pub fn quantize_value(v: f32, scale: f64) -> i8 {
    (v as f64 * scale).round().clamp(i8::MIN as f64, i8::MAX as f64) as i8
}

/// Quantizes a float kernel: `clamp(round_half_away(w * 128), -128, 127)`
/// for weights, `round_half_away(b * 2^14)` saturated to int32 for biases.
/// Already-quantized kernels are returned unchanged.
pub fn quantize_weights(w: &Kernel4D, q: &QuantSpec) -> Kernel4D {
    let (Data::F32(weights), Data::F32(bias)) = (w.weights(), w.bias()) else {
        return w.clone();
    };
    let ws = q.weight_scale();
    let bs = q.bias_scale();
    let wq: Vec<i8> = weights.iter().map(|&v| quantize_value(v, ws)).collect();
    // `as` saturates float-to-int casts.
    let bq: Vec<i32> = bias.iter().map(|&b| (b as f64 * bs).round() as i32).collect();
    Kernel4D::new(w.out_channels, w.in_channels, w.kh, w.kw, wq, bq).expect("shape preserved")
}

/// Inverse scaling of a quantized kernel back to float.
pub fn dequantize_weights(w: &Kernel4D, q: &QuantSpec) -> Kernel4D {
    let (Data::I8(weights), Data::I32(bias)) = (w.weights(), w.bias()) else {
        return w.clone();
    };
    let ws = q.weight_scale();
    let bs = q.bias_scale();
    let wf: Vec<f32> = weights.iter().map(|&v| (v as f64 / ws) as f32).collect();
    let bf: Vec<f32> = bias.iter().map(|&b| (b as f64 / bs) as f32).collect();
    Kernel4D::new(w.out_channels, w.in_channels, w.kh, w.kw, wf, bf).expect("shape preserved")
}

/// Float tensor to Q7 int8 activations.
pub fn quantize_tensor(x: &Tensor, q: &QuantSpec) -> Result<Tensor> {
    match x.data() {
        Data::F32(v) => {
            let s = q.activation_scale();
            Tensor::new(x.shape(), v.iter().map(|&e| quantize_value(e, s)).collect::<Vec<i8>>())
        }
        Data::I8(_) => Ok(x.clone()),
        Data::I32(_) => Err(Error::ModeMismatch("cannot quantize an int32 accumulator tensor".into())),
    }
}

/// Q7 int8 activations (or int32 accumulators) to float.
pub fn dequantize_tensor(x: &Tensor, q: &QuantSpec) -> Tensor {
    let data: Vec<f32> = match x.data() {
        Data::F32(_) => return x.clone(),
        Data::I8(v) => v.iter().map(|&e| (e as f64 / q.activation_scale()) as f32).collect(),
        Data::I32(v) => v.iter().map(|&e| (e as f64 / q.bias_scale()) as f32).collect(),
    };
    Tensor::new(x.shape(), data).expect("shape preserved")
}
