//! Forward layer kernels.
//!
//! Float tensors with float kernels accumulate in `f32`. Int8 tensors with
//! int8 kernels accumulate in wrapping `i32`, then go through
//! [`requantize`]: an arithmetic shift with round-half-away-from-zero
//! followed by saturation to the int8 range.

use serde::{Deserialize, Serialize};

use crate::error::{Axis, Error, Result};
use crate::tensor::{map_data, Data, Kernel4D, Shape, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
    /// Right shift applied to quantized accumulators; negative shifts left.
    /// Ignored in float mode.
    pub output_shift: i32,
}

impl ConvParams {
    pub fn new(stride: usize, padding: usize) -> Self {
        ConvParams { stride, padding, activation: Activation::None, output_shift: 0 }
    }

    pub fn relu(mut self) -> Self {
        self.activation = Activation::Relu;
        self
    }

    pub fn shift(mut self, output_shift: i32) -> Self {
        self.output_shift = output_shift;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvTransposeParams {
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
    pub activation: Activation,
    pub output_shift: i32,
}

impl ConvTransposeParams {
    pub fn new(stride: usize, padding: usize, output_padding: usize) -> Self {
        ConvTransposeParams { stride, padding, output_padding, activation: Activation::None, output_shift: 0 }
    }

    /// Stride 2, padding 1, output padding 1: exact 2x upsampling with a 3x3 kernel.
    pub fn doubling() -> Self {
        ConvTransposeParams::new(2, 1, 1)
    }

    pub fn relu(mut self) -> Self {
        self.activation = Activation::Relu;
        self
    }

    pub fn shift(mut self, output_shift: i32) -> Self {
        self.output_shift = output_shift;
        self
    }
}

fn conv_out_dim(axis: Axis, size: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidShape("stride must be >= 1".into()));
    }
    let span = (size + 2 * padding) as i64 - kernel as i64;
    if span < 0 {
        return Err(Error::NonPositiveOutput { axis, size: span.div_euclid(stride as i64) + 1 });
    }
    if !(span as usize).is_multiple_of(stride) {
        return Err(Error::NonIntegralOutput { axis, size, padding, kernel, stride });
    }
    Ok(span as usize / stride + 1)
}

/// Output shape of a convolution, validating channels and integrality.
pub fn conv2d_output_shape(input: Shape, w: &Kernel4D, stride: usize, padding: usize) -> Result<Shape> {
    if input.channels != w.in_channels {
        return Err(Error::ChannelMismatch { expected: w.in_channels, actual: input.channels });
    }
    let h = conv_out_dim(Axis::Height, input.height, w.kh, stride, padding)?;
    let ww = conv_out_dim(Axis::Width, input.width, w.kw, stride, padding)?;
    Ok(Shape::new(w.out_channels, h, ww))
}

/// `H' = (H - 1) * stride - 2 * padding + k + output_padding`.
pub fn conv_transpose2d_output_shape(input: Shape, w: &Kernel4D, p: &ConvTransposeParams) -> Result<Shape> {
    if input.channels != w.in_channels {
        return Err(Error::ChannelMismatch { expected: w.in_channels, actual: input.channels });
    }
    if p.stride == 0 {
        return Err(Error::InvalidShape("stride must be >= 1".into()));
    }
    let dim = |axis, size: usize, k: usize| -> Result<usize> {
        let out = (size as i64 - 1) * p.stride as i64 - 2 * p.padding as i64 + k as i64 + p.output_padding as i64;
        if out <= 0 {
            Err(Error::NonPositiveOutput { axis, size: out })
        } else {
            Ok(out as usize)
        }
    };
    Ok(Shape::new(w.out_channels, dim(Axis::Height, input.height, w.kh)?, dim(Axis::Width, input.width, w.kw)?))
}

trait Accum: Copy + Default {
    fn mac(self, w: Self, x: Self) -> Self;
}

impl Accum for f32 {
    #[inline(always)]
    fn mac(self, w: f32, x: f32) -> f32 {
        self + w * x
    }
}

impl Accum for i32 {
    #[inline(always)]
    fn mac(self, w: i32, x: i32) -> i32 {
        self.wrapping_add(w.wrapping_mul(x))
    }
}

/// Range of output positions `o` with `o * stride + tap - padding` in `[0, size)`.
fn valid_range(out: usize, size: usize, tap: usize, stride: usize, padding: usize) -> (usize, usize) {
    let (tap, padding, size, stride) = (tap as i64, padding as i64, size as i64, stride as i64);
    let lo = (padding - tap).max(0);
    let lo = (lo + stride - 1) / stride;
    let hi = size - 1 + padding - tap;
    if hi < 0 {
        return (0, 0);
    }
    let hi = (hi / stride + 1).min(out as i64);
    if lo >= hi {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

/// Cross-correlation with bias; output planes accumulate one tap at a time.
#[allow(clippy::too_many_arguments)]
fn correlate<A: Accum>(
    x: &[A],
    input: Shape,
    w: &[A],
    bias: &[A],
    k: &Kernel4D,
    stride: usize,
    padding: usize,
    out: Shape,
) -> Vec<A> {
    let (ih, iw) = (input.height, input.width);
    let (oh, ow) = (out.height, out.width);
    let mut y = vec![A::default(); out.len()];
    for (o, plane) in y.chunks_exact_mut(oh * ow).enumerate() {
        plane.fill(bias[o]);
        for i in 0..k.in_channels {
            let src = &x[i * ih * iw..(i + 1) * ih * iw];
            for r in 0..k.kh {
                let (y0, y1) = valid_range(oh, ih, r, stride, padding);
                for c in 0..k.kw {
                    let wv = w[k.weight_index(o, i, r, c)];
                    let (x0, x1) = valid_range(ow, iw, c, stride, padding);
                    for oy in y0..y1 {
                        let row = &src[(oy * stride + r - padding) * iw..];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        for ox in x0..x1 {
                            dst[ox] = dst[ox].mac(wv, row[ox * stride + c - padding]);
                        }
                    }
                }
            }
        }
    }
    y
}

/// Scatter form of the transposed convolution.
fn scatter<A: Accum>(
    x: &[A],
    input: Shape,
    w: &[A],
    bias: &[A],
    k: &Kernel4D,
    p: &ConvTransposeParams,
    out: Shape,
) -> Vec<A> {
    let (ih, iw) = (input.height, input.width);
    let (oh, ow) = (out.height as i64, out.width as i64);
    let (s, pad) = (p.stride as i64, p.padding as i64);
    let mut y = vec![A::default(); out.len()];
    for (o, plane) in y.chunks_exact_mut(out.plane()).enumerate() {
        plane.fill(bias[o]);
        for i in 0..k.in_channels {
            let src = &x[i * ih * iw..(i + 1) * ih * iw];
            for r in 0..k.kh {
                for c in 0..k.kw {
                    let wv = w[k.weight_index(o, i, r, c)];
                    for iy in 0..ih {
                        let oy = iy as i64 * s + r as i64 - pad;
                        if oy < 0 || oy >= oh {
                            continue;
                        }
                        let dst = &mut plane[oy as usize * ow as usize..];
                        for ix in 0..iw {
                            let ox = ix as i64 * s + c as i64 - pad;
                            if ox >= 0 && ox < ow {
                                dst[ox as usize] = dst[ox as usize].mac(wv, src[iy * iw + ix]);
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Round-half-away-from-zero arithmetic shift of an accumulator, saturated
/// to int8. Negative `shift` multiplies by `2^-shift`.
pub fn requantize(acc: i32, shift: i32) -> i8 {
    let acc = acc as i64;
    let v = if shift > 0 {
        let s = shift.min(62) as u32;
        let half = 1i64 << (s - 1);
        if acc >= 0 {
            (acc + half) >> s
        } else {
            -((-acc + half) >> s)
        }
    } else {
        acc.saturating_mul(1i64 << (-shift).min(62))
    };
    v.clamp(i8::MIN as i64, i8::MAX as i64) as i8
}

enum Operands<'a> {
    Float { x: &'a [f32], w: &'a [f32], b: &'a [f32] },
    Quant { x: Vec<i32>, w: Vec<i32>, b: &'a [i32] },
}

fn operands<'a>(x: &'a Tensor, k: &'a Kernel4D) -> Result<Operands<'a>> {
    match (x.data(), k.weights(), k.bias()) {
        (Data::F32(x), Data::F32(w), Data::F32(b)) => Ok(Operands::Float { x, w, b }),
        (Data::I8(x), Data::I8(w), Data::I32(b)) => Ok(Operands::Quant {
            x: x.iter().map(|&v| v as i32).collect(),
            w: w.iter().map(|&v| v as i32).collect(),
            b,
        }),
        _ => Err(Error::ModeMismatch(format!(
            "{} input with {} kernel; expected float32/float32 or int8/int8",
            x.dtype(),
            k.weights().dtype()
        ))),
    }
}

fn finish_float(mut y: Vec<f32>, act: Activation) -> Data {
    if act == Activation::Relu {
        y.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    Data::F32(y)
}

fn finish_quant(acc: Vec<i32>, act: Activation, shift: i32) -> Data {
    let floor = if act == Activation::Relu { 0 } else { i8::MIN };
    Data::I8(acc.into_iter().map(|a| requantize(a, shift).max(floor)).collect())
}

/// Standard 2-D cross-correlation plus bias, then optional ReLU.
pub fn conv2d(x: &Tensor, w: &Kernel4D, p: &ConvParams) -> Result<Tensor> {
    let out = conv2d_output_shape(x.shape(), w, p.stride, p.padding)?;
    let data = match operands(x, w)? {
        Operands::Float { x: xs, w: ws, b } => {
            finish_float(correlate(xs, x.shape(), ws, b, w, p.stride, p.padding, out), p.activation)
        }
        Operands::Quant { x: xs, w: ws, b } => {
            finish_quant(correlate(&xs, x.shape(), &ws, b, w, p.stride, p.padding, out), p.activation, p.output_shift)
        }
    };
    Tensor::new(out, data)
}

/// Raw int32 accumulators (bias included) of an int8 convolution, before
/// shifting and saturation.
pub fn conv2d_accumulate(x: &Tensor, w: &Kernel4D, stride: usize, padding: usize) -> Result<Tensor> {
    let out = conv2d_output_shape(x.shape(), w, stride, padding)?;
    match operands(x, w)? {
        Operands::Quant { x: xs, w: ws, b } => {
            Tensor::new(out, correlate(&xs, x.shape(), &ws, b, w, stride, padding, out))
        }
        Operands::Float { .. } => Err(Error::ModeMismatch("accumulator mode needs int8 operands".into())),
    }
}

/// Transposed convolution (gradient of `conv2d` with respect to its input).
pub fn conv_transpose2d(x: &Tensor, w: &Kernel4D, p: &ConvTransposeParams) -> Result<Tensor> {
    let out = conv_transpose2d_output_shape(x.shape(), w, p)?;
    let data = match operands(x, w)? {
        Operands::Float { x: xs, w: ws, b } => finish_float(scatter(xs, x.shape(), ws, b, w, p, out), p.activation),
        Operands::Quant { x: xs, w: ws, b } => {
            finish_quant(scatter(&xs, x.shape(), &ws, b, w, p, out), p.activation, p.output_shift)
        }
    };
    Tensor::new(out, data)
}

/// Raw int32 accumulators of an int8 transposed convolution.
pub fn conv_transpose2d_accumulate(x: &Tensor, w: &Kernel4D, p: &ConvTransposeParams) -> Result<Tensor> {
    let out = conv_transpose2d_output_shape(x.shape(), w, p)?;
    match operands(x, w)? {
        Operands::Quant { x: xs, w: ws, b } => Tensor::new(out, scatter(&xs, x.shape(), &ws, b, w, p, out)),
        Operands::Float { .. } => Err(Error::ModeMismatch("accumulator mode needs int8 operands".into())),
    }
}

pub fn maxpool2x2_output_shape(input: Shape) -> Result<Shape> {
    if !input.height.is_multiple_of(2) || !input.width.is_multiple_of(2) {
        return Err(Error::InvalidShape(format!("2x2 max pool needs even spatial dims, got {input}")));
    }
    Ok(Shape::new(input.channels, input.height / 2, input.width / 2))
}

fn pool_block<T: Copy + PartialOrd>(src: &[T], s: Shape) -> Vec<T> {
    let (h, w) = (s.height, s.width);
    let mut out = Vec::with_capacity(src.len() / 4);
    for plane in src.chunks_exact(h * w) {
        for y in (0..h).step_by(2) {
            for x in (0..w).step_by(2) {
                let mut m = plane[y * w + x];
                for v in [plane[y * w + x + 1], plane[(y + 1) * w + x], plane[(y + 1) * w + x + 1]] {
                    if v > m {
                        m = v;
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

/// 2x2 max pool with stride 2.
pub fn maxpool2x2(x: &Tensor) -> Result<Tensor> {
    let out = maxpool2x2_output_shape(x.shape())?;
    let s = x.shape();
    Tensor::new(out, map_data!(x.data(), v => pool_block(v, s)))
}

pub fn concat_output_shape(a: Shape, b: Shape) -> Result<Shape> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::SpatialMismatch { a_h: a.height, a_w: a.width, b_h: b.height, b_w: b.width });
    }
    Ok(Shape::new(a.channels + b.channels, a.height, a.width))
}

/// Stacks `a`'s channels, then `b`'s.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let out = concat_output_shape(a.shape(), b.shape())?;
    let data = match (a.data(), b.data()) {
        (Data::F32(x), Data::F32(y)) => Data::F32([x.as_slice(), y].concat()),
        (Data::I8(x), Data::I8(y)) => Data::I8([x.as_slice(), y].concat()),
        (Data::I32(x), Data::I32(y)) => Data::I32([x.as_slice(), y].concat()),
        (x, y) => return Err(Error::ModeMismatch(format!("concat of {} and {}", x.dtype(), y.dtype()))),
    };
    Tensor::new(out, data)
}
