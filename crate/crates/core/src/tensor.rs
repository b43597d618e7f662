//! Dense CHW tensors, convolution kernels and the `L3UT` binary format.

use std::fmt;
use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"L3UT";
pub const TENSOR_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape { channels, height, width }
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Element mode. The discriminant is the on-disk mode byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Dtype {
    F32 = 0,
    I8 = 1,
    I32 = 2,
}

impl Dtype {
    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::I8),
            2 => Ok(Dtype::I32),
            other => Err(Error::Format(format!("unknown element mode byte {other}"))),
        }
    }

    pub const fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::I32 => 4,
            Dtype::I8 => 1,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dtype::F32 => "float32",
            Dtype::I8 => "int8",
            Dtype::I32 => "int32",
        })
    }
}

/// Flat element storage.
#[derive(Debug, Clone, PartialEq)]
pub enum Data {
    F32(Vec<f32>),
    I8(Vec<i8>),
    I32(Vec<i32>),
}

/// Applies a generic, element-type-agnostic rearrangement to every variant.
macro_rules! map_data {
    ($data:expr, $v:ident => $body:expr) => {
        match $data {
            $crate::tensor::Data::F32($v) => $crate::tensor::Data::F32($body),
            $crate::tensor::Data::I8($v) => $crate::tensor::Data::I8($body),
            $crate::tensor::Data::I32($v) => $crate::tensor::Data::I32($body),
        }
    };
}
pub(crate) use map_data;

impl Data {
    pub fn dtype(&self) -> Dtype {
        match self {
            Data::F32(_) => Dtype::F32,
            Data::I8(_) => Dtype::I8,
            Data::I32(_) => Dtype::I32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Data::F32(v) => v.len(),
            Data::I8(v) => v.len(),
            Data::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros(dtype: Dtype, len: usize) -> Self {
        match dtype {
            Dtype::F32 => Data::F32(vec![0.0; len]),
            Dtype::I8 => Data::I8(vec![0; len]),
            Dtype::I32 => Data::I32(vec![0; len]),
        }
    }

    /// Elements widened to `f64`, for reporting and comparisons.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Data::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Data::I8(v) => v.iter().map(|&x| x as f64).collect(),
            Data::I32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    pub(crate) fn write_le<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        match self {
            Data::F32(v) => {
                let mut buf = Vec::with_capacity(v.len() * 4);
                v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
                w.write_all(&buf)
            }
            Data::I8(v) => {
                let buf: Vec<u8> = v.iter().map(|&x| x as u8).collect();
                w.write_all(&buf)
            }
            Data::I32(v) => {
                let mut buf = Vec::with_capacity(v.len() * 4);
                v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
                w.write_all(&buf)
            }
        }
    }

    pub(crate) fn read_le<R: Read>(r: &mut R, dtype: Dtype, len: usize) -> std::io::Result<Self> {
        let mut buf = vec![0u8; len * dtype.size()];
        r.read_exact(&mut buf)?;
        Ok(match dtype {
            Dtype::F32 => {
                Data::F32(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
            }
            Dtype::I8 => Data::I8(buf.into_iter().map(|b| b as i8).collect()),
            Dtype::I32 => {
                Data::I32(buf.chunks_exact(4).map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
            }
        })
    }
}

impl From<Vec<f32>> for Data {
    fn from(v: Vec<f32>) -> Self {
        Data::F32(v)
    }
}

impl From<Vec<i8>> for Data {
    fn from(v: Vec<i8>) -> Self {
        Data::I8(v)
    }
}

impl From<Vec<i32>> for Data {
    fn from(v: Vec<i32>) -> Self {
        Data::I32(v)
    }
}

/// A CHW tensor: channel-major, row-major within each channel.
///
/// Height and width are at least 1. A zero-channel tensor is allowed so
/// that it can act as the identity for channel concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Data,
}

impl Tensor {
    pub fn new(shape: Shape, data: impl Into<Data>) -> Result<Self> {
        let data = data.into();
        if shape.height == 0 || shape.width == 0 {
            return Err(Error::InvalidShape(format!("{shape}: height and width must be >= 1")));
        }
        if data.len() != shape.len() {
            return Err(Error::InvalidShape(format!("{shape} needs {} elements, got {}", shape.len(), data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape, dtype: Dtype) -> Result<Self> {
        Tensor::new(shape, Data::zeros(dtype, shape.len()))
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn data(&self) -> &Data {
        &self.data
    }

    pub fn into_data(self) -> Data {
        self.data
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            Data::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i8(&self) -> Option<&[i8]> {
        match &self.data {
            Data::I8(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i32(&self) -> Option<&[i32]> {
        match &self.data {
            Data::I32(v) => Some(v),
            _ => None,
        }
    }

    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.height + y) * self.shape.width + x
    }

    /// Element at `(c, y, x)` widened to `f64`.
    pub fn get_f64(&self, c: usize, y: usize, x: usize) -> f64 {
        let i = self.index(c, y, x);
        match &self.data {
            Data::F32(v) => v[i] as f64,
            Data::I8(v) => v[i] as f64,
            Data::I32(v) => v[i] as f64,
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&[TENSOR_VERSION, self.dtype() as u8])?;
        for d in [self.shape.channels, self.shape.height, self.shape.width] {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        self.data.write_le(w)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut head = [0u8; 18];
        r.read_exact(&mut head).map_err(|e| Error::Format(format!("truncated tensor header: {e}")))?;
        if &head[..4] != TENSOR_MAGIC {
            return Err(Error::Format("missing L3UT magic".into()));
        }
        if head[4] != TENSOR_VERSION {
            return Err(Error::Format(format!("unsupported tensor version {}", head[4])));
        }
        let dtype = Dtype::from_byte(head[5])?;
        let dim = |i: usize| u32::from_le_bytes([head[i], head[i + 1], head[i + 2], head[i + 3]]) as usize;
        let shape = Shape::new(dim(6), dim(10), dim(14));
        let data = Data::read_le(r, dtype, shape.len())
            .map_err(|e| Error::Format(format!("truncated tensor payload: {e}")))?;
        Tensor::new(shape, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + self.shape.len() * self.dtype().size());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Parses a complete `L3UT` buffer; trailing bytes are an error.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let t = Tensor::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after tensor", cursor.len())));
        }
        Ok(t)
    }
}

/// Convolution weights in `(out, in, row, col)` order plus one bias per
/// output channel.
///
/// Float kernels carry `F32` weights and bias. Quantized kernels carry
/// `I8` weights and an `I32` bias expressed in accumulator units.
/// Transposed convolutions use the same `(out, in, row, col)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel4D {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kh: usize,
    pub kw: usize,
    weights: Data,
    bias: Data,
}

impl Kernel4D {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kh: usize,
        kw: usize,
        weights: impl Into<Data>,
        bias: impl Into<Data>,
    ) -> Result<Self> {
        let (weights, bias) = (weights.into(), bias.into());
        if out_channels == 0 || in_channels == 0 || kh == 0 || kw == 0 {
            return Err(Error::InvalidShape(format!(
                "kernel {out_channels}x{in_channels}x{kh}x{kw} has a zero dimension"
            )));
        }
        match (weights.dtype(), bias.dtype()) {
            (Dtype::F32, Dtype::F32) | (Dtype::I8, Dtype::I32) => {}
            (w, b) => {
                return Err(Error::ModeMismatch(format!("kernel weights {w} with bias {b}")));
            }
        }
        let expected = out_channels * in_channels * kh * kw;
        if weights.len() != expected {
            return Err(Error::InvalidShape(format!(
                "kernel {out_channels}x{in_channels}x{kh}x{kw} needs {expected} weights, got {}",
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::InvalidShape(format!("kernel has {out_channels} outputs but {} biases", bias.len())));
        }
        Ok(Kernel4D { out_channels, in_channels, kh, kw, weights, bias })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kh: usize, kw: usize) -> Result<Self> {
        let n = out_channels * in_channels * kh * kw;
        Kernel4D::new(out_channels, in_channels, kh, kw, vec![0f32; n], vec![0f32; out_channels])
    }

    pub fn weights(&self) -> &Data {
        &self.weights
    }

    pub fn bias(&self) -> &Data {
        &self.bias
    }

    pub fn is_quantized(&self) -> bool {
        self.weights.dtype() == Dtype::I8
    }

    pub fn weight_index(&self, o: usize, i: usize, r: usize, c: usize) -> usize {
        ((o * self.in_channels + i) * self.kh + r) * self.kw + c
    }

    /// Stored parameter count: weights plus biases.
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}
