//! Data folding (space-to-depth), its inverse, and the matching kernel
//! rearrangement.
//!
//! Folded channel `f = (dh * alpha + dw) * C + c` holds source channel `c`
//! sampled at row offset `dh` and column offset `dw`: the `(0, 0)` block of
//! all source channels comes first, then `(0, 1)`, and so on.

use crate::error::{Axis, Error, Result};
use crate::tensor::{map_data, Kernel4D, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FoldSpec {
    alpha: usize,
}

impl FoldSpec {
    pub fn new(alpha: usize) -> Result<Self> {
        if alpha == 0 {
            return Err(Error::ZeroAlpha);
        }
        Ok(FoldSpec { alpha })
    }

    pub const fn identity() -> Self {
        FoldSpec { alpha: 1 }
    }

    pub const fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn folded_shape(&self, s: Shape) -> Result<Shape> {
        let a = self.alpha;
        if !s.height.is_multiple_of(a) {
            return Err(Error::NotDivisible { axis: Axis::Height, size: s.height, alpha: a });
        }
        if !s.width.is_multiple_of(a) {
            return Err(Error::NotDivisible { axis: Axis::Width, size: s.width, alpha: a });
        }
        Ok(Shape::new(s.channels * a * a, s.height / a, s.width / a))
    }

    pub fn unfolded_shape(&self, s: Shape) -> Result<Shape> {
        let a = self.alpha;
        if !s.channels.is_multiple_of(a * a) {
            return Err(Error::ChannelsNotDivisible { channels: s.channels, alpha: a });
        }
        Ok(Shape::new(s.channels / (a * a), s.height * a, s.width * a))
    }
}

impl Default for FoldSpec {
    fn default() -> Self {
        FoldSpec { alpha: 4 }
    }
}

/// Folds a `(c, h, w)` block laid out CHW. Callers guarantee divisibility.
fn fold_block<T: Copy>(src: &[T], c: usize, h: usize, w: usize, alpha: usize) -> Vec<T> {
    let (fh, fw) = (h / alpha, w / alpha);
    let mut out = Vec::with_capacity(src.len());
    for dh in 0..alpha {
        for dw in 0..alpha {
            for ch in 0..c {
                let plane = &src[ch * h * w..(ch + 1) * h * w];
                for i in 0..fh {
                    let row = &plane[(i * alpha + dh) * w..];
                    out.extend((0..fw).map(|j| row[j * alpha + dw]));
                }
            }
        }
    }
    out
}

/// Inverse of [`fold_block`]; `c` is the unfolded channel count.
fn unfold_block<T: Copy + Default>(src: &[T], c: usize, fh: usize, fw: usize, alpha: usize) -> Vec<T> {
    let (h, w) = (fh * alpha, fw * alpha);
    let mut out = vec![T::default(); src.len()];
    let mut k = 0;
    for dh in 0..alpha {
        for dw in 0..alpha {
            for ch in 0..c {
                for i in 0..fh {
                    let base = ch * h * w + (i * alpha + dh) * w + dw;
                    for j in 0..fw {
                        out[base + j * alpha] = src[k];
                        k += 1;
                    }
                }
            }
        }
    }
    out
}

/// `(C, H, W) -> (alpha^2 C, H/alpha, W/alpha)`.
pub fn fold(x: &Tensor, spec: FoldSpec) -> Result<Tensor> {
    let s = x.shape();
    let out = spec.folded_shape(s)?;
    if spec.alpha == 1 {
        return Ok(x.clone());
    }
    let data = map_data!(x.data(), v => fold_block(v, s.channels, s.height, s.width, spec.alpha));
    Tensor::new(out, data)
}

/// Exact inverse of [`fold`].
pub fn unfold(y: &Tensor, spec: FoldSpec) -> Result<Tensor> {
    let s = y.shape();
    let out = spec.unfolded_shape(s)?;
    if spec.alpha == 1 {
        return Ok(y.clone());
    }
    let data = map_data!(y.data(), v => unfold_block(v, out.channels, s.height, s.width, spec.alpha));
    Tensor::new(out, data)
}

/// Rearranges a `(O, C, alpha k, alpha k)` kernel into `(O, alpha^2 C, k, k)`.
///
/// Each output filter is folded exactly like a CHW tensor, so folded input
/// channel `f` lines up with folded data channel `f`. Bias is unchanged.
pub fn fold_kernel(w: &Kernel4D, spec: FoldSpec) -> Result<Kernel4D> {
    let a = spec.alpha;
    if !w.kh.is_multiple_of(a) {
        return Err(Error::KernelNotDivisible { axis: Axis::Height, size: w.kh, alpha: a });
    }
    if !w.kw.is_multiple_of(a) {
        return Err(Error::KernelNotDivisible { axis: Axis::Width, size: w.kw, alpha: a });
    }
    if a == 1 {
        return Ok(w.clone());
    }
    let filter = w.in_channels * w.kh * w.kw;
    let weights = map_data!(w.weights(), v => v
        .chunks_exact(filter)
        .flat_map(|f| fold_block(f, w.in_channels, w.kh, w.kw, a))
        .collect());
    Kernel4D::new(w.out_channels, w.in_channels * a * a, w.kh / a, w.kw / a, weights, w.bias().clone())
}
