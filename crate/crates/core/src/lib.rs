//! Space-to-depth data folding and a small forward-only CNN stack built
//! around it: an int8-quantizable layer engine, the folded tiny U-net
//! topology, an analytic channel-parallel accelerator cost model, and
//! segmentation metrics plus dataset cropping helpers.
//!
//! Every tensor is a dense CHW array. Folding with factor `alpha` turns a
//! `C x H x W` tensor into `alpha^2 C x H/alpha x W/alpha` by stacking the
//! phase-shifted downsamplings along the channel axis; [`fold::fold_kernel`]
//! rearranges a convolution kernel so that a stride-`s` convolution over the
//! folded tensor reproduces a stride-`alpha s` convolution over the original.

pub mod accel;
pub mod arch;
pub mod error;
pub mod eval;
pub mod fold;
pub mod nn;
pub mod tensor;
pub mod verify;

pub use error::{Axis, Error, Result};
pub use fold::{fold, fold_kernel, unfold, FoldSpec};
pub use tensor::{Data, Dtype, Kernel4D, Shape, Tensor};
