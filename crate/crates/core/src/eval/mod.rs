//! Segmentation metrics, image I/O and dataset crop geometry.

pub mod crop;
pub mod image;
pub mod metrics;

pub use crop::{aisegment_crops, overlap_crop, overlap_grid, overlap_stride, CropWindow};
pub use image::{read_image, Raster};
pub use metrics::{ClassMap, ConfusionMatrix};
