//! Dataset cropping geometry: overlapping fixed-size crop grids and the
//! portrait-dataset sliding crops.

use crate::error::{Error, Result};
use crate::eval::image::Raster;

pub const CROP_SIZE: usize = 352;

/// Portrait images are 600 wide and 800 tall.
pub const AISEGMENT_WIDTH: usize = 600;
pub const AISEGMENT_HEIGHT: usize = 800;
pub const AISEGMENT_CROP: usize = 600;
pub const AISEGMENT_OFFSETS: [usize; 3] = [0, 100, 200];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// `round(crop * (1 - overlap))`, at least 1.
pub fn overlap_stride(crop: usize, overlap: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Config(format!("overlap fraction must be in [0, 1), got {overlap}")));
    }
    Ok(((crop as f64 * (1.0 - overlap)).round() as usize).max(1))
}

/// Start offsets along one axis; the last crop is clamped to the edge.
pub fn crop_starts(len: usize, crop: usize, stride: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut s = 0;
    loop {
        if s + crop >= len {
            starts.push(len - crop);
            return starts;
        }
        starts.push(s);
        s += stride;
    }
}

/// Square crop windows, top-to-bottom then left-to-right.
pub fn overlap_grid(width: usize, height: usize, crop: usize, overlap: f64) -> Result<Vec<CropWindow>> {
    if width < crop || height < crop || crop == 0 {
        return Err(Error::ImageTooSmall { width, height, crop_w: crop, crop_h: crop });
    }
    let stride = overlap_stride(crop, overlap)?;
    let xs = crop_starts(width, crop, stride);
    let ys = crop_starts(height, crop, stride);
    Ok(ys.iter().flat_map(|&y| xs.iter().map(move |&x| CropWindow { x, y, width: crop, height: crop })).collect())
}

pub fn overlap_crop(image: &Raster, crop: usize, overlap: f64) -> Result<Vec<(CropWindow, Raster)>> {
    overlap_grid(image.width, image.height, crop, overlap)?
        .into_iter()
        .map(|w| Ok((w, image.crop(w.x, w.y, w.width, w.height)?)))
        .collect()
}

/// Three 600x600 crops sliding down a 600x800 portrait, each rescaled to
/// 352x352 by nearest neighbour. Works for both images and masks.
pub fn aisegment_crops(image: &Raster) -> Result<Vec<Raster>> {
    if (image.width, image.height) != (AISEGMENT_WIDTH, AISEGMENT_HEIGHT) {
        return Err(Error::InvalidShape(format!(
            "portrait input must be {AISEGMENT_WIDTH}x{AISEGMENT_HEIGHT}, got {}x{}",
            image.width, image.height
        )));
    }
    AISEGMENT_OFFSETS
        .iter()
        .map(|&y| image.crop(0, y, AISEGMENT_CROP, AISEGMENT_CROP)?.resize_nearest(CROP_SIZE, CROP_SIZE))
        .collect()
}
