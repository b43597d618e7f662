//! 8-bit rasters with binary PGM (P5) / PPM (P6) I/O and optional PNG
//! decoding.

use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::metrics::ClassMap;
use crate::tensor::{Shape, Tensor};

/// Interleaved 8-bit image, `channels` samples per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 || data.len() != width * height * channels {
            return Err(Error::InvalidShape(format!("raster {width}x{height}x{channels} with {} bytes", data.len())));
        }
        Ok(Raster { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Raster { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Raster> {
        if x0 + width > self.width || y0 + height > self.height || width == 0 || height == 0 {
            return Err(Error::InvalidShape(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let row = width * self.channels;
        let mut data = Vec::with_capacity(row * height);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + row]);
        }
        Raster::new(width, height, self.channels, data)
    }

    /// Nearest-neighbour resize sampling source pixel centres:
    /// `src = floor((2 * dst + 1) * in / (2 * out))`.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Result<Raster> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidShape("resize target must be non-empty".into()));
        }
        let xs: Vec<usize> = (0..width).map(|x| nearest_index(x, self.width, width)).collect();
        let mut data = Vec::with_capacity(width * height * self.channels);
        for y in 0..height {
            let sy = nearest_index(y, self.height, height);
            for &sx in &xs {
                data.extend_from_slice(self.pixel(sx, sy));
            }
        }
        Raster::new(width, height, self.channels, data)
    }

    /// CHW int8 tensor with each byte `v` mapped to `v - 128`.
    pub fn to_tensor_i8(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut out = vec![0i8; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = (v as i16 - 128) as i8;
            }
        }
        Tensor::new(Shape::new(self.channels, self.height, self.width), out).expect("consistent shape")
    }

    /// Labels from a single-channel raster, or from the alpha channel of a
    /// gray+alpha / RGBA mask (nonzero alpha is class 1).
    pub fn to_class_map(&self) -> Result<ClassMap> {
        let labels = match self.channels {
            1 => self.data.clone(),
            2 | 4 => self.data.chunks_exact(self.channels).map(|p| (p[self.channels - 1] != 0) as u8).collect(),
            n => return Err(Error::Format(format!("cannot read labels from a {n}-channel image"))),
        };
        ClassMap::new(self.height, self.width, labels)
    }

    pub fn from_class_map(m: &ClassMap) -> Raster {
        Raster { width: m.width, height: m.height, channels: 1, data: m.labels.clone() }
    }

    /// Binary PGM for 1 channel, binary PPM for 3.
    pub fn to_pnm(&self) -> Result<Vec<u8>> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            n => return Err(Error::Format(format!("PNM output needs 1 or 3 channels, got {n}"))),
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        Ok(out)
    }

    pub fn save_pnm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pnm()?)?;
        Ok(())
    }
}

pub(crate) fn nearest_index(dst: usize, input: usize, output: usize) -> usize {
    (((2 * dst + 1) * input) / (2 * output)).min(input - 1)
}

/// Parses binary PGM (P5) or PPM (P6) with maxval <= 255.
pub fn decode_pnm(bytes: &[u8]) -> Result<Raster> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::Format("expected binary PGM (P5) or PPM (P6)".into())),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Format("truncated PNM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("malformed PNM header field".into()))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PNM maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("missing whitespace after PNM header".into()));
    }
    pos += 1;
    let len = width * height * channels;
    let data =
        bytes.get(pos..pos + len).ok_or_else(|| Error::Format(format!("PNM raster needs {len} bytes")))?.to_vec();
    Raster::new(width, height, channels, data)
}

#[cfg(feature = "png")]
pub fn decode_png(bytes: &[u8]) -> Result<Raster> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::Format(format!("png: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::Format("png: image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Format(format!("png: {e}")))?;
    buf.truncate(info.buffer_size());
    let channels = info.color_type.samples();
    Raster::new(info.width as usize, info.height as usize, channels, buf)
}

/// Reads a PGM, PPM or (with the `png` feature) PNG file.
pub fn read_image(path: &Path) -> Result<Raster> {
    let bytes = std::fs::read(path)?;
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<Raster> {
    #[cfg(feature = "png")]
    if bytes.starts_with(b"\x89PNG") {
        return decode_png(bytes);
    }
    decode_pnm(bytes)
}
