//! PNG images and float rasters.
//!
//! Float rasters have a 16-byte header of four little-endian u32 words
//! (magic, width, height, reserved) followed by row-major little-endian f32
//! samples. Depth rasters hold one sample per pixel; normal rasters hold three.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use thiserror::Error;

pub const DEPTH_MAGIC: u32 = u32::from_le_bytes(*b"GSDP");
pub const NORMAL_MAGIC: u32 = u32::from_le_bytes(*b"GSNM");
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("png: {0}")]
    Png(#[from] image::ImageError),
    #[error("raster: {0}")]
    Format(String),
}

pub fn encode_png_rgb8(width: u32, height: u32, rgb: &[u8]) -> Result<Vec<u8>, ImageIoError> {
    let img = RgbImage::from_raw(width, height, rgb.to_vec())
        .ok_or_else(|| ImageIoError::Format(format!("{} bytes do not make a {width}x{height} RGB image", rgb.len())))?;
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn write_png_rgb8(path: &Path, width: u32, height: u32, rgb: &[u8]) -> Result<(), ImageIoError> {
    fs::write(path, encode_png_rgb8(width, height, rgb)?)?;
    Ok(())
}

/// Loads any PNG as RGB with samples scaled to `[0, 1]`.
pub fn read_png_rgb(path: &Path) -> Result<(u32, u32, Vec<f64>), ImageIoError> {
    let img = image::load_from_memory_with_format(&fs::read(path)?, ImageFormat::Png)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok((w, h, img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()))
}

/// A float image with `channels` interleaved samples per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatRaster {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

impl FloatRaster {
    pub fn depth(width: u32, height: u32, data: &[f64]) -> Self {
        Self::from_f64(width, height, 1, data)
    }

    pub fn normals(width: u32, height: u32, data: &[f64]) -> Self {
        Self::from_f64(width, height, 3, data)
    }

    fn from_f64(width: u32, height: u32, channels: u32, data: &[f64]) -> Self {
        assert_eq!(data.len(), (width * height * channels) as usize, "raster size");
        Self {
            width,
            height,
            channels,
            data: data.iter().map(|v| *v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| *v as f64).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { NORMAL_MAGIC } else { DEPTH_MAGIC };
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        for word in [magic, self.width, self.height, 0] {
            out.extend_from_slice(&word.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ImageIoError> {
        if bytes.len() < HEADER_LEN {
            return Err(ImageIoError::Format("shorter than the 16-byte header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        let channels = match word(0) {
            DEPTH_MAGIC => 1,
            NORMAL_MAGIC => 3,
            m => return Err(ImageIoError::Format(format!("unknown magic {m:#010x}"))),
        };
        let (width, height) = (word(1), word(2));
        let count = width as usize * height as usize * channels;
        let body = &bytes[HEADER_LEN..];
        if body.len() != 4 * count {
            return Err(ImageIoError::Format(format!(
                "{width}x{height}x{channels} raster needs {} body bytes, found {}",
                4 * count,
                body.len()
            )));
        }
        let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self {
            width,
            height,
            channels: channels as u32,
            data,
        })
    }

    pub fn read(path: &Path) -> Result<Self, ImageIoError> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), ImageIoError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}
