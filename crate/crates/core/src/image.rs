//! Planar float images and class masks, plus their lossless file formats.
//!
//! Images are stored as 8-bit RGB (PPM or PNG), masks as 8-bit grayscale
//! whose values are class indices.

use std::path::Path;

use crate::error::{Error, Result};

pub const BACKGROUND: u8 = 0;
pub const RIM: u8 = 1;
pub const CUP: u8 = 2;
pub const NUM_CLASSES: usize = 3;

/// Channel-major float image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels * height * width != data.len() || data.is_empty() {
            return Err(Error::Geometry(format!(
                "image {channels}x{height}x{width} with {} values",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Rounds every value to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        Self {
            data: self.data.iter().map(|&v| to_u8(v) as f32 / 255.0).collect(),
            ..self.clone()
        }
    }

    pub fn to_rgb8(&self) -> Result<image::RgbImage> {
        if self.channels != 3 {
            return Err(Error::Geometry(format!("RGB output needs 3 channels, got {}", self.channels)));
        }
        let (w, h) = (self.width as u32, self.height as u32);
        Ok(image::RgbImage::from_fn(w, h, |x, y| {
            let (x, y) = (x as usize, y as usize);
            image::Rgb([0, 1, 2].map(|c| to_u8(self.get(c, y, x))))
        }))
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * w * h];
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
            }
        }
        Self {
            channels: 3,
            height: h,
            width: w,
            data,
        }
    }

    /// Writes 8-bit RGB; the format follows the extension (`.ppm` or `.png`).
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_rgb8()?
            .save(path)
            .map_err(|e| Error::data(path, format!("cannot write image: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::data(path, format!("unreadable image: {e}")))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Per-pixel class index in `{0 background, 1 rim, 2 cup}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height * width != data.len() || data.is_empty() {
            return Err(Error::Geometry(format!("mask {height}x{width} with {} values", data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, class: u8) -> Self {
        Self {
            height,
            width,
            data: vec![class; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn count(&self, class: u8) -> usize {
        self.data.iter().filter(|&&c| c == class).count()
    }

    /// First value outside the class range, if any.
    pub fn invalid_value(&self) -> Option<u8> {
        self.data.iter().copied().find(|&c| c as usize >= NUM_CLASSES)
    }

    pub fn binary(&self, class: u8) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&c| c == class).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        image::GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer matches dims")
            .save(path)
            .map_err(|e| Error::data(path, format!("cannot write mask: {e}")))
    }

    /// Reads an 8-bit grayscale mask without validating class values.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::data(path, format!("unreadable mask: {e}")))?;
        let gray = img.to_luma8();
        Self::new(gray.height() as usize, gray.width() as usize, gray.into_raw())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if height * width != data.len() {
            return Err(Error::Geometry(format!("mask {height}x{width} with {} values", data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}
