use crate::error::{Error, Result};

/// A batch of images in `b × h × w × c` row-major order, pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    batch: usize,
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
}

impl ImageBatch {
    pub fn new(batch: usize, height: usize, width: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if batch == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "image batch dimensions must be positive, got {batch}x{height}x{width}x{channels}"
            )));
        }
        let expected = batch * height * width * channels;
        if pixels.len() != expected {
            return Err(Error::Dimension {
                what: "image batch pixel count",
                expected,
                got: pixels.len(),
            });
        }
        if let Some(k) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Domain(format!("pixel {k} = {} outside [0, 1]", pixels[k])));
        }
        Ok(Self {
            batch,
            height,
            width,
            channels,
            pixels,
        })
    }

    /// Builds a batch from 8-bit pixels, scaling by 1/255.
    pub fn from_u8(batch: usize, height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let pixels = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Self::new(batch, height, width, channels, pixels)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(b, h, w, c)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.batch, self.height, self.width, self.channels)
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn image(&self, n: usize) -> &[f32] {
        let len = self.image_len();
        &self.pixels[n * len..(n + 1) * len]
    }

    /// 8-bit pixels of image `n`, rounding `p * 255`.
    pub fn image_u8(&self, n: usize) -> Vec<u8> {
        self.image(n).iter().map(|&p| to_u8(p)).collect()
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| to_u8(p)).collect()
    }

    /// Images `indices` gathered into a new batch.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let len = self.image_len();
        let mut pixels = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            if i >= self.batch {
                return Err(Error::Shape(format!("image index {i} out of range for batch of {}", self.batch)));
            }
            pixels.extend_from_slice(self.image(i));
        }
        Self::new(indices.len(), self.height, self.width, self.channels, pixels)
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "image batches differ: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

fn to_u8(p: f32) -> u8 {
    (p * 255.0).round().clamp(0.0, 255.0) as u8
}
