//! Floating-point image buffers.
//!
//! Intensities are stored as `f64` in `[0, 1]` so that chains of perturbations
//! never accumulate quantization error. Quantization happens only when an
//! image is encoded to disk.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Luma weights used for every RGB to gray conversion.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Row-major image with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ImageBuffer {
    /// Builds an image, validating size, channel count and intensity range.
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Input(format!("image must have 1 or 3 channels, got {channels}")));
        }
        let expected = width * height * channels;
        if pixels.len() != expected {
            return Err(Error::Dimension(format!(
                "{width}x{height}x{channels} image needs {expected} values, got {}",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input(format!(
                "intensity {} at index {bad} is outside [0, 1]",
                pixels[bad]
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Single-channel image with every pixel set to `value`.
    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, 1, vec![value; width * height])
    }

    /// Gray image whose pixel `(x, y)` is `f(x, y)`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, 1, pixels)
    }

    /// Builds from values the caller guarantees are valid. Values are clamped
    /// into `[0, 1]`; NaN becomes 0.
    pub(crate) fn from_clamped(width: usize, height: usize, channels: usize, mut pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), width * height * channels);
        for v in &mut pixels {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self {
            width,
            height,
            channels,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Gray version of the image; a gray image is returned unchanged.
    pub fn to_gray(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let pixels = self
            .pixels
            .chunks_exact(3)
            .map(|rgb| {
                let v = LUMA_WEIGHTS[0] * rgb[0] + LUMA_WEIGHTS[1] * rgb[1] + LUMA_WEIGHTS[2] * rgb[2];
                v.clamp(0.0, 1.0)
            })
            .collect();
        Self {
            width: self.width,
            height: self.height,
            channels: 1,
            pixels,
        }
    }

    /// Bilinear resize of a gray image using pixel-center alignment:
    /// output pixel `x` samples source coordinate `(x + 0.5) * in / out - 0.5`,
    /// clamped to the valid range.
    pub fn resize_gray(&self, out_width: usize, out_height: usize) -> ImageBuffer {
        let gray = self.to_gray();
        if out_width == gray.width && out_height == gray.height {
            return gray;
        }
        let xs = sample_axis(gray.width, out_width);
        let ys = sample_axis(gray.height, out_height);
        let mut pixels = Vec::with_capacity(out_width * out_height);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let p00 = gray.pixels[y0 * gray.width + x0];
                let p01 = gray.pixels[y0 * gray.width + x1];
                let p10 = gray.pixels[y1 * gray.width + x0];
                let p11 = gray.pixels[y1 * gray.width + x1];
                let top = p00 + fx * (p01 - p00);
                let bottom = p10 + fx * (p11 - p10);
                pixels.push(top + fy * (bottom - top));
            }
        }
        ImageBuffer::from_clamped(out_width, out_height, 1, pixels)
    }

    /// Applies `f` to every intensity, clamping the result.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageBuffer {
        let pixels = self.pixels.iter().map(|&v| f(v)).collect();
        ImageBuffer::from_clamped(self.width, self.height, self.channels, pixels)
    }
}

fn sample_axis(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    let max = (input - 1) as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_ranges() {
        assert!(ImageBuffer::new(0, 3, 1, vec![]).is_err());
        assert!(ImageBuffer::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(ImageBuffer::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageBuffer::new(1, 1, 1, vec![1.5]).is_err());
        assert!(ImageBuffer::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn luma_conversion() {
        let img = ImageBuffer::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(img.to_gray().pixels(), &[0.299]);
    }

    #[test]
    fn identity_resize_is_exact() {
        let img = ImageBuffer::from_fn(4, 3, |x, y| (x + 4 * y) as f64 / 12.0).unwrap();
        assert_eq!(img.resize_gray(4, 3), img);
    }

    #[test]
    fn half_pixel_average_down_to_one() {
        let img = ImageBuffer::new(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(img.resize_gray(1, 1).pixels(), &[0.5]);
    }

    #[test]
    fn upsample_interpolates_between_samples() {
        // 2 -> 4: sample points -0.25, 0.25, 0.75, 1.25 clamp to 0, 0.25, 0.75, 1.
        let img = ImageBuffer::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(img.resize_gray(4, 1).pixels(), &[0.0, 0.25, 0.75, 1.0]);
    }
}
