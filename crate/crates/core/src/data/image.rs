//! In-memory RGB image with values in [0, 1], plus PNG/BMP I/O.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};

use crate::error::{Error, Result};

/// Interleaved-RGB float image (HWC layout).
#[derive(Clone, Debug, PartialEq)]
pub struct SciImage {
    pub width: usize,
    pub height: usize,
    /// `height * width * 3` values in [0, 1], row-major, RGB interleaved.
    pub data: Vec<f32>,
}

impl SciImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn set_rgb(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            self.set(x, y, c, v);
        }
    }

    /// Fills the axis-aligned rectangle `[x0, x1) x [y0, y1)` (clamped to
    /// the image bounds) with a constant color.
    pub fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, rgb: [f32; 3]) {
        for y in y0..y1.min(self.height) {
            for x in x0..x1.min(self.width) {
                self.set_rgb(x, y, rgb);
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 255.0)
            .collect();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data,
        })
    }

    /// Writes an 8-bit PNG; values are clamped and rounded.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, bytes)
                .ok_or_else(|| Error::Size("image buffer size mismatch".into()))?;
        DynamicImage::ImageRgb8(buf).save(path)?;
        Ok(())
    }
}

/// Peak signal-to-noise ratio in dB between two equally sized images in
/// [0, 1]; infinite for identical images.
pub fn psnr(a: &SciImage, b: &SciImage) -> f64 {
    assert_eq!(a.data.len(), b.data.len(), "psnr needs equal sizes");
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_for_8bit_values() {
        let mut img = SciImage::new(8, 4);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 256) as f32 / 255.0;
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        img.save_png(&path).unwrap();
        let back = SciImage::load(&path).unwrap();
        assert_eq!(img.data, back.data);
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let img = SciImage::new(4, 4);
        assert!(psnr(&img, &img).is_infinite());
    }
}
