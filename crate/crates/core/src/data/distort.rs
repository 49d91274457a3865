//! Synthetic distortions with monotone severity ladders.
//!
//! Five types cover the common screen-content degradations: Gaussian
//! noise, Gaussian blur, horizontal motion blur, contrast change about
//! mid-gray, and block-transform coding artifacts (an 8x8 DCT
//! quantization stand-in for codec compression).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, streams};

use super::image::SciImage;

pub const MAX_LEVEL: u32 = 5;

const GN_SIGMA: [f32; 5] = [0.02, 0.05, 0.1, 0.2, 0.3];
const GB_SIGMA: [f32; 5] = [0.8, 1.5, 2.5, 4.0, 6.0];
const MB_LENGTH: [usize; 5] = [3, 7, 11, 15, 21];
const CC_GAIN: [f32; 5] = [0.8, 0.65, 0.5, 1.25, 1.5];
const BLOCK_STEP: [f32; 5] = [8.0, 16.0, 32.0, 48.0, 64.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SyntheticDistortion {
    GaussianNoise,
    GaussianBlur,
    MotionBlur,
    ContrastChange,
    BlockCoding,
}

impl SyntheticDistortion {
    pub fn all() -> [Self; 5] {
        [
            Self::GaussianNoise,
            Self::GaussianBlur,
            Self::MotionBlur,
            Self::ContrastChange,
            Self::BlockCoding,
        ]
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::GaussianNoise => "GN",
            Self::GaussianBlur => "GB",
            Self::MotionBlur => "MB",
            Self::ContrastChange => "CC",
            Self::BlockCoding => "BLOCK",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "GN" => Some(Self::GaussianNoise),
            "GB" => Some(Self::GaussianBlur),
            "MB" => Some(Self::MotionBlur),
            "CC" => Some(Self::ContrastChange),
            "BLOCK" => Some(Self::BlockCoding),
            _ => None,
        }
    }

    fn index(self) -> usize {
        Self::all().iter().position(|&d| d == self).unwrap()
    }
}

/// Contrast gain of a CC level (about mid-gray 0.5).
pub fn contrast_gain(level: u32) -> f32 {
    CC_GAIN[(level - 1) as usize]
}

/// Applies a distortion at severity `level` in `1..=5`. Deterministic
/// given `(kind, level, seed)`; output clamped to [0, 1].
pub fn apply_distortion(
    image: &SciImage,
    kind: SyntheticDistortion,
    level: u32,
    seed: u64,
) -> Result<SciImage> {
    if level < 1 || level > MAX_LEVEL {
        return Err(Error::Config(format!(
            "distortion level {level} outside 1..={MAX_LEVEL}"
        )));
    }
    let li = (level - 1) as usize;
    let mut out = match kind {
        SyntheticDistortion::GaussianNoise => {
            let sigma = GN_SIGMA[li];
            let mut rng = rng_for(seed, streams::DISTORT, (kind.index() as u64) << 8 | level as u64);
            let mut img = image.clone();
            for v in &mut img.data {
                let n: f64 = rng.sample(StandardNormal);
                *v += sigma * n as f32;
            }
            img
        }
        SyntheticDistortion::GaussianBlur => gaussian_blur(image, GB_SIGMA[li]),
        SyntheticDistortion::MotionBlur => horizontal_box_blur(image, MB_LENGTH[li]),
        SyntheticDistortion::ContrastChange => {
            let g = CC_GAIN[li];
            let mut img = image.clone();
            for v in &mut img.data {
                *v = 0.5 + g * (*v - 0.5);
            }
            img
        }
        SyntheticDistortion::BlockCoding => block_quantize(image, BLOCK_STEP[li]),
    };
    for v in &mut out.data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-((i * i) as f32) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn convolve_separable(image: &SciImage, kernel: &[f32]) -> SciImage {
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = (image.width as i64, image.height as i64);
    let mut tmp = SciImage::new(image.width, image.height);
    // horizontal pass, replicate edges
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (i, &kv) in kernel.iter().enumerate() {
                    let xs = (x + i as i64 - radius).clamp(0, w - 1);
                    acc += kv * image.get(xs as usize, y as usize, c);
                }
                tmp.set(x as usize, y as usize, c, acc);
            }
        }
    }
    let mut out = SciImage::new(image.width, image.height);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (i, &kv) in kernel.iter().enumerate() {
                    let ys = (y + i as i64 - radius).clamp(0, h - 1);
                    acc += kv * tmp.get(x as usize, ys as usize, c);
                }
                out.set(x as usize, y as usize, c, acc);
            }
        }
    }
    out
}

fn gaussian_blur(image: &SciImage, sigma: f32) -> SciImage {
    convolve_separable(image, &gaussian_kernel(sigma))
}

fn horizontal_box_blur(image: &SciImage, length: usize) -> SciImage {
    let radius = (length / 2) as i64;
    let w = image.width as i64;
    let norm = 1.0 / length as f32;
    let mut out = SciImage::new(image.width, image.height);
    for y in 0..image.height {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for i in -radius..=radius {
                    let xs = (x + i).clamp(0, w - 1);
                    acc += image.get(xs as usize, y, c);
                }
                out.set(x as usize, y, c, acc * norm);
            }
        }
    }
    out
}

const BLOCK: usize = 8;

/// Orthonormal DCT-II basis value for (k, n) of an 8-point transform.
fn dct_basis(k: usize, n: usize) -> f32 {
    let scale = if k == 0 {
        (1.0 / BLOCK as f32).sqrt()
    } else {
        (2.0 / BLOCK as f32).sqrt()
    };
    scale
        * ((std::f32::consts::PI / BLOCK as f32) * (n as f32 + 0.5) * k as f32).cos()
}

/// Quantizes 8x8 DCT coefficients with a uniform step in 0..255 units,
/// mimicking block-coding artifacts. Edges are replicated up to a block
/// multiple and cropped back.
fn block_quantize(image: &SciImage, step: f32) -> SciImage {
    let bw = image.width.div_ceil(BLOCK) * BLOCK;
    let bh = image.height.div_ceil(BLOCK) * BLOCK;
    let mut out = image.clone();
    let mut block = [[0.0f32; BLOCK]; BLOCK];
    let mut coef = [[0.0f32; BLOCK]; BLOCK];
    for c in 0..3 {
        for by in (0..bh).step_by(BLOCK) {
            for bx in (0..bw).step_by(BLOCK) {
                for y in 0..BLOCK {
                    for x in 0..BLOCK {
                        let sx = (bx + x).min(image.width - 1);
                        let sy = (by + y).min(image.height - 1);
                        block[y][x] = image.get(sx, sy, c) * 255.0;
                    }
                }
                // forward 2D DCT
                for ky in 0..BLOCK {
                    for kx in 0..BLOCK {
                        let mut acc = 0.0;
                        for y in 0..BLOCK {
                            for x in 0..BLOCK {
                                acc += block[y][x] * dct_basis(ky, y) * dct_basis(kx, x);
                            }
                        }
                        coef[ky][kx] = step * (acc / step).round();
                    }
                }
                // inverse 2D DCT
                for y in 0..BLOCK {
                    for x in 0..BLOCK {
                        let sx = bx + x;
                        let sy = by + y;
                        if sx >= image.width || sy >= image.height {
                            continue;
                        }
                        let mut acc = 0.0;
                        for ky in 0..BLOCK {
                            for kx in 0..BLOCK {
                                acc += coef[ky][kx] * dct_basis(ky, y) * dct_basis(kx, x);
                            }
                        }
                        out.set(sx, sy, c, acc / 255.0);
                    }
                }
            }
        }
    }
    out
}
