//! Capture-noise simulators shared by live and spoof images: hand tremble,
//! low resolution and colour diversity.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::{clamp_unit, resize_bilinear, ImageTensor, CHANNELS};
use crate::rng::Rng;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrembleParams {
    /// Half-length of the line kernel; kernel length is `2·strength + 1`.
    pub strength: u32,
    /// Blur direction in radians.
    pub angle: f64,
}

impl TrembleParams {
    pub fn draw(rng: &mut Rng, strength: u32) -> Self {
        Self {
            strength,
            angle: rng.uniform(0.0, std::f64::consts::PI),
        }
    }
}

/// Uniform line-kernel motion blur along `params.angle`.
pub fn apply_tremble<T: Real>(img: &ImageTensor<T>, params: &TrembleParams) -> ImageTensor<T> {
    if params.strength == 0 {
        return img.clone();
    }
    let s = params.strength as i64;
    let (sin, cos) = params.angle.sin_cos();
    let taps: Vec<(T, T)> = (-s..=s)
        .map(|t| (T::lit(t as f64 * sin), T::lit(t as f64 * cos)))
        .collect();
    let inv = T::one() / T::from_usize(taps.len()).unwrap();
    let mut out = img.clone();
    for y in 0..img.height() {
        let fy = T::from_usize(y).unwrap();
        for x in 0..img.width() {
            let fx = T::from_usize(x).unwrap();
            for c in 0..CHANNELS {
                let mut acc = T::zero();
                for &(dy, dx) in &taps {
                    acc += img.sample_bilinear(fy + dy, fx + dx, c);
                }
                out.set(y, x, c, clamp_unit(acc * inv));
            }
        }
    }
    out
}

/// (a) Hand-trembling motion blur at a random direction.
pub fn hand_tremble<T: Real>(img: &ImageTensor<T>, rng: &mut Rng, strength: u32) -> ImageTensor<T> {
    apply_tremble(img, &TrembleParams::draw(rng, strength))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowResParams {
    pub factor: u32,
}

pub fn apply_low_resolution<T: Real>(img: &ImageTensor<T>, params: &LowResParams) -> Result<ImageTensor<T>> {
    if params.factor <= 1 {
        return Ok(img.clone());
    }
    let f = params.factor as usize;
    let h = img.height().div_ceil(f);
    let w = img.width().div_ceil(f);
    let small = resize_bilinear(img, h, w)?;
    resize_bilinear(&small, img.height(), img.width())
}

/// (b) Downsample by `factor` then upsample back. The rng is unused but kept
/// so every simulator shares one calling convention.
pub fn low_resolution<T: Real>(img: &ImageTensor<T>, _rng: &mut Rng, factor: u32) -> Result<ImageTensor<T>> {
    apply_low_resolution(img, &LowResParams { factor })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorDiversityParams {
    pub gain: [f64; 3],
    pub offset: [f64; 3],
}

impl ColorDiversityParams {
    pub fn draw(rng: &mut Rng, max_shift: f64) -> Self {
        let mut gain = [1.0; 3];
        let mut offset = [0.0; 3];
        for c in 0..3 {
            gain[c] = rng.uniform(1.0 - max_shift, 1.0 + max_shift);
            offset[c] = rng.uniform(-max_shift, max_shift);
        }
        Self { gain, offset }
    }
}

pub fn apply_color_diversity<T: Real>(img: &ImageTensor<T>, params: &ColorDiversityParams) -> ImageTensor<T> {
    let gain = params.gain.map(T::lit);
    let offset = params.offset.map(T::lit);
    img.map_channels(|c, v| clamp_unit(gain[c] * v + offset[c]))
}

/// (c) Per-channel affine colour jitter.
pub fn color_diversity<T: Real>(img: &ImageTensor<T>, rng: &mut Rng, max_shift: f64) -> ImageTensor<T> {
    apply_color_diversity(img, &ColorDiversityParams::draw(rng, max_shift))
}
