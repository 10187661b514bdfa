//! Display-attack simulators: specular glare and moiré interference.

use serde::{Deserialize, Serialize};

use crate::image::{clamp_unit, ImageTensor, CHANNELS};
use crate::rng::Rng;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecularParams {
    pub intensity: f64,
    /// Highlight centre as a fraction of height/width.
    pub center: [f64; 2],
    /// Semi-axes (standard deviations) as a fraction of the image size.
    pub sigma: [f64; 2],
    pub angle: f64,
}

impl SpecularParams {
    pub fn draw(rng: &mut Rng, intensity: f64) -> Self {
        Self {
            intensity,
            center: [rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)],
            sigma: [rng.uniform(0.08, 0.3), rng.uniform(0.08, 0.3)],
            angle: rng.uniform(0.0, std::f64::consts::PI),
        }
    }
}

pub fn apply_specular<T: Real>(img: &ImageTensor<T>, params: &SpecularParams) -> ImageTensor<T> {
    let (h, w) = (img.height() as f64, img.width() as f64);
    let size = h.max(w);
    let (cy, cx) = (params.center[0] * h, params.center[1] * w);
    let (sa, sb) = (params.sigma[0] * size, params.sigma[1] * size);
    let (sin, cos) = params.angle.sin_cos();
    let intensity = T::lit(params.intensity);
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            let g = T::lit((-(u * u) / (2.0 * sa * sa) - (v * v) / (2.0 * sb * sb)).exp());
            for c in 0..CHANNELS {
                out.set(y, x, c, clamp_unit(img.get(y, x, c) + intensity * g));
            }
        }
    }
    out
}

/// (g) Additive elliptical Gaussian highlight.
pub fn specular_reflection<T: Real>(img: &ImageTensor<T>, rng: &mut Rng, intensity: f64) -> ImageTensor<T> {
    apply_specular(img, &SpecularParams::draw(rng, intensity))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoireParams {
    pub amplitude: f64,
    /// Integer cycles per image along x and y.
    pub freq_x: i32,
    pub freq_y: i32,
    pub phase: f64,
}

impl MoireParams {
    pub fn draw(rng: &mut Rng, amplitude: f64, freq_range: [f64; 2]) -> Self {
        let f = rng.uniform(freq_range[0], freq_range[1]);
        let theta = rng.uniform(0.0, std::f64::consts::PI);
        let mut freq_x = (f * theta.cos()).round() as i32;
        let freq_y = (f * theta.sin()).round() as i32;
        if freq_x == 0 && freq_y == 0 {
            freq_x = 1;
        }
        Self {
            amplitude,
            freq_x,
            freq_y,
            phase: rng.uniform(0.0, std::f64::consts::TAU),
        }
    }
}

pub fn apply_moire<T: Real>(img: &ImageTensor<T>, params: &MoireParams) -> ImageTensor<T> {
    let (h, w) = (img.height() as f64, img.width() as f64);
    let a = T::lit(params.amplitude);
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let arg = std::f64::consts::TAU
                * (params.freq_x as f64 * x as f64 / w + params.freq_y as f64 * y as f64 / h)
                + params.phase;
            let m = T::one() + a * T::lit(arg.sin());
            for c in 0..CHANNELS {
                out.set(y, x, c, clamp_unit(img.get(y, x, c) * m));
            }
        }
    }
    out
}

/// (h) Multiplicative sinusoidal interference fringes.
pub fn moire<T: Real>(img: &ImageTensor<T>, rng: &mut Rng, amplitude: f64, freq_range: [f64; 2]) -> ImageTensor<T> {
    apply_moire(img, &MoireParams::draw(rng, amplitude, freq_range))
}
