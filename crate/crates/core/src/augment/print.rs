//! Print-attack simulators: printer tone curves and two halftoning schemes.

use serde::{Deserialize, Serialize};

use super::bluenoise::blue_noise_mask;
use crate::image::{clamp_unit, ImageTensor, CHANNELS};
use crate::rng::Rng;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorDistortionParams {
    pub gamma: [f64; 3],
}

impl ColorDistortionParams {
    pub fn draw(rng: &mut Rng, gamma_range: [f64; 2]) -> Self {
        let mut gamma = [1.0; 3];
        for g in gamma.iter_mut() {
            *g = rng.uniform(gamma_range[0], gamma_range[1]);
        }
        Self { gamma }
    }
}

pub fn apply_color_distortion<T: Real>(img: &ImageTensor<T>, params: &ColorDistortionParams) -> ImageTensor<T> {
    let gamma = params.gamma.map(T::lit);
    img.map_channels(|c, v| clamp_unit(v.powf(gamma[c])))
}

/// (d) Per-channel gamma curve, `out = in^γ_c`.
pub fn color_distortion<T: Real>(img: &ImageTensor<T>, rng: &mut Rng, gamma_range: [f64; 2]) -> ImageTensor<T> {
    apply_color_distortion(img, &ColorDistortionParams::draw(rng, gamma_range))
}

/// Hilbert-curve index `d` to `(x, y)` on an `n × n` grid (`n` a power of two).
pub fn hilbert_d2xy(n: usize, d: usize) -> (usize, usize) {
    let (mut x, mut y) = (0usize, 0usize);
    let mut t = d;
    let mut s = 1;
    while s < n {
        let rx = 1 & (t / 2);
        let ry = 1 & (t ^ rx);
        if ry == 0 {
            if rx == 1 {
                x = s - 1 - x;
                y = s - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        x += s * rx;
        y += s * ry;
        t /= 4;
        s *= 2;
    }
    (x, y)
}

/// Average over a `cell × cell` window, clamped at the borders.
pub fn box_blur<T: Real>(img: &ImageTensor<T>, cell: usize) -> ImageTensor<T> {
    if cell <= 1 {
        return img.clone();
    }
    let lo = (cell as i64 - 1) / 2;
    let hi = cell as i64 / 2;
    let (h, w) = (img.height() as i64, img.width() as i64);
    let inv = T::one() / T::from_usize(cell * cell).unwrap();
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut acc = T::zero();
                for dy in -lo..=hi {
                    let yy = (y + dy).clamp(0, h - 1) as usize;
                    for dx in -lo..=hi {
                        let xx = (x + dx).clamp(0, w - 1) as usize;
                        acc += img.get(yy, xx, c);
                    }
                }
                out.set(y as usize, x as usize, c, clamp_unit(acc * inv));
            }
        }
    }
    out
}

/// (e) Error diffusion along a Hilbert curve, then a `cell` box blur.
/// `cell == 0` leaves the image untouched.
pub fn halftone_sfc<T: Real>(img: &ImageTensor<T>, cell: usize) -> ImageTensor<T> {
    if cell == 0 {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    let n = h.max(w).next_power_of_two();
    let half = T::lit(0.5);
    let mut binary = img.clone();
    for c in 0..CHANNELS {
        let mut err = T::zero();
        for d in 0..n * n {
            let (x, y) = hilbert_d2xy(n, d);
            if x >= w || y >= h {
                continue;
            }
            let v = img.get(y, x, c) + err;
            let q = if v >= half { T::one() } else { T::zero() };
            err = v - q;
            binary.set(y, x, c, q);
        }
    }
    box_blur(&binary, cell)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalftoneBnParams {
    pub cell: usize,
    pub offset_y: usize,
    pub offset_x: usize,
}

impl HalftoneBnParams {
    pub fn draw(rng: &mut Rng, cell: usize) -> Self {
        let size = blue_noise_mask().size();
        Self {
            cell,
            offset_y: rng.below(size),
            offset_x: rng.below(size),
        }
    }
}

pub fn apply_halftone_bn<T: Real>(img: &ImageTensor<T>, params: &HalftoneBnParams) -> ImageTensor<T> {
    if params.cell == 0 {
        return img.clone();
    }
    let mask = blue_noise_mask();
    let mut binary = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let t = T::lit(mask.threshold(y + params.offset_y, x + params.offset_x));
            for c in 0..CHANNELS {
                let q = if img.get(y, x, c) > t { T::one() } else { T::zero() };
                binary.set(y, x, c, q);
            }
        }
    }
    box_blur(&binary, params.cell)
}

/// (f) Blue-noise ordered dithering at a random mask offset, then a box blur.
pub fn halftone_bn<T: Real>(img: &ImageTensor<T>, rng: &mut Rng, cell: usize) -> ImageTensor<T> {
    apply_halftone_bn(img, &HalftoneBnParams::draw(rng, cell))
}
