//! Presentation-attack augmentations.
//!
//! Eight artifact simulators in three families (capture noise, print, display)
//! with their label rewrites, plus live-patch masking for spoof images.

mod bluenoise;
mod display;
mod photo;
mod print;

use serde::{Deserialize, Serialize};

pub use bluenoise::{blue_noise_mask, BlueNoiseMask, MASK_SIZE};
pub use display::{apply_moire, apply_specular, moire, specular_reflection, MoireParams, SpecularParams};
pub use photo::{
    apply_color_diversity, apply_low_resolution, apply_tremble, color_diversity, hand_tremble, low_resolution,
    ColorDiversityParams, LowResParams, TrembleParams,
};
pub use print::{
    apply_color_distortion, apply_halftone_bn, box_blur, color_distortion, halftone_bn, halftone_sfc,
    hilbert_d2xy, ColorDistortionParams, HalftoneBnParams,
};

use crate::error::{Error, Result};
use crate::image::{ColorSpace, ImageTensor, CHANNELS};
use crate::rng::Rng;
use crate::sample::{AttackType, Label, PatchLabels, Sample};
use crate::scalar::Real;

/// The eight simulators, in their conventional (a)–(h) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AugOp {
    #[serde(rename = "A_TREMBLE")]
    HandTremble,
    #[serde(rename = "B_LOWRES")]
    LowResolution,
    #[serde(rename = "C_COLORDIV")]
    ColorDiversity,
    #[serde(rename = "D_COLORDIST")]
    ColorDistortion,
    #[serde(rename = "E_HALFTONE_SFC")]
    HalftoneSfc,
    #[serde(rename = "F_HALFTONE_BN")]
    HalftoneBn,
    #[serde(rename = "G_SPECULAR")]
    Specular,
    #[serde(rename = "H_MOIRE")]
    Moire,
}

/// Which family an op belongs to decides the label rewrite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpFamily {
    Capture,
    Print,
    Display,
}

impl AugOp {
    pub const ALL: [AugOp; 8] = [
        AugOp::HandTremble,
        AugOp::LowResolution,
        AugOp::ColorDiversity,
        AugOp::ColorDistortion,
        AugOp::HalftoneSfc,
        AugOp::HalftoneBn,
        AugOp::Specular,
        AugOp::Moire,
    ];

    pub fn letter(self) -> char {
        (b'a' + AugOp::ALL.iter().position(|&o| o == self).unwrap() as u8) as char
    }

    pub fn from_letter(c: char) -> Option<Self> {
        let i = (c.to_ascii_lowercase() as u8).checked_sub(b'a')? as usize;
        AugOp::ALL.get(i).copied()
    }

    pub fn family(self) -> OpFamily {
        match self {
            AugOp::HandTremble | AugOp::LowResolution | AugOp::ColorDiversity => OpFamily::Capture,
            AugOp::ColorDistortion | AugOp::HalftoneSfc | AugOp::HalftoneBn => OpFamily::Print,
            AugOp::Specular | AugOp::Moire => OpFamily::Display,
        }
    }

    /// Label and attack type after applying this op to a sample labelled
    /// `(label, attack)`.
    pub fn rewrite(self, label: Label, attack: AttackType) -> (Label, AttackType) {
        match self.family() {
            OpFamily::Capture => (label, attack),
            OpFamily::Print => (Label::Spoof, AttackType::SynthPrint),
            OpFamily::Display => (Label::Spoof, AttackType::SynthDisplay),
        }
    }
}

/// Parameter ranges for the simulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FasAugConfig {
    /// Inclusive range of motion-blur half-lengths.
    pub tremble_strength: [u32; 2],
    pub lowres_factors: Vec<u32>,
    pub color_max_shift: f64,
    pub gamma_range: [f64; 2],
    pub halftone_cell: usize,
    pub specular_intensity: [f64; 2],
    pub moire_amplitude: [f64; 2],
    /// Cycles per image.
    pub moire_freq: [f64; 2],
}

impl Default for FasAugConfig {
    fn default() -> Self {
        Self {
            tremble_strength: [1, 3],
            lowres_factors: vec![2, 3, 4],
            color_max_shift: 0.1,
            gamma_range: [0.6, 1.6],
            halftone_cell: 2,
            specular_intensity: [0.3, 0.8],
            moire_amplitude: [0.05, 0.2],
            moire_freq: [3.0, 10.0],
        }
    }
}

impl FasAugConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0] <= r[1] && r[0].is_finite() && r[1].is_finite();
        if self.tremble_strength[0] > self.tremble_strength[1] {
            return Err(Error::invalid("tremble_strength range is reversed"));
        }
        if self.lowres_factors.is_empty() || self.lowres_factors.contains(&0) {
            return Err(Error::invalid("lowres_factors must be non-empty and positive"));
        }
        if !(0.0..=1.0).contains(&self.color_max_shift) {
            return Err(Error::invalid("color_max_shift must lie in [0, 1]"));
        }
        if !ordered(self.gamma_range) || self.gamma_range[0] <= 0.0 {
            return Err(Error::invalid("gamma_range must be positive and ordered"));
        }
        if !ordered(self.specular_intensity) || self.specular_intensity[0] < 0.0 {
            return Err(Error::invalid("specular_intensity must be non-negative and ordered"));
        }
        if !ordered(self.moire_amplitude) || self.moire_amplitude[0] < 0.0 || self.moire_amplitude[1] > 1.0 {
            return Err(Error::invalid("moire_amplitude must lie in [0, 1] and be ordered"));
        }
        if !ordered(self.moire_freq) || self.moire_freq[0] < 0.0 {
            return Err(Error::invalid("moire_freq must be non-negative and ordered"));
        }
        Ok(())
    }
}

/// The concrete parameters an op was run with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugParams {
    None,
    Tremble(TrembleParams),
    LowRes(LowResParams),
    ColorDiversity(ColorDiversityParams),
    ColorDistortion(ColorDistortionParams),
    HalftoneSfc { cell: usize },
    HalftoneBn(HalftoneBnParams),
    Specular(SpecularParams),
    Moire(MoireParams),
    Pda { p_patch: f64, replaced: usize, patches: usize },
}

impl AugParams {
    /// Draws parameters for `op` from the configured ranges.
    pub fn draw(op: AugOp, cfg: &FasAugConfig, rng: &mut Rng) -> Self {
        match op {
            AugOp::HandTremble => {
                let s = rng.int_in(cfg.tremble_strength[0] as i64, cfg.tremble_strength[1] as i64) as u32;
                AugParams::Tremble(TrembleParams::draw(rng, s))
            }
            AugOp::LowResolution => {
                let factor = cfg.lowres_factors[rng.below(cfg.lowres_factors.len())];
                AugParams::LowRes(LowResParams { factor })
            }
            AugOp::ColorDiversity => AugParams::ColorDiversity(ColorDiversityParams::draw(rng, cfg.color_max_shift)),
            AugOp::ColorDistortion => AugParams::ColorDistortion(ColorDistortionParams::draw(rng, cfg.gamma_range)),
            AugOp::HalftoneSfc => AugParams::HalftoneSfc {
                cell: cfg.halftone_cell,
            },
            AugOp::HalftoneBn => AugParams::HalftoneBn(HalftoneBnParams::draw(rng, cfg.halftone_cell)),
            AugOp::Specular => {
                let intensity = rng.uniform(cfg.specular_intensity[0], cfg.specular_intensity[1]);
                AugParams::Specular(SpecularParams::draw(rng, intensity))
            }
            AugOp::Moire => {
                let amplitude = rng.uniform(cfg.moire_amplitude[0], cfg.moire_amplitude[1]);
                AugParams::Moire(MoireParams::draw(rng, amplitude, cfg.moire_freq))
            }
        }
    }

    /// Runs the simulator these parameters belong to.
    pub fn apply<T: Real>(&self, img: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        Ok(match self {
            AugParams::None | AugParams::Pda { .. } => img.clone(),
            AugParams::Tremble(p) => apply_tremble(img, p),
            AugParams::LowRes(p) => apply_low_resolution(img, p)?,
            AugParams::ColorDiversity(p) => apply_color_diversity(img, p),
            AugParams::ColorDistortion(p) => apply_color_distortion(img, p),
            AugParams::HalftoneSfc { cell } => halftone_sfc(img, *cell),
            AugParams::HalftoneBn(p) => apply_halftone_bn(img, p),
            AugParams::Specular(p) => apply_specular(img, p),
            AugParams::Moire(p) => apply_moire(img, p),
        })
    }
}

/// Result of one augmentation decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugOutcome<T> {
    #[serde(skip)]
    pub image: ImageTensor<T>,
    pub label_before: Label,
    pub label_after: Label,
    pub attack_after: AttackType,
    /// `None` when no simulator fired (serialized as `"NONE"`).
    #[serde(serialize_with = "serialize_op")]
    pub op_applied: Option<AugOp>,
    pub params_used: AugParams,
}

fn serialize_op<S: serde::Serializer>(op: &Option<AugOp>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match op {
        Some(op) => op.serialize(s),
        None => s.serialize_str("NONE"),
    }
}

/// Applies one simulator with explicit parameters and rewrites the labels.
pub fn apply_op<T: Real>(sample: &Sample<T>, op: AugOp, params: AugParams) -> Result<AugOutcome<T>> {
    let image = params.apply(&sample.image)?;
    let (label_after, attack_after) = op.rewrite(sample.label, sample.attack);
    Ok(AugOutcome {
        image,
        label_before: sample.label,
        label_after,
        attack_after,
        op_applied: Some(op),
        params_used: params,
    })
}

/// With probability `p`, picks one of the eight simulators uniformly and
/// applies it; otherwise returns the sample unchanged with `op_applied = None`.
pub fn apply_fas_aug<T: Real>(
    sample: &Sample<T>,
    rng: &mut Rng,
    p: f64,
    cfg: &FasAugConfig,
) -> Result<AugOutcome<T>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("augmentation probability {p} outside [0, 1]")));
    }
    if sample.image.color_space() != ColorSpace::SrgbUnit {
        return Err(Error::contract("augmentations expect sRGB images in [0, 1]"));
    }
    if !rng.bernoulli(p) {
        return Ok(AugOutcome {
            image: sample.image.clone(),
            label_before: sample.label,
            label_after: sample.label,
            attack_after: sample.attack,
            op_applied: None,
            params_used: AugParams::None,
        });
    }
    let op = AugOp::ALL[rng.below(AugOp::ALL.len())];
    let params = AugParams::draw(op, cfg, rng);
    apply_op(sample, op, params)
}

/// Live-patch masking: every `patch_size` patch of the spoof image is
/// replaced by the co-located live patch with probability `p_patch`.
/// Replaced patches are labelled live, kept ones spoof; the image stays spoof.
pub fn apply_pda<T: Real>(
    spoof: &Sample<T>,
    live: &Sample<T>,
    rng: &mut Rng,
    p_patch: f64,
    patch_size: usize,
) -> Result<Sample<T>> {
    if spoof.label != Label::Spoof {
        return Err(Error::contract(format!(
            "patch masking applies to spoof images only; `{}` is live",
            spoof.id
        )));
    }
    if live.label != Label::Live {
        return Err(Error::contract(format!("patch donor `{}` is not live", live.id)));
    }
    if !(0.0..=1.0).contains(&p_patch) {
        return Err(Error::invalid(format!("patch probability {p_patch} outside [0, 1]")));
    }
    if !spoof.image.same_shape(&live.image) {
        return Err(Error::invalid(format!(
            "size mismatch: spoof {}x{} vs live {}x{}",
            spoof.image.height(),
            spoof.image.width(),
            live.image.height(),
            live.image.width()
        )));
    }
    let (h, w) = (spoof.image.height(), spoof.image.width());
    if patch_size == 0 || h != w || h % patch_size != 0 {
        return Err(Error::invalid(format!(
            "patch size {patch_size} does not tile a {h}x{w} image"
        )));
    }
    let grid = h / patch_size;
    let mut data = spoof.image.data().to_vec();
    let mut labels = Vec::with_capacity(grid * grid);
    for gy in 0..grid {
        for gx in 0..grid {
            if rng.bernoulli(p_patch) {
                labels.push(Label::Live);
                for y in gy * patch_size..(gy + 1) * patch_size {
                    let row = (y * w + gx * patch_size) * CHANNELS;
                    let span = row..row + patch_size * CHANNELS;
                    data[span.clone()].copy_from_slice(&live.image.data()[span]);
                }
            } else {
                labels.push(Label::Spoof);
            }
        }
    }
    let mut out = spoof.clone();
    out.image = ImageTensor::new(h, w, data, spoof.image.color_space())?;
    out.patch_labels = Some(PatchLabels { grid, labels });
    Ok(out)
}
