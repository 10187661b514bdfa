use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{AugOp, AugParams, FasAugConfig};
use crate::error::{Error, Result};
use crate::image::{write_image, ImageTensor};
use crate::rng::{mix64, Rng};
use crate::sample::{AttackType, Label};

use super::manifest::{Manifest, ManifestRow};

/// Generator settings. Chains are strings of simulator letters applied in
/// order, e.g. `"de"` is colour distortion followed by SFC halftoning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub frames_per_subject: usize,
    /// Subject numbering starts here; lets two corpora share a directory.
    pub first_subject: usize,
    pub image_size: usize,
    pub sessions: usize,
    pub devices: usize,
    pub print_chains: Vec<String>,
    pub display_chains: Vec<String>,
    /// Standard deviation of the per-pixel sensor noise.
    pub noise: f64,
    /// Derived from the run's root seed; not part of the file form.
    #[serde(skip)]
    pub seed: u64,
    pub simulators: FasAugConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 20,
            frames_per_subject: 10,
            first_subject: 1,
            image_size: 32,
            sessions: 3,
            devices: 6,
            print_chains: vec!["de".into(), "df".into()],
            display_chains: vec!["gh".into(), "h".into()],
            noise: 0.01,
            seed: 0,
            simulators: generation_strength(),
        }
    }
}

/// Simulator ranges for producing attack images: stronger display
/// artefacts than the training-time augmentation defaults.
pub fn generation_strength() -> FasAugConfig {
    FasAugConfig {
        specular_intensity: [0.5, 0.9],
        moire_amplitude: [0.2, 0.35],
        moire_freq: [6.0, 14.0],
        ..FasAugConfig::default()
    }
}

pub fn parse_chain(chain: &str) -> Result<Vec<AugOp>> {
    chain
        .chars()
        .map(|c| {
            AugOp::from_letter(c.to_ascii_lowercase())
                .ok_or_else(|| Error::invalid(format!("`{c}` in chain `{chain}` is not a simulator letter a-h")))
        })
        .collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.frames_per_subject == 0 || self.image_size < 8 {
            return Err(Error::invalid("synthetic corpus needs subjects, frames and images of at least 8 px"));
        }
        if self.sessions == 0 || self.devices == 0 {
            return Err(Error::invalid("sessions and devices must be positive"));
        }
        for (kind, chains) in [("print", &self.print_chains), ("display", &self.display_chains)] {
            if chains.is_empty() {
                return Err(Error::invalid(format!("no {kind} chains")));
            }
            for c in chains.iter() {
                if parse_chain(c)?.is_empty() {
                    return Err(Error::invalid(format!("empty {kind} chain")));
                }
            }
        }
        self.simulators.validate()
    }
}

/// Per-subject appearance.
#[derive(Debug, Clone)]
struct Face {
    skin: [f64; 3],
    hair: [f64; 3],
    lips: [f64; 3],
    width: f64,
    height: f64,
    eye_gap: f64,
    hair_line: f64,
}

impl Face {
    fn draw(rng: &mut Rng) -> Self {
        let tone = rng.uniform(0.55, 1.05);
        let skin = [
            (0.92 + rng.uniform(-0.05, 0.05)) * tone,
            (0.70 + rng.uniform(-0.06, 0.06)) * tone,
            (0.56 + rng.uniform(-0.06, 0.06)) * tone,
        ];
        let h = rng.uniform(0.05, 0.45);
        Self {
            skin,
            hair: [h, h * rng.uniform(0.6, 0.9), h * rng.uniform(0.4, 0.8)],
            lips: [0.65 * tone + 0.1, 0.30 * tone, 0.30 * tone],
            width: rng.uniform(0.26, 0.33),
            height: rng.uniform(0.34, 0.41),
            eye_gap: rng.uniform(0.09, 0.13),
            hair_line: rng.uniform(0.10, 0.20),
        }
    }
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Coverage of the ellipse centred at `(cx, cy)`, anti-aliased over ~1 px.
fn ellipse(u: f64, v: f64, cx: f64, cy: f64, rx: f64, ry: f64, px: f64) -> f64 {
    let d = (((u - cx) / rx).powi(2) + ((v - cy) / ry).powi(2)).sqrt();
    1.0 - smoothstep(1.0 - px / rx.min(ry), 1.0 + px / rx.min(ry), d)
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// One live frame: background, hair, face, eyes, mouth, session lighting,
/// device colour response and sensor noise.
fn render_live(face: &Face, size: usize, session: usize, device: usize, noise: f64, rng: &mut Rng) -> ImageTensor<f64> {
    let px = 1.0 / size as f64;
    let (cx, cy) = (0.5 + rng.uniform(-0.04, 0.04), 0.54 + rng.uniform(-0.04, 0.04));
    let scale = rng.uniform(0.93, 1.07);
    let (rx, ry) = (face.width * scale, face.height * scale);
    let bg_seed = mix64(session as u64 * 31 + device as u64);
    let bg = [
        0.25 + 0.5 * ((bg_seed & 0xff) as f64 / 255.0),
        0.25 + 0.5 * (((bg_seed >> 8) & 0xff) as f64 / 255.0),
        0.25 + 0.5 * (((bg_seed >> 16) & 0xff) as f64 / 255.0),
    ];
    // Session: overall gain and a directional light; device: channel gains.
    let (gain, lx, ly) = match session % 3 {
        0 => (1.0, 0.0, -0.15),
        1 => (0.85, 0.35, 0.0),
        _ => (1.1, -0.25, 0.1),
    };
    let dev = mix64(0xd1ce ^ device as u64);
    let dgain = [
        1.0 + 0.08 * ((dev & 0xff) as f64 / 255.0 - 0.5),
        1.0 + 0.08 * (((dev >> 8) & 0xff) as f64 / 255.0 - 0.5),
        1.0 + 0.08 * (((dev >> 16) & 0xff) as f64 / 255.0 - 0.5),
    ];
    let mut noise_rng = rng.fork(7);
    let mut out = ImageTensor::filled(size, size, 0.0f64);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = ((x as f64 + 0.5) * px, (y as f64 + 0.5) * px);
            let mut c = mix(bg, [bg[0] * 0.7, bg[1] * 0.7, bg[2] * 0.7], v);
            let hair = ellipse(u, v, cx, cy - face.hair_line * 0.5, rx * 1.12, ry * 1.05, px);
            c = mix(c, face.hair, hair);
            let hair_edge = cy - ry + face.hair_line;
            let skin_cov = ellipse(u, v, cx, cy, rx, ry, px) * smoothstep(hair_edge - px, hair_edge + px, v);
            // Soft shading towards the face boundary.
            let r = (((u - cx) / rx).powi(2) + ((v - cy) / ry).powi(2)).sqrt().min(1.0);
            let shade = 1.0 - 0.18 * r * r;
            let skin = [face.skin[0] * shade, face.skin[1] * shade, face.skin[2] * shade];
            c = mix(c, skin, skin_cov);
            for side in [-1.0, 1.0] {
                let e = ellipse(u, v, cx + side * face.eye_gap * scale, cy - 0.07 * scale, 0.045 * scale, 0.028 * scale, px);
                c = mix(c, [0.08, 0.06, 0.06], e);
            }
            let m = ellipse(u, v, cx, cy + 0.19 * scale, 0.09 * scale, 0.028 * scale, px);
            c = mix(c, face.lips, m);
            let nose = ellipse(u, v, cx + 0.01, cy + 0.06 * scale, 0.025 * scale, 0.05 * scale, px);
            c = mix(c, [skin[0] * 0.85, skin[1] * 0.85, skin[2] * 0.85], nose * 0.6);
            let light = gain * (1.0 + lx * (u - 0.5) + ly * (v - 0.5));
            for ch in 0..3 {
                let val = c[ch] * light * dgain[ch] + noise * noise_rng.normal();
                out.set(y, x, ch, val.clamp(0.0, 1.0));
            }
        }
    }
    out
}

fn apply_chain(img: &ImageTensor<f64>, chain: &[AugOp], cfg: &FasAugConfig, rng: &mut Rng) -> Result<ImageTensor<f64>> {
    let mut cur = img.clone();
    for &op in chain {
        cur = AugParams::draw(op, cfg, rng).apply(&cur)?;
    }
    Ok(cur)
}

/// Generated corpus held in memory, in manifest row order.
pub fn synth_images(cfg: &SynthConfig) -> Result<Vec<(ManifestRow, ImageTensor<f64>)>> {
    cfg.validate()?;
    let prints: Vec<Vec<AugOp>> = cfg.print_chains.iter().map(|c| parse_chain(c)).collect::<Result<_>>()?;
    let displays: Vec<Vec<AugOp>> = cfg.display_chains.iter().map(|c| parse_chain(c)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.n_subjects)
        .flat_map(|s| (0..cfg.frames_per_subject).map(move |f| (s + cfg.first_subject, f)))
        .collect();
    let per_frame: Vec<Result<Vec<(ManifestRow, ImageTensor<f64>)>>> = jobs
        .par_iter()
        .map(|&(subject, frame)| {
            let face = Face::draw(&mut Rng::for_item(cfg.seed, mix64(subject as u64)));
            let mut rng = Rng::for_item(cfg.seed, mix64(subject as u64) ^ mix64(0xf00 + frame as u64));
            let session = 1 + frame % cfg.sessions;
            let device = 1 + (subject + frame) % cfg.devices;
            let live = render_live(&face, cfg.image_size, session, device, cfg.noise, &mut rng);
            let print = apply_chain(&live, &prints[rng.below(prints.len())], &cfg.simulators, &mut rng)?;
            let display = apply_chain(&live, &displays[rng.below(displays.len())], &cfg.simulators, &mut rng)?;
            let row = |kind: &str, label: Label, attack: AttackType| ManifestRow {
                path: format!("images/{kind}_{subject:03}_{frame:03}.png"),
                label,
                attack_type: attack,
                subject_id: format!("{subject:03}"),
                session: session.to_string(),
                device: device.to_string(),
                video_id: format!("{subject:03}_{kind}"),
                frame_index: frame as u32,
            };
            Ok(vec![
                (row("live", Label::Live, AttackType::None), live),
                (row("print", Label::Spoof, AttackType::Print), print),
                (row("display", Label::Spoof, AttackType::Display), display),
            ])
        })
        .collect();
    let mut out = Vec::with_capacity(jobs.len() * 3);
    for v in per_frame {
        out.extend(v?);
    }
    Ok(out)
}

/// Writes the corpus as PNGs under `out_dir/images` plus `out_dir/manifest.csv`.
pub fn synth_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    let items = synth_images(cfg)?;
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images).map_err(Error::at_path(&images))?;
    items
        .par_iter()
        .map(|(row, img)| write_image(img, &out_dir.join(&row.path)))
        .collect::<Result<Vec<()>>>()?;
    let manifest = Manifest::new(out_dir, items.into_iter().map(|(r, _)| r).collect())?;
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_labels() {
        let cfg = SynthConfig {
            n_subjects: 2,
            frames_per_subject: 4,
            ..Default::default()
        };
        let items = synth_images(&cfg).unwrap();
        let live = items.iter().filter(|(r, _)| r.label == Label::Live).count();
        assert_eq!((live, items.len() - live), (8, 16));
        assert!(items.iter().all(|(r, _)| r.attack_type.consistent_with(r.label)));
        assert!(items.iter().all(|(_, i)| i.in_unit_range() && i.height() == 32));
    }

    #[test]
    fn chains_parse() {
        assert_eq!(parse_chain("dE").unwrap(), vec![AugOp::ColorDistortion, AugOp::HalftoneSfc]);
        assert!(parse_chain("dz").is_err());
        let bad = SynthConfig {
            print_chains: vec![],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
