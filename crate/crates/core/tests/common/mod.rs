//! Independent brute-force oracles shared by the property suites and the
//! acceptance target.
#![allow(dead_code)]

use std::collections::BTreeMap;

use fasvit::augment::{
    AugOp, AugParams, ColorDistortionParams, ColorDiversityParams, FasAugConfig, HalftoneBnParams, LowResParams,
    MoireParams, SpecularParams, TrembleParams,
};
use fasvit::data::{synth_images, SynthConfig};
use fasvit::image::ImageTensor;
use fasvit::rng::Rng;
use fasvit::sample::{AttackType, Label};
use fasvit::scoring::ScoredSample;
use sha2::{Digest, Sha256};

pub struct MetricsOracle {
    pub per_attack: BTreeMap<AttackType, f64>,
    pub apcer: f64,
    pub bpcer: f64,
    pub acer: f64,
}

/// Counts per sample with no sorting or shortcuts.
pub fn metrics_oracle(samples: &[ScoredSample], theta: f64) -> MetricsOracle {
    let mut per_attack = BTreeMap::new();
    for t in [AttackType::Print, AttackType::Display, AttackType::SynthPrint, AttackType::SynthDisplay] {
        let of_type: Vec<&ScoredSample> = samples.iter().filter(|s| s.attack == t).collect();
        if of_type.is_empty() {
            continue;
        }
        let mut accepted = 0usize;
        for s in &of_type {
            if s.score >= theta {
                accepted += 1;
            }
        }
        per_attack.insert(t, accepted as f64 / of_type.len() as f64);
    }
    let live: Vec<&ScoredSample> = samples.iter().filter(|s| s.label == Label::Live).collect();
    let mut rejected = 0usize;
    for s in &live {
        if s.score < theta {
            rejected += 1;
        }
    }
    let apcer = per_attack.values().cloned().fold(0.0, f64::max);
    let bpcer = rejected as f64 / live.len() as f64;
    MetricsOracle {
        per_attack,
        apcer,
        bpcer,
        acer: (apcer + bpcer) / 2.0,
    }
}

/// `(θ, FAR, FRR)` at every distinct observed score, by direct counting.
pub fn curve_oracle(live: &[f64], spoof: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut thetas: Vec<f64> = Vec::new();
    for &s in live.iter().chain(spoof) {
        if !thetas.contains(&s) {
            thetas.push(s);
        }
    }
    thetas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thetas
        .into_iter()
        .map(|t| {
            let far = spoof.iter().filter(|&&s| s >= t).count() as f64 / spoof.len() as f64;
            let frr = live.iter().filter(|&&s| s < t).count() as f64 / live.len() as f64;
            (t, far, frr)
        })
        .collect()
}

/// Exhaustive sweep over observed scores and neighbour midpoints, minimizing
/// |FAR − FRR| in exact rational arithmetic; ties go to smaller FAR, then
/// smaller θ.
pub fn threshold_oracle(live: &[f64], spoof: &[f64]) -> f64 {
    let mut distinct: Vec<f64> = live.iter().chain(spoof).cloned().collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let mut candidates = distinct.clone();
    for w in distinct.windows(2) {
        candidates.push(w[0] + (w[1] - w[0]) / 2.0);
    }
    let (nl, ns) = (live.len() as i128, spoof.len() as i128);
    let mut best: Option<(i128, i128, f64)> = None;
    for t in candidates {
        let a = spoof.iter().filter(|&&s| s >= t).count() as i128;
        let r = live.iter().filter(|&&s| s < t).count() as i128;
        // FAR − FRR = (a·nl − r·ns) / (ns·nl).
        let gap = (a * nl - r * ns).abs();
        let better = best.is_none_or(|(g, fa, th)| (gap, a) < (g, fa) || ((gap, a) == (g, fa) && t < th));
        if better {
            best = Some((gap, a, t));
        }
    }
    best.unwrap().2
}

/// Max cosine over rows and its first argmax, by plain loops on the raw
/// (unnormalized) vectors.
pub fn max_cosine_oracle(rows: &[Vec<f64>], q: &[f64]) -> (f64, usize) {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (i, r) in rows.iter().enumerate() {
        let mut dot = 0.0;
        for k in 0..q.len() {
            dot += r[k] * q[k];
        }
        let c = dot / (norm(r) * norm(q));
        if c > best.0 {
            best = (c, i);
        }
    }
    best
}

/// Scores on a coarse grid so that ties between and within classes occur.
pub fn random_scores(rng: &mut Rng, n: usize, levels: usize) -> Vec<f64> {
    (0..n).map(|_| rng.below(levels) as f64 / levels as f64 * 2.0 - 1.0).collect()
}

/// A random labelled score set with at least one live and one spoof sample.
/// Most sets use a coarse grid so that ties occur; the rest are continuous.
pub fn random_scored(rng: &mut Rng, max_len: usize) -> Vec<ScoredSample> {
    let n = 2 + rng.below(max_len - 1);
    let levels = if rng.bernoulli(0.25) { 1 << 30 } else { 1 + rng.below(50) };
    let attacks = [AttackType::Print, AttackType::Display, AttackType::SynthPrint, AttackType::SynthDisplay];
    let mut out: Vec<ScoredSample> = (0..n)
        .map(|i| {
            let live = rng.bernoulli(0.4);
            ScoredSample {
                sample_id: format!("s{i}"),
                label: if live { Label::Live } else { Label::Spoof },
                attack: if live { AttackType::None } else { attacks[rng.below(attacks.len())] },
                score: rng.below(levels + 1) as f64 / levels as f64 * 2.0 - 1.0,
                nearest_reference: String::new(),
                degenerate: false,
            }
        })
        .collect();
    out[0].label = Label::Live;
    out[0].attack = AttackType::None;
    out[1].label = Label::Spoof;
    out[1].attack = AttackType::Print;
    out
}

/// The hand-counted example: print 1 of 4 accepted, display 1 of 5
/// accepted, 2 of 10 live rejected, at θ = 0.5.
pub fn worked_example() -> Vec<ScoredSample> {
    let mk = |i: usize, label, attack, score| ScoredSample {
        sample_id: format!("w{i}"),
        label,
        attack,
        score,
        nearest_reference: String::new(),
        degenerate: false,
    };
    let mut v = Vec::new();
    for i in 0..4 {
        v.push(mk(v.len(), Label::Spoof, AttackType::Print, if i == 0 { 0.9 } else { 0.1 }));
    }
    for i in 0..5 {
        v.push(mk(v.len(), Label::Spoof, AttackType::Display, if i == 0 { 0.7 } else { 0.2 }));
    }
    for i in 0..10 {
        v.push(mk(v.len(), Label::Live, AttackType::None, if i < 2 { 0.3 } else { 0.8 }));
    }
    v
}

/// First live frame of a one-subject synthetic corpus.
pub fn face() -> ImageTensor<f64> {
    let cfg = SynthConfig { n_subjects: 1, frames_per_subject: 1, ..SynthConfig::default() };
    synth_images(&cfg).unwrap().remove(0).1
}

pub fn noise_image(seed: u64, side: usize) -> ImageTensor<f64> {
    let mut rng = Rng::new(seed);
    ImageTensor::from_fn(side, side, |_, _, _| rng.next_f64())
}

/// Parameters at which each simulator must leave the image untouched.
pub fn zero_strength(op: AugOp) -> AugParams {
    match op {
        AugOp::HandTremble => AugParams::Tremble(TrembleParams { strength: 0, angle: 0.7 }),
        AugOp::LowResolution => AugParams::LowRes(LowResParams { factor: 1 }),
        AugOp::ColorDiversity => AugParams::ColorDiversity(ColorDiversityParams { gain: [1.0; 3], offset: [0.0; 3] }),
        AugOp::ColorDistortion => AugParams::ColorDistortion(ColorDistortionParams { gamma: [1.0; 3] }),
        AugOp::HalftoneSfc => AugParams::HalftoneSfc { cell: 0 },
        AugOp::HalftoneBn => AugParams::HalftoneBn(HalftoneBnParams { cell: 0, offset_y: 5, offset_x: 9 }),
        AugOp::Specular => AugParams::Specular(SpecularParams {
            intensity: 0.0,
            center: [0.4, 0.6],
            sigma: [0.2, 0.1],
            angle: 0.3,
        }),
        AugOp::Moire => AugParams::Moire(MoireParams { amplitude: 0.0, freq_x: 7, freq_y: -3, phase: 1.1 }),
    }
}

/// sha256 of the 8-bit quantized output; 8-bit codes keep the hash
/// insensitive to last-ulp differences in transcendental functions.
fn image_hash(img: &ImageTensor<f64>) -> String {
    let bytes: Vec<u8> = img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn golden_outputs() -> Vec<(char, String)> {
    let img = face();
    let cfg = FasAugConfig::default();
    AugOp::ALL
        .iter()
        .map(|&op| {
            let params = AugParams::draw(op, &cfg, &mut Rng::new(1000 + op.letter() as u64));
            (op.letter(), image_hash(&params.apply(&img).unwrap()))
        })
        .collect()
}

/// Recorded from this implementation; a mismatch means a simulator's
/// output changed.
pub const GOLDEN: [(char, &str); 8] = [
    ('a', "57486e193c3e6235d1b47ddee7cf7da9645ae8ce88a7052d6d9905626624c4a9"),
    ('b', "ae196fb4c537f67d749739d0845ba60b8e8b0c82030e93a3af0997c2136ab779"),
    ('c', "ef237b6536bd49048a0ca6a539547f45b8133b9b46488c9955ccdec5bcca7371"),
    ('d', "36cc9053bddacd13c75d18e9d75fa0dbc8f9d57b0cebb176d5b6f9299f86ac36"),
    ('e', "da293a0b1bb266ded97890ff017c1ff3cd1127520ed44c4c548af4731b6997a5"),
    ('f', "a1f06044420d121475bb282083c1079a0921d39f4593d0dd87fc61df67c5528e"),
    ('g', "46bbc964646d94fa0e7b1bec652ab64c1ff6391ab7e1d980396ab6f2d36f26f7"),
    ('h', "947f7403a2b5b4872de06c4dbea8d53a366970f3dd45dbc9a1d3c2c557517d1b"),
];
