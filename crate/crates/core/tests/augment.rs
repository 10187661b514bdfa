mod common;

use common::{face, golden_outputs, noise_image, zero_strength, GOLDEN};
use fasvit::augment::{apply_fas_aug, apply_op, apply_pda, AugOp, AugParams, FasAugConfig, OpFamily};
use fasvit::image::CHANNELS;
use fasvit::rng::Rng;
use fasvit::sample::{AttackType, Label, Sample};

const STARTS: [(Label, AttackType); 5] = [
    (Label::Live, AttackType::None),
    (Label::Spoof, AttackType::Print),
    (Label::Spoof, AttackType::Display),
    (Label::Spoof, AttackType::SynthPrint),
    (Label::Spoof, AttackType::SynthDisplay),
];

#[test]
fn label_rules_hold_for_every_op_and_starting_label() {
    let img = face();
    let cfg = FasAugConfig::default();
    let mut rng = Rng::new(31);
    for op in AugOp::ALL {
        for (label, attack) in STARTS {
            let s = Sample::new("s", img.clone(), label, attack);
            for _ in 0..5 {
                let out = apply_op(&s, op, AugParams::draw(op, &cfg, &mut rng)).unwrap();
                assert_eq!(out.label_before, label);
                let want = match op.letter() {
                    'a'..='c' => (label, attack),
                    'd'..='f' => (Label::Spoof, AttackType::SynthPrint),
                    _ => (Label::Spoof, AttackType::SynthDisplay),
                };
                assert_eq!((out.label_after, out.attack_after), want, "op {} from {label}/{attack}", op.letter());
                assert!(out.image.in_unit_range());
            }
        }
    }
    let families: String = AugOp::ALL
        .iter()
        .map(|o| match o.family() {
            OpFamily::Capture => 'c',
            OpFamily::Print => 'p',
            OpFamily::Display => 'd',
        })
        .collect();
    assert_eq!(families, "cccpppdd");
}

#[test]
fn random_application_follows_the_same_rules() {
    let img = face();
    let cfg = FasAugConfig::default();
    for seed in 0..400 {
        let (label, attack) = STARTS[seed as usize % STARTS.len()];
        let s = Sample::new("s", img.clone(), label, attack);
        let out = apply_fas_aug(&s, &mut Rng::new(seed), 1.0, &cfg).unwrap();
        let op = out.op_applied.unwrap();
        assert_eq!((out.label_after, out.attack_after), op.rewrite(label, attack));
        assert!(out.attack_after.consistent_with(out.label_after));
    }
}

#[test]
fn zero_strength_ops_are_bit_exact_identities() {
    for img in [face(), noise_image(1, 32), noise_image(2, 24)] {
        for op in AugOp::ALL {
            let out = zero_strength(op).apply(&img).unwrap();
            assert!(out.data().iter().zip(img.data()).all(|(a, b)| a.to_bits() == b.to_bits()), "op {}", op.letter());
        }
        let f32_img = img.cast::<f32>();
        for op in AugOp::ALL {
            assert_eq!(zero_strength(op).apply(&f32_img).unwrap(), f32_img, "op {} in f32", op.letter());
        }
    }
}

#[test]
fn golden_image_hashes_are_stable() {
    let first = golden_outputs();
    assert_eq!(first, golden_outputs());
    for ((op, got), (gop, want)) in first.iter().zip(GOLDEN) {
        assert_eq!(*op, gop);
        assert_eq!(got, want, "simulator {op}");
    }
    let distinct: std::collections::BTreeSet<&String> = first.iter().map(|(_, h)| h).collect();
    assert_eq!(distinct.len(), 8);
}

#[test]
fn fas_probability_and_op_choice_are_uniform() {
    let s = Sample::live("s", noise_image(3, 16));
    let cfg = FasAugConfig::default();
    let (n, p) = (20_000usize, 0.2);
    let mut counts = [0usize; 8];
    let mut fired = 0usize;
    let mut rng = Rng::new(33);
    for _ in 0..n {
        if let Some(op) = apply_fas_aug(&s, &mut rng, p, &cfg).unwrap().op_applied {
            fired += 1;
            counts[AugOp::ALL.iter().position(|&o| o == op).unwrap()] += 1;
        }
    }
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    assert!((fired as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{fired}");
    let m = fired as f64;
    let sigma_op = (m * (1.0 / 8.0) * (7.0 / 8.0)).sqrt();
    for c in counts {
        assert!((c as f64 - m / 8.0).abs() <= 3.5 * sigma_op, "{counts:?}");
    }
}

#[test]
fn patch_masking_statistics_and_labels() {
    let (side, ps) = (32usize, 8usize);
    // Spoof pixels are all above 0.6 and live pixels below 0.4, so each
    // patch's source is unambiguous.
    let spoof_img = noise_image(4, side).map(|v| 0.6 + 0.4 * v);
    let live_img = noise_image(5, side).map(|v| 0.4 * v);
    let spoof = Sample::spoof("sp", spoof_img.clone(), AttackType::Display);
    let live = Sample::live("lv", live_img.clone());
    let mut rng = Rng::new(34);
    let (mut decisions, mut replaced) = (0usize, 0usize);
    for _ in 0..1000 {
        let out = apply_pda(&spoof, &live, &mut rng, 0.5, ps).unwrap();
        assert_eq!(out.label, Label::Spoof);
        assert_eq!(out.attack, AttackType::Display);
        let pl = out.patch_labels.as_ref().unwrap();
        assert_eq!(pl.grid, side / ps);
        for gy in 0..pl.grid {
            for gx in 0..pl.grid {
                let label = pl.labels[gy * pl.grid + gx];
                let src = if label == Label::Live { &live_img } else { &spoof_img };
                for y in gy * ps..(gy + 1) * ps {
                    for x in gx * ps..(gx + 1) * ps {
                        for c in 0..CHANNELS {
                            assert_eq!(out.image.get(y, x, c), src.get(y, x, c));
                        }
                    }
                }
                decisions += 1;
                replaced += (label == Label::Live) as usize;
            }
        }
    }
    assert!(decisions >= 10_000);
    let sigma = (decisions as f64 * 0.25).sqrt();
    assert!((replaced as f64 - decisions as f64 / 2.0).abs() <= 3.0 * sigma, "{replaced} of {decisions}");
}
