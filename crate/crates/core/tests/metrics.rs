mod common;

use common::{curve_oracle, metrics_oracle, random_scored, worked_example};
use fasvit::metrics::{aggregate_folds, compute_metrics, far_frr_curve, format_report, split_scores, MeanStd};
use fasvit::rng::Rng;
use fasvit::sample::{AttackType, Label};
use fasvit::scoring::{threshold_candidates, ScoredSample};

#[test]
fn metrics_and_curve_match_counting_oracles() {
    let mut rng = Rng::new(11);
    for instance in 0..1000 {
        let samples = random_scored(&mut rng, 1000);
        let (live, spoof) = split_scores(&samples);
        let candidates = threshold_candidates(&live, &spoof).unwrap();
        let thetas = [
            candidates[rng.below(candidates.len())],
            candidates[0] - 1.0,
            candidates[candidates.len() - 1] + 1.0,
            rng.uniform(-1.0, 1.0),
        ];
        for theta in thetas {
            let got = compute_metrics(&samples, theta).unwrap();
            let want = metrics_oracle(&samples, theta);
            assert_eq!(got.per_attack_apcer, want.per_attack, "instance {instance} θ {theta}");
            assert_eq!(got.apcer, want.apcer, "instance {instance}");
            assert_eq!(got.bpcer, want.bpcer, "instance {instance}");
            assert_eq!(got.acer, want.acer, "instance {instance}");
            assert_eq!(got.threshold, theta);
        }
        let curve = far_frr_curve(&live, &spoof).unwrap();
        let want = curve_oracle(&live, &spoof);
        assert_eq!(curve.len(), want.len(), "instance {instance}");
        for (c, (t, far, frr)) in curve.iter().zip(want) {
            assert_eq!((c.threshold, c.far, c.frr), (t, far, frr), "instance {instance}");
        }
    }
}

#[test]
fn worked_example_reproduces_exactly() {
    let r = compute_metrics(&worked_example(), 0.5).unwrap();
    assert_eq!(r.per_attack_apcer[&AttackType::Print], 0.25);
    assert_eq!(r.per_attack_apcer[&AttackType::Display], 0.20);
    assert_eq!(r.apcer, 0.25);
    assert_eq!(r.bpcer, 0.20);
    assert_eq!(r.acer, 0.225);
    assert_eq!(r.counts.bona_fide, 10);
    assert_eq!(r.counts.rejected, 2);
    let text = format_report(&r);
    assert!(text.contains("ACER        22.50%"), "{text}");
}

#[test]
fn inconsistent_or_one_sided_inputs_are_rejected() {
    let mut s = worked_example();
    s[0].attack = AttackType::None;
    assert!(compute_metrics(&s, 0.5).is_err());
    let live_only: Vec<ScoredSample> = worked_example().into_iter().filter(|s| s.label == Label::Live).collect();
    assert!(compute_metrics(&live_only, 0.5).is_err());
    assert!(far_frr_curve(&[0.1], &[]).is_err());
    assert!(far_frr_curve(&[f64::NAN], &[0.2]).is_err());
}

#[test]
fn fold_aggregation_by_hand() {
    let base = compute_metrics(&worked_example(), 0.5).unwrap();
    let reports: Vec<_> = [(0.1, 0.3), (0.2, 0.1), (0.3, 0.2)]
        .iter()
        .map(|&(apcer, bpcer)| {
            let mut r = base.clone();
            r.apcer = apcer;
            r.bpcer = bpcer;
            r.acer = (apcer + bpcer) / 2.0;
            r
        })
        .collect();
    let s = aggregate_folds(&reports).unwrap();
    assert_eq!(s.folds, 3);
    // Population statistics: mean 0.2, std sqrt(((0.1)² + 0 + (0.1)²)/3).
    let std = (0.02f64 / 3.0).sqrt();
    for m in [s.apcer, s.bpcer] {
        assert!((m.mean - 0.2).abs() < 1e-15 && (m.std - std).abs() < 1e-15, "{m:?}");
    }
    // ACER per fold: 0.2, 0.15, 0.25.
    assert!((s.acer.mean - 0.2).abs() < 1e-15);
    assert!((s.acer.std - (0.005f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(MeanStd { mean: 0.0221, std: 0.026 }.to_string(), "2.21±2.60");
    assert!(aggregate_folds(&[]).is_err());
}
