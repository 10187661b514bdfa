use fasvit::image::{ColorSpace, ImageTensor};
use fasvit::metrics::{compute_metrics, far_frr_curve};
use fasvit::rng::Rng;
use fasvit::sample::{AttackType, Label};
use fasvit::scoring::{select_threshold, threshold_candidates, ScoredSample};
use fasvit::vit::{patchify, unpatchify, Tap};
use fasvit::Bank;
use proptest::prelude::*;

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 1..80)
}

fn labelled() -> impl Strategy<Value = Vec<ScoredSample>> {
    (scores(), scores(), prop::collection::vec(0usize..4, 80)).prop_map(|(live, spoof, kinds)| {
        let attacks = [AttackType::Print, AttackType::Display, AttackType::SynthPrint, AttackType::SynthDisplay];
        let mk = |i: usize, label, attack, score| ScoredSample {
            sample_id: format!("s{i}"),
            label,
            attack,
            score,
            nearest_reference: String::new(),
            degenerate: false,
        };
        let mut v: Vec<ScoredSample> = live.iter().enumerate().map(|(i, &s)| mk(i, Label::Live, AttackType::None, s)).collect();
        for (i, &s) in spoof.iter().enumerate() {
            v.push(mk(1000 + i, Label::Spoof, attacks[kinds[i]], s));
        }
        v
    })
}

proptest! {
    #[test]
    fn curve_is_monotone(live in scores(), spoof in scores()) {
        let c = far_frr_curve(&live, &spoof).unwrap();
        prop_assert_eq!(c[0].far, 1.0);
        prop_assert_eq!(c[0].frr, 0.0);
        for w in c.windows(2) {
            prop_assert!(w[0].threshold < w[1].threshold);
            prop_assert!(w[1].far <= w[0].far);
            prop_assert!(w[1].frr >= w[0].frr);
        }
    }

    #[test]
    fn metric_identities(samples in labelled(), theta in -1.2f64..1.2, step in 0.0f64..0.5) {
        let r = compute_metrics(&samples, theta).unwrap();
        prop_assert_eq!(r.acer, (r.apcer + r.bpcer) / 2.0);
        prop_assert!(r.per_attack_apcer.values().all(|&v| (0.0..=r.apcer).contains(&v)));
        prop_assert!(r.per_attack_apcer.values().any(|&v| v == r.apcer));
        prop_assert!((0.0..=1.0).contains(&r.bpcer));
        // A stricter threshold accepts fewer attacks and rejects more live faces.
        let s = compute_metrics(&samples, theta + step).unwrap();
        prop_assert!(s.apcer <= r.apcer && s.bpcer >= r.bpcer);
    }

    #[test]
    fn threshold_is_a_candidate_and_order_free(live in scores(), spoof in scores(), seed in any::<u64>()) {
        let theta = select_threshold(&live, &spoof).unwrap();
        prop_assert!(threshold_candidates(&live, &spoof).unwrap().contains(&theta));
        let mut rng = Rng::new(seed);
        let (mut l, mut s) = (live.clone(), spoof.clone());
        rng.shuffle(&mut l);
        rng.shuffle(&mut s);
        prop_assert_eq!(select_threshold(&l, &s).unwrap(), theta);
    }

    #[test]
    fn cosine_score_is_bounded_and_scale_free(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 1..20),
        q in prop::collection::vec(-5.0f64..5.0, 6),
        c in 0.01f64..100.0,
    ) {
        prop_assume!(rows.iter().all(|r| r.iter().any(|v| v.abs() > 1e-3)));
        prop_assume!(q.iter().any(|v| v.abs() > 1e-3));
        let mut bank = Bank::new(Tap::Block(2), "fp", 6);
        for (i, r) in rows.iter().enumerate() {
            bank.push(format!("r{i}"), r).unwrap();
        }
        let a = bank.best_match(&q).unwrap();
        let scaled: Vec<f64> = q.iter().map(|v| c * v).collect();
        let b = bank.best_match(&scaled).unwrap();
        prop_assert!((-1.0..=1.0).contains(&a.score));
        prop_assert!((a.score - b.score).abs() <= 1e-12);
        let back = Bank::decode(&bank.encode().unwrap()).unwrap();
        prop_assert_eq!(back, bank);
    }

    #[test]
    fn patchify_inverts(grid in 1usize..5, ps in 1usize..6, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let side = grid * ps;
        let img = ImageTensor::from_fn(side, side, |_, _, _| rng.next_f64());
        let p = patchify(&img, ps).unwrap();
        prop_assert_eq!(p.len(), grid * grid);
        prop_assert_eq!(unpatchify(&p, ps, ColorSpace::SrgbUnit).unwrap(), img);
    }
}
