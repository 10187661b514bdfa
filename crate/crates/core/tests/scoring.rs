mod common;

use common::{max_cosine_oracle, random_scores, threshold_oracle};
use fasvit::data::{synth_images, SynthConfig};
use fasvit::rng::Rng;
use fasvit::sample::{Label, Sample};
use fasvit::scoring::{build_bank, class_token, far_frr, score_samples, select_threshold, ReferenceBank};
use fasvit::vit::{ModelConfig, ModelParams, Tap};
use fasvit::{Bank, BankF32};

fn overlapping_sets(rng: &mut Rng, levels: usize) -> (Vec<f64>, Vec<f64>) {
    let nl = 1 + rng.below(200);
    let ns = 1 + rng.below(200);
    let live = random_scores(rng, nl, levels);
    let shift = rng.uniform(0.0, 0.5);
    let spoof = random_scores(rng, ns, levels).iter().map(|s| s - shift).collect();
    (live, spoof)
}

/// Sweeping θ across one distinct score moves FAR or FRR by a single
/// sample, so with distinct scores some candidate is within one step.
#[test]
fn threshold_balances_far_and_frr_within_one_sample() {
    let mut rng = Rng::new(21);
    for set in 0..500 {
        let (live, spoof) = overlapping_sets(&mut rng, 1 << 40);
        let theta = select_threshold(&live, &spoof).unwrap();
        let (far, frr) = far_frr(&live, &spoof, theta);
        let bound = 1.0 / live.len().min(spoof.len()) as f64;
        assert!((far - frr).abs() <= bound + 1e-15, "set {set}: FAR {far} FRR {frr} bound {bound}");
        assert_eq!(theta, threshold_oracle(&live, &spoof), "set {set}");
    }
}

/// With tied blocks the one-sample bound can be out of reach; the choice
/// still matches the exhaustive sweep.
#[test]
fn threshold_matches_exhaustive_sweep_with_ties() {
    let mut rng = Rng::new(25);
    for set in 0..500 {
        let levels = 2 + rng.below(40);
        let (live, spoof) = overlapping_sets(&mut rng, levels);
        assert_eq!(select_threshold(&live, &spoof).unwrap(), threshold_oracle(&live, &spoof), "set {set}");
    }
}

#[test]
fn separable_scores_give_zero_errors() {
    let mut rng = Rng::new(22);
    for _ in 0..50 {
        let live: Vec<f64> = (0..1 + rng.below(50)).map(|_| rng.uniform(0.2, 1.0)).collect();
        let spoof: Vec<f64> = (0..1 + rng.below(50)).map(|_| rng.uniform(-1.0, 0.1)).collect();
        let theta = select_threshold(&live, &spoof).unwrap();
        assert_eq!(far_frr(&live, &spoof, theta), (0.0, 0.0));
    }
    assert!(select_threshold(&[], &[0.1]).is_err());
    assert!(select_threshold(&[f64::NAN], &[0.1]).is_err());
}

fn random_row(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.normal() * rng.uniform(0.1, 10.0)).collect()
}

#[test]
fn max_cosine_matches_brute_force_on_random_banks() {
    let mut rng = Rng::new(23);
    for b in 0..200 {
        let dim = 1 + rng.below(64);
        let rows: Vec<Vec<f64>> = (0..1 + rng.below(100)).map(|_| random_row(&mut rng, dim)).collect();
        let mut bank = Bank::new(Tap::Block(4), "fp", dim);
        for (i, r) in rows.iter().enumerate() {
            bank.push(format!("r{i}"), r).unwrap();
        }
        for i in 0..bank.len() {
            let n: f64 = bank.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() <= 1e-6, "bank {b} row {i} norm {n}");
        }
        for _ in 0..5 {
            let q = random_row(&mut rng, dim);
            let m = bank.best_match(&q).unwrap();
            let (value, index) = max_cosine_oracle(&rows, &q);
            assert_eq!(m.index, index, "bank {b}");
            assert!((m.score - value).abs() <= 1e-12, "bank {b}: {} vs {value}", m.score);
        }
        let k = rng.below(rows.len());
        let scaled: Vec<f64> = rows[k].iter().map(|v| 3.5 * v).collect();
        assert!(bank.best_match(&scaled).unwrap().score >= 1.0 - 1e-6);
    }
}

#[test]
fn f32_bank_rows_are_unit_and_self_queries_score_one() {
    let mut rng = Rng::new(24);
    let mut bank = BankF32::new(Tap::FinalNorm, "fp", 32);
    let rows: Vec<Vec<f32>> = (0..50).map(|_| random_row(&mut rng, 32).iter().map(|&v| v as f32).collect()).collect();
    for (i, r) in rows.iter().enumerate() {
        bank.push(format!("r{i}"), r).unwrap();
    }
    for (i, r) in rows.iter().enumerate() {
        let n: f64 = bank.row(i).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() <= 1e-6);
        assert!(bank.best_match(r).unwrap().score >= 1.0 - 1e-6);
    }
    let back = BankF32::decode(&bank.encode().unwrap()).unwrap();
    assert_eq!(back, bank);
}

#[test]
fn banks_built_from_a_model_score_their_own_faces_at_one() {
    let synth = SynthConfig { n_subjects: 3, frames_per_subject: 2, ..SynthConfig::default() };
    let live: Vec<Sample<f64>> = synth_images(&synth)
        .unwrap()
        .into_iter()
        .filter(|(r, _)| r.label == Label::Live)
        .map(|(r, img)| Sample::live(r.path, img))
        .collect();
    let cfg = ModelConfig::toy();
    let params = ModelParams::<f64>::init(&cfg, &mut Rng::new(3)).unwrap();
    for tap in [Tap::Block(4), Tap::FinalNorm] {
        let bank = build_bank(&params, &live, tap, "fp").unwrap();
        assert_eq!(bank.len(), live.len());
        for i in 0..bank.len() {
            let n: f64 = bank.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() <= 1e-6);
        }
        let scored = score_samples(&params, &bank, &live).unwrap();
        for (s, l) in scored.iter().zip(&live) {
            assert!(s.score >= 1.0 - 1e-6, "{}: {}", s.sample_id, s.score);
            assert_eq!(s.nearest_reference, l.id);
        }
        let t = class_token(&params, &live[0], tap).unwrap();
        assert_eq!(bank.best_match(&t).unwrap().index, 0);
    }
    let spoof = Sample::spoof("x", live[0].image.clone(), fasvit::sample::AttackType::Print);
    assert!(build_bank(&params, &[spoof], Tap::Block(4), "fp").is_err());
    assert!(ReferenceBank::<f64>::new(Tap::Block(1), "fp", 4).best_match(&[1.0; 4]).is_err());
}
