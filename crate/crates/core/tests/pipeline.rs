use std::path::Path;

use fasvit::data::{builtin_protocol, Manifest};
use fasvit::pipeline::{ablate, bank_stage, score_ablation_taps, AblationKind, Pipeline, RunSummary, ScoreOutputs};
use fasvit::run::{Precision, RunConfig};
use fasvit::vit::Tap;
use fasvit::Error;

/// A run small enough for a unit-level test: one frame per subject and two
/// short epochs.
fn quick() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 3;
    cfg.data.synth.frames_per_subject = 1;
    cfg.train.epochs = 2;
    cfg
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn full_run_writes_every_artifact_and_repeats_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let a = Pipeline::new(quick(), dir.path().join("a")).unwrap();
    let summary = a.run().unwrap();
    let p = &a.paths;
    for f in [
        p.config(),
        p.synth_manifest(),
        p.checkpoint(),
        p.train_log(),
        p.bank(),
        p.scores(),
        p.calib_scores(),
        p.threshold(),
        p.metrics(),
        p.report(),
        p.curve(),
        p.summary(),
    ] {
        assert!(f.is_file(), "{} missing", f.display());
    }
    assert_eq!(summary.epochs, 2);
    assert_eq!(summary.acer, (summary.apcer + summary.bpcer) / 2.0);
    assert_eq!(RunSummary::read(&p.summary()).unwrap(), summary);
    let metrics: serde_json::Value = serde_json::from_slice(&read(&p.metrics())).unwrap();
    assert_eq!(metrics["acer"].as_f64().unwrap(), summary.acer);
    assert_eq!(metrics["calib_split"], "test");

    let b = Pipeline::new(quick(), dir.path().join("b")).unwrap();
    b.run().unwrap();
    for (x, y) in [(p.metrics(), b.paths.metrics()), (p.checkpoint(), b.paths.checkpoint()), (p.bank(), b.paths.bank())] {
        assert_eq!(read(&x), read(&y), "{}", x.display());
    }

    // Re-execution from the recorded summary reproduces the same run.
    let again = Pipeline::new(summary.run_config().unwrap(), dir.path().join("c")).unwrap();
    let s = again.run().unwrap();
    assert_eq!(s, summary);
    assert_eq!(read(&again.paths.metrics()), read(&p.metrics()));
}

#[test]
fn missing_checkpoint_is_reported_by_the_bank_stage() {
    let dir = tempfile::tempdir().unwrap();
    let run = Pipeline::new(quick(), dir.path()).unwrap();
    run.synth().unwrap();
    let err = run.bank().unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "bank", .. }), "{err:?}");
    assert!(err.to_string().contains("bank"), "{err}");
    assert!(matches!(run.eval().unwrap_err(), Error::Stage { stage: "eval", .. }));
}

#[test]
fn bank_from_another_checkpoint_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let a = Pipeline::new(quick(), dir.path().join("a")).unwrap();
    a.synth().unwrap();
    a.train().unwrap();
    let mut other_cfg = quick();
    other_cfg.seed = 4;
    other_cfg.data.manifest = Some(a.manifest_path());
    let b = Pipeline::new(other_cfg, dir.path().join("b")).unwrap();
    b.train().unwrap();
    bank_stage(&b.cfg, &b.paths.checkpoint(), &b.manifest_path(), Some(Tap::FinalNorm), &b.paths.bank()).unwrap();
    let (s, c, t) = (a.paths.scores(), a.paths.calib_scores(), a.paths.threshold());
    let err = fasvit::pipeline::score_stage(
        &a.cfg,
        &a.paths.checkpoint(),
        &b.paths.bank(),
        &a.manifest_path(),
        &ScoreOutputs { scores: &s, calib_scores: &c, threshold: &t },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "score", .. }), "{err:?}");
}

#[test]
fn f32_run_completes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick();
    cfg.precision = Precision::F32;
    let s = Pipeline::new(cfg, dir.path()).unwrap().run().unwrap();
    assert!(s.acer.is_finite() && (0.0..=1.0).contains(&s.acer));
}

#[test]
fn ablation_table_has_one_row_per_tap_and_aggregates_folds() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick();
    cfg.train.epochs = 1;
    let run = Pipeline::new(cfg.clone(), dir.path()).unwrap();
    let manifest: Manifest = run.synth().unwrap();
    let protocol = builtin_protocol("synthetic-folds").unwrap();
    let t = ablate(&cfg, &manifest, &protocol, AblationKind::Score, &[5, 4]).unwrap();
    let taps: Vec<&str> = t.rows.iter().map(|r| r.tap.as_str()).collect();
    assert_eq!(taps, ["block 4", "block 5", "final norm"]);
    assert_eq!(t.fold_names.len(), 2);
    for r in &t.rows {
        assert_eq!(r.folds.len(), 2);
        let mean = (r.folds[0].acer + r.folds[1].acer) / 2.0;
        assert!((r.summary.acer.mean - mean).abs() < 1e-15);
        assert!((r.summary.acer.std - (r.folds[0].acer - r.folds[1].acer).abs() / 2.0).abs() < 1e-15);
    }
    let text = t.to_text();
    assert_eq!(text.lines().count(), 2 + t.rows.len(), "{text}");
    assert!(text.contains("±"));
    assert_eq!(score_ablation_taps(&[6, 6], 6).unwrap(), [Tap::Block(6), Tap::FinalNorm]);
    assert!(score_ablation_taps(&[7], 6).is_err());
    assert!(ablate(&cfg, &manifest, &protocol, AblationKind::Score, &[]).is_err());
}
