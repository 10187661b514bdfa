use std::path::Path;
use std::process::{Command, Output};

fn fasvit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fasvit")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fasvit(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A one-frame synthetic corpus; returns the manifest path.
fn corpus(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    ok(&["synth", "--out", p(&data), "--frames", "1"]);
    data.join("manifest.csv")
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(fasvit(&["train", "--bogus"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = fasvit(&["synth", "--out", p(dir.path()), "--set", "train.no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fasvit(&["synth", "--out", p(dir.path()), "--set", "no_equals"]).status.code(), Some(2));
}

#[test]
fn missing_input_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = fasvit(&["augment", "--op", "a", "--in", p(&dir.path().join("nope.png")), "--out", p(&dir.path().join("o.png"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn augment_reports_the_label_rewrite() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path());
    let data = manifest.parent().unwrap();
    let live = data.join("images/live_001_000.png");
    let print = data.join("images/print_001_000.png");
    let out = dir.path().join("g.png");
    let json: serde_json::Value = serde_json::from_str(&ok(&["augment", "--op", "g", "--seed", "5", "--in", p(&live), "--out", p(&out)])).unwrap();
    assert_eq!(json["op_applied"], "G_SPECULAR");
    assert_eq!(json["label_before"], "LIVE");
    assert_eq!(json["label_after"], "SPOOF");
    assert_eq!(json["attack_after"], "SYNTH_DISPLAY");
    assert!(out.is_file());

    let json: serde_json::Value = serde_json::from_str(&ok(&[
        "augment", "--op", "a", "--in", p(&print), "--out", p(&out), "--label", "spoof", "--attack", "display",
    ]))
    .unwrap();
    assert_eq!(json["label_after"], "SPOOF");
    assert_eq!(json["attack_after"], "DISPLAY");

    let json: serde_json::Value = serde_json::from_str(&ok(&[
        "augment", "--op", "pda", "--in", p(&print), "--live", p(&live), "--out", p(&out), "--label", "SPOOF", "--params", "p_patch=0.5,patch_size=8",
    ]))
    .unwrap();
    assert_eq!(json["op_applied"], "PDA");
    assert_eq!(json["label_after"], "SPOOF");
    let labels = json["patch_labels"]["labels"].as_array().unwrap();
    let grid = json["patch_labels"]["grid"].as_u64().unwrap() as usize;
    assert_eq!(labels.len(), grid * grid);
    let live_count = labels.iter().filter(|l| *l == "LIVE").count() as u64;
    assert_eq!(json["params_used"]["replaced"].as_u64(), Some(live_count));

    assert_eq!(fasvit(&["augment", "--op", "z", "--in", p(&live), "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(fasvit(&["augment", "--op", "pda", "--in", p(&print), "--out", p(&out)]).status.code(), Some(2));
}

#[test]
fn stages_chain_through_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = corpus(d);
    let (ckpt, bank, scores, metrics, plot) =
        (d.join("model.fasv"), d.join("bank.fasb"), d.join("scores.csv"), d.join("metrics.json"), d.join("curve.svg"));

    let out = fasvit(&["bank", "--checkpoint", p(&ckpt), "--data", p(&manifest), "--out", p(&bank)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bank"));

    ok(&["train", "--data", p(&manifest), "--out", p(&ckpt), "--set", "train.epochs=1"]);
    assert!(d.join("train_log.csv").is_file());
    ok(&["bank", "--checkpoint", p(&ckpt), "--data", p(&manifest), "--out", p(&bank)]);
    ok(&["score", "--checkpoint", p(&ckpt), "--bank", p(&bank), "--data", p(&manifest), "--out", p(&scores)]);
    assert!(d.join("threshold.json").is_file());
    let text = ok(&[
        "eval", "--scores", p(&scores), "--data", p(&manifest), "--threshold", p(&d.join("threshold.json")), "--out", p(&metrics), "--plot", p(&plot),
    ]);
    assert!(text.contains("ACER"), "{text}");
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(&metrics).unwrap()).unwrap();
    let (apcer, bpcer, acer) = (m["apcer"].as_f64().unwrap(), m["bpcer"].as_f64().unwrap(), m["acer"].as_f64().unwrap());
    assert_eq!(acer, (apcer + bpcer) / 2.0);
    assert!(std::fs::read_to_string(&plot).unwrap().starts_with("<svg"));
}

#[test]
fn pipeline_reruns_from_its_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["pipeline", "--out", p(&a), "--seed", "2", "--set", "train.epochs=1", "--set", "data.synth.frames_per_subject=1"]);
    ok(&["pipeline", "--out", p(&b), "--from-summary", p(&a.join("summary.json"))]);
    assert_eq!(std::fs::read(a.join("metrics.json")).unwrap(), std::fs::read(b.join("metrics.json")).unwrap());
}

#[test]
fn grad_check_passes() {
    let text = ok(&["grad-check", "--seed", "1"]);
    assert!(!text.is_empty());
}
