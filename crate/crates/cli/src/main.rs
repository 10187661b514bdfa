//! `fasvit`: one subcommand per pipeline stage.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fasvit::augment::{apply_op, apply_pda, AugOp, AugParams, FasAugConfig};
use fasvit::data::{resolve_protocol, synth_dataset, Manifest};
use fasvit::error::{Error, ErrorClass, Result};
use fasvit::gradcheck::{grad_check, grad_check_config, GradCheckOptions};
use fasvit::image::{read_image, write_image};
use fasvit::pipeline::{
    ablate, bank_stage, eval_stage, read_threshold, score_stage, train_stage, AblationKind, EvalOutputs, Pipeline,
    RunSummary, ScoreOutputs, ThresholdRecord,
};
use fasvit::rng::Rng;
use fasvit::run::RunConfig;
use fasvit::sample::{AttackType, Label, Sample};
use fasvit::vit::Tap;

#[derive(Parser)]
#[command(name = "fasvit", version, about = "Face presentation-attack detection with intermediate ViT features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic live/print/display corpus and its manifest.
    Synth(SynthArgs),
    /// Apply one simulator (a..h) or live-patch masking to an image.
    Augment(AugmentArgs),
    /// Train a model on the training split of a manifest.
    Train(TrainArgs),
    /// Build the live reference bank from a checkpoint.
    Bank(BankArgs),
    /// Score the test split against a bank and pick the FAR=FRR threshold.
    Score(ScoreArgs),
    /// Compute APCER/BPCER/ACER from a score file.
    Eval(EvalArgs),
    /// Tap ablation over every fold of a protocol.
    Ablate(AblateArgs),
    /// Run synth, train, bank, score and eval into one directory.
    Pipeline(PipelineArgs),
    /// Compare analytic and finite-difference gradients on a tiny model.
    GradCheck(GradCheckArgs),
}

/// Run configuration shared by the stage commands. Flags win over `--set`,
/// which wins over the file.
#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (TOML). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Scalar type for model arithmetic.
    #[arg(long, value_parser = ["f32", "f64"])]
    precision: Option<String>,
    /// Override any config key, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::read(p)?,
            None => RunConfig::default(),
        };
        self.apply(base)
    }

    /// Applies `--set`, `--seed` and `--precision` on top of `base`.
    fn apply(&self, base: RunConfig) -> Result<RunConfig> {
        let mut pairs = self
            .overrides
            .iter()
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .ok_or_else(|| Error::Config(format!("override `{kv}` is not KEY=VALUE")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(s) = self.seed {
            pairs.push(("seed".into(), s.to_string()));
        }
        if let Some(p) = &self.precision {
            pairs.push(("precision".into(), format!("\"{p}\"")));
        }
        base.with_overrides(&pairs)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for images and manifest.csv.
    #[arg(long)]
    out: PathBuf,
    /// Number of subjects.
    #[arg(long)]
    subjects: Option<usize>,
    /// Frames per subject.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Args)]
struct AugmentArgs {
    /// Simulator letter a..h, or `pda` for live-patch masking.
    #[arg(long)]
    op: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Label of the input image.
    #[arg(long, default_value = "LIVE")]
    label: String,
    /// Attack type of the input image (spoof inputs only).
    #[arg(long)]
    attack: Option<String>,
    /// Live donor image for `pda`.
    #[arg(long)]
    live: Option<PathBuf>,
    /// Simulator range overrides, `key=value,...` (e.g.
    /// `moire_amplitude=[0.1,0.2]`); for `pda`: `p_patch`, `patch_size`.
    #[arg(long, default_value = "")]
    params: String,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Manifest CSV; its protocol training split is used.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss log (CSV).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct BankArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest CSV; live rows of its training split form the bank.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Block index or `final`; defaults to the checkpoint's score tap.
    #[arg(long)]
    tap: Option<String>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Test-split score CSV.
    #[arg(long)]
    out: PathBuf,
    /// Split the threshold is fit on: `test` or `calib`.
    #[arg(long)]
    calib: Option<String>,
    /// Threshold record (JSON); next to `--out` by default.
    #[arg(long)]
    threshold_out: Option<PathBuf>,
    /// Calibration-split score CSV; next to `--out` by default.
    #[arg(long)]
    calib_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Score CSV from `score`.
    #[arg(long)]
    scores: PathBuf,
    /// Manifest supplying the ground truth.
    #[arg(long)]
    data: PathBuf,
    /// Threshold record written by `score`.
    #[arg(long, conflicts_with = "threshold_value")]
    threshold: Option<PathBuf>,
    /// Fixed threshold instead of a record.
    #[arg(long)]
    threshold_value: Option<f64>,
    /// Metrics JSON to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the FAR/FRR curve as SVG.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory; the synthetic corpus goes under it when `--data`
    /// is not given.
    #[arg(long)]
    out: PathBuf,
    /// Existing manifest to ablate on.
    #[arg(long)]
    data: Option<PathBuf>,
    /// `score` (train once per fold) or `loss` (retrain per tap).
    #[arg(long, default_value = "score")]
    kind: String,
    /// Comma-separated block indices; the final norm is always added for
    /// score ablation.
    #[arg(long, value_delimiter = ',', required = true)]
    taps: Vec<usize>,
    /// Protocol to take folds from (overrides the config).
    #[arg(long)]
    protocol: Option<String>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Re-run the configuration recorded in a previous run summary.
    #[arg(long, conflicts_with = "config")]
    from_summary: Option<PathBuf>,
    /// Print per-epoch losses.
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Samples in the checked batch.
    #[arg(long, default_value_t = 4)]
    samples: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            })
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Augment(a) => augment(a),
        Command::Train(a) => train(a),
        Command::Bank(a) => bank(a),
        Command::Score(a) => score(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Pipeline(a) => pipeline(a),
        Command::GradCheck(a) => grad_check_cmd(a),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = a.config.resolve()?;
    if let Some(n) = a.subjects {
        cfg.data.synth.n_subjects = n;
    }
    if let Some(n) = a.frames {
        cfg.data.synth.frames_per_subject = n;
    }
    cfg.validate()?;
    let m = synth_dataset(&cfg.synth_config(), &a.out).map_err(Error::in_stage("synth"))?;
    let live = m.rows.iter().filter(|r| r.label == Label::Live).count();
    println!("{} rows ({live} live, {} spoof) in {}", m.len(), m.len() - live, a.out.join("manifest.csv").display());
    Ok(())
}

/// Splits `k=v,k=[a,b],...` on top-level commas.
fn split_params(s: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0usize);
    let mut push = |part: &str| -> Result<()> {
        let part = part.trim();
        if part.is_empty() {
            return Ok(());
        }
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("parameter `{part}` is not key=value")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
        Ok(())
    };
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                push(&s[start..i])?;
                start = i + 1;
            }
            _ => {}
        }
    }
    push(&s[start..])?;
    Ok(out)
}

fn augment(a: AugmentArgs) -> Result<()> {
    let params = split_params(&a.params)?;
    let label: Label = a.label.parse()?;
    let image = read_image::<f64>(&a.input)?;
    if a.op.eq_ignore_ascii_case("pda") {
        let live_path = a.live.as_ref().ok_or_else(|| Error::invalid("`--op pda` needs a live donor image (`--live`)"))?;
        let (mut p_patch, mut patch_size) = (0.5, 8usize);
        for (k, v) in &params {
            let bad = |_| Error::invalid(format!("bad value for `{k}`: {v}"));
            match k.as_str() {
                "p_patch" => p_patch = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "patch_size" => patch_size = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                _ => return Err(Error::invalid(format!("unknown pda parameter `{k}`"))),
            }
        }
        let attack: AttackType = a.attack.as_deref().unwrap_or("print").parse()?;
        let spoof = Sample::new(a.input.display().to_string(), image, label, attack);
        let live = Sample::live(live_path.display().to_string(), read_image::<f64>(live_path)?);
        let out = apply_pda(&spoof, &live, &mut Rng::new(a.seed), p_patch, patch_size)?;
        let labels = out.patch_labels.as_ref().expect("masking sets patch labels");
        write_image(&out.image, &a.out)?;
        let record = serde_json::json!({
            "label_before": spoof.label,
            "label_after": out.label,
            "attack_after": out.attack,
            "op_applied": "PDA",
            "params_used": AugParams::Pda {
                p_patch,
                replaced: labels.count(Label::Live),
                patches: labels.len(),
            },
            "patch_labels": labels,
        });
        println!("{record}");
        return Ok(());
    }
    let op = a
        .op
        .chars()
        .next()
        .filter(|_| a.op.len() == 1)
        .and_then(AugOp::from_letter)
        .ok_or_else(|| Error::invalid(format!("op `{}`: expected a letter a..h or `pda`", a.op)))?;
    let mut table: toml::Table = toml::from_str(&toml::to_string(&FasAugConfig::default()).expect("serializes")).expect("parses");
    for (k, v) in &params {
        let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
            .map_err(|e| Error::Config(format!("parameter `{k}`: {e}")))?
            .remove("v")
            .expect("key present");
        table.insert(k.clone(), value);
    }
    let cfg: FasAugConfig = toml::from_str(&toml::to_string(&table).expect("serializes")).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    let attack: AttackType = match (&a.attack, label) {
        (Some(s), _) => s.parse()?,
        (None, Label::Live) => AttackType::None,
        (None, Label::Spoof) => AttackType::Print,
    };
    let sample = Sample::new(a.input.display().to_string(), image, label, attack);
    let drawn = AugParams::draw(op, &cfg, &mut Rng::new(a.seed));
    let outcome = apply_op(&sample, op, drawn)?;
    write_image(&outcome.image, &a.out)?;
    println!("{}", serde_json::to_string(&outcome)?);
    Ok(())
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().map(|p| p.join(name)).unwrap_or_else(|| PathBuf::from(name))
}

fn print_epoch(e: &fasvit::train::EpochLog) {
    eprintln!("{}", e.summary_line());
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let log = a.log.unwrap_or_else(|| sibling(&a.out, "train_log.csv"));
    let history = train_stage(&cfg, &a.data, &a.out, &log, print_epoch)?;
    println!(
        "trained {} epochs, final overall loss {:.6}; checkpoint {}",
        history.len(),
        history.last().map_or(f64::NAN, |h| h.loss.l_overall),
        a.out.display()
    );
    Ok(())
}

fn bank(a: BankArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let tap: Option<Tap> = a.tap.as_deref().map(str::parse).transpose().map_err(Error::in_stage("bank"))?;
    let n = bank_stage(&cfg, &a.checkpoint, &a.data, tap, &a.out)?;
    println!("{n} reference vectors in {}", a.out.display());
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let mut cfg = a.config.resolve()?;
    if let Some(c) = &a.calib {
        cfg.data.calib = c.parse()?;
    }
    let threshold = a.threshold_out.unwrap_or_else(|| sibling(&a.out, "threshold.json"));
    let calib_scores = a.calib_out.unwrap_or_else(|| sibling(&a.out, "calib_scores.csv"));
    let r = score_stage(
        &cfg,
        &a.checkpoint,
        &a.bank,
        &a.data,
        &ScoreOutputs {
            scores: &a.out,
            calib_scores: &calib_scores,
            threshold: &threshold,
        },
    )?;
    println!(
        "threshold {:.6} on the {} split (FAR {:.4}, FRR {:.4}); scores in {}",
        r.threshold,
        fasvit::pipeline::calib_name(r.calib_split),
        r.far,
        r.frr,
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let record = match (&a.threshold, a.threshold_value) {
        (Some(p), _) => read_threshold(p).map_err(Error::in_stage("eval"))?,
        (None, Some(t)) => ThresholdRecord {
            fold: String::new(),
            threshold: t,
            calib_split: fasvit::data::CalibSource::Test,
            live: 0,
            spoof: 0,
            far: f64::NAN,
            frr: f64::NAN,
        },
        (None, None) => return Err(Error::invalid("give `--threshold` or `--threshold-value`")),
    };
    let report = eval_stage(
        &a.scores,
        &a.data,
        &record,
        &EvalOutputs {
            metrics: &a.out,
            report: None,
            curve: a.plot.as_deref(),
        },
    )?;
    print!("{}", report.to_text());
    Ok(())
}

fn ablate_cmd(a: AblateArgs) -> Result<()> {
    let mut cfg = a.config.resolve()?;
    if let Some(p) = &a.protocol {
        cfg.data.protocol = p.clone();
    }
    let kind: AblationKind = a.kind.parse()?;
    std::fs::create_dir_all(&a.out).map_err(Error::at_path(&a.out))?;
    let manifest = match &a.data {
        Some(p) => Manifest::read(p),
        None => synth_dataset(&cfg.synth_config(), &a.out.join("data")),
    }
    .map_err(Error::in_stage("synth"))?;
    let protocol = resolve_protocol(&cfg.data.protocol)?;
    let table = ablate(&cfg, &manifest, &protocol, kind, &a.taps).map_err(Error::in_stage("ablate"))?;
    let text = table.to_text();
    let json = a.out.join("ablation.json");
    std::fs::write(&json, serde_json::to_string_pretty(&table)? + "\n").map_err(Error::at_path(&json))?;
    let txt = a.out.join("ablation.txt");
    std::fs::write(&txt, &text).map_err(Error::at_path(&txt))?;
    print!("{text}");
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let cfg = match &a.from_summary {
        Some(p) => a.config.apply(RunSummary::read(p)?.run_config()?)?,
        None => a.config.resolve()?,
    };
    let mut p = Pipeline::new(cfg, &a.out)?;
    p.verbose = a.verbose;
    let s = p.run()?;
    println!(
        "ACER {:.2}%  (APCER {:.2}%, BPCER {:.2}%) at threshold {:.6}; summary in {}",
        100.0 * s.acer,
        100.0 * s.apcer,
        100.0 * s.bpcer,
        s.threshold.threshold,
        p.paths.summary().display()
    );
    Ok(())
}

fn grad_check_cmd(a: GradCheckArgs) -> Result<()> {
    let opts = GradCheckOptions {
        seed: a.seed,
        samples: a.samples,
        ..GradCheckOptions::default()
    };
    let report = grad_check(&grad_check_config(), &opts)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !report.passed {
        return Err(Error::Numeric(format!(
            "max relative error {:.3e} at `{}`[{}] exceeds {:.0e}",
            report.max_rel_error, report.worst.tensor, report.worst.index, opts.tolerance
        )));
    }
    Ok(())
}
