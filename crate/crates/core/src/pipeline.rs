//! Stage-by-stage orchestration of a run: synth → train → bank → score →
//! eval, with every artifact written under one output directory, plus the
//! tap-ablation harness.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_samples, resolve_protocol, sample_frames, synth_dataset, CalibSource, Manifest, ProtocolSpec};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_folds, compute_metrics, curve_svg, format_report, split_scores, FoldSummary, MetricsReport};
use crate::rng::{mix64, Rng};
use crate::run::{Precision, RunConfig, Stream};
use crate::sample::{Label, Sample};
use crate::scalar::Real;
use crate::scoring::{
    build_bank, far_frr, read_scores, score_samples, select_threshold, write_scores, ReferenceBank, ScoreReport,
    ScoredSample,
};
use crate::train::{train, write_loss_log, EpochLog};
use crate::vit::checkpoint::{checkpoint_fingerprint, load_checkpoint, save_checkpoint, sha256_hex};
use crate::vit::{ModelConfig, ModelParams, Tap};

/// Artifact locations under a run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn synth_manifest(&self) -> PathBuf {
        self.data_dir().join("manifest.csv")
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model.fasv")
    }
    pub fn train_log(&self) -> PathBuf {
        self.root.join("train_log.csv")
    }
    pub fn bank(&self) -> PathBuf {
        self.root.join("bank.fasb")
    }
    pub fn scores(&self) -> PathBuf {
        self.root.join("scores.csv")
    }
    pub fn calib_scores(&self) -> PathBuf {
        self.root.join("calib_scores.csv")
    }
    pub fn threshold(&self) -> PathBuf {
        self.root.join("threshold.json")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.json")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }
    pub fn curve(&self) -> PathBuf {
        self.root.join("far_frr.svg")
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }
}

/// Manifests of one fold after frame sampling.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub fold: String,
    pub train: Manifest,
    pub calib: Manifest,
    pub test: Manifest,
    pub calib_source: CalibSource,
}

/// Applies `protocol` fold `fold` to `manifest` and keeps
/// `frames_per_video` frames per video in every split (0 keeps all).
pub fn fold_data(
    manifest: &Manifest,
    protocol: &ProtocolSpec,
    fold: usize,
    calib: CalibSource,
    frames_per_video: usize,
    seed: u64,
) -> Result<FoldData> {
    let split = protocol.split(manifest, fold, calib)?;
    let pick = |rows: &[usize], tag: u64| {
        let m = manifest.subset(rows);
        if frames_per_video == 0 {
            m
        } else {
            sample_frames(&m, frames_per_video, &mut Rng::new(mix64(seed ^ mix64(fold as u64) ^ tag)))
        }
    };
    let test = pick(&split.test, 3);
    Ok(FoldData {
        fold: split.fold,
        train: pick(&split.train, 1),
        calib: if split.calib_is_test { test.clone() } else { pick(&split.calib, 2) },
        test,
        calib_source: if split.calib_is_test { CalibSource::Test } else { CalibSource::Calib },
    })
}

fn live_only<T: Clone>(samples: &[Sample<T>]) -> Vec<Sample<T>> {
    samples.iter().filter(|s| s.label == Label::Live).cloned().collect()
}

/// Record of the operating threshold and the split it was fit on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub fold: String,
    pub threshold: f64,
    pub calib_split: CalibSource,
    pub live: usize,
    pub spoof: usize,
    pub far: f64,
    pub frr: f64,
}

impl ThresholdRecord {
    pub fn fit(fold: &str, calib: &[ScoredSample], calib_split: CalibSource) -> Result<Self> {
        let (live, spoof) = split_scores(calib);
        let threshold = select_threshold(&live, &spoof)?;
        let (far, frr) = far_frr(&live, &spoof, threshold);
        Ok(Self {
            fold: fold.to_string(),
            threshold,
            calib_split,
            live: live.len(),
            spoof: spoof.len(),
            far,
            frr,
        })
    }
}

/// Metrics of one evaluated fold together with where its threshold came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fold: String,
    pub calib_split: CalibSource,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        format!(
            "fold       {}\ncalibrated on the {} split\n{}",
            self.fold,
            calib_name(self.calib_split),
            format_report(&self.metrics)
        )
    }
}

/// Attaches ground truth from `manifest` to rows of a score file.
pub fn join_scores(reports: &[ScoreReport], manifest: &Manifest) -> Result<Vec<ScoredSample>> {
    let by_id: HashMap<&str, usize> = manifest.rows.iter().enumerate().map(|(i, r)| (r.path.as_str(), i)).collect();
    reports
        .iter()
        .map(|r| {
            let row = by_id
                .get(r.sample_id.as_str())
                .map(|&i| &manifest.rows[i])
                .ok_or_else(|| Error::invalid(format!("scored sample `{}` is not in the manifest", r.sample_id)))?;
            Ok(ScoredSample {
                sample_id: r.sample_id.clone(),
                label: row.label,
                attack: row.attack_type,
                score: r.score,
                nearest_reference: r.nearest_reference.clone(),
                degenerate: r.nearest_reference.is_empty(),
            })
        })
        .collect()
}

/// SHA-256 over the manifest text and every listed image, in row order.
pub fn data_fingerprint(manifest: &Manifest) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(manifest.to_csv()?.as_bytes());
    for r in &manifest.rows {
        let p = manifest.resolve(r);
        h.update(std::fs::read(&p).map_err(Error::at_path(&p))?);
    }
    Ok(hex(&h.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(Error::at_path(path))
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path).map_err(Error::at_path(path))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub root: u64,
    pub synth: u64,
    pub init: u64,
    pub train: u64,
    pub frames: u64,
}

/// Everything needed to reproduce a run and check that it did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Canonical TOML of the run config.
    pub config: String,
    pub config_sha256: String,
    pub seeds: Seeds,
    pub protocol: String,
    pub protocol_sha256: String,
    pub fold: String,
    pub data_sha256: String,
    pub checkpoint_sha256: String,
    pub bank_sha256: String,
    pub epochs: usize,
    pub final_loss: f64,
    pub threshold: ThresholdRecord,
    pub apcer: f64,
    pub bpcer: f64,
    pub acer: f64,
}

impl RunSummary {
    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::parse(&self.config)
    }
}

/// Loads the config's protocol fold of the manifest at `manifest`.
pub fn load_fold_data(cfg: &RunConfig, manifest: &Path) -> Result<FoldData> {
    let manifest = Manifest::read(manifest)?;
    fold_data(
        &manifest,
        &resolve_protocol(&cfg.data.protocol)?,
        cfg.data.fold,
        cfg.data.calib,
        cfg.data.frames_per_video,
        cfg.stream_seed(Stream::Frames),
    )
}

/// Trains on the fold's training split from a seeded initialization and
/// writes the checkpoint and the loss log.
pub fn train_stage(
    cfg: &RunConfig,
    manifest: &Path,
    checkpoint: &Path,
    log: &Path,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    fn go<T: Real>(
        cfg: &RunConfig,
        manifest: &Path,
        checkpoint: &Path,
        log: &Path,
        on_epoch: impl FnMut(&EpochLog),
    ) -> Result<Vec<EpochLog>> {
        let model = cfg.model_config()?;
        let data = load_fold_data(cfg, manifest)?;
        let samples = load_samples::<T>(&data.train, model.image_size)?;
        let params = ModelParams::<T>::init(&model, &mut Rng::new(cfg.stream_seed(Stream::Init)))?;
        let state = train(params, &samples, &cfg.train_config(), on_epoch)?;
        save_checkpoint(&state.params, checkpoint)?;
        write_loss_log(&state.history, log)?;
        Ok(state.history)
    }
    match cfg.precision {
        Precision::F32 => go::<f32>(cfg, manifest, checkpoint, log, on_epoch),
        Precision::F64 => go::<f64>(cfg, manifest, checkpoint, log, on_epoch),
    }
    .map_err(Error::in_stage("train"))
}

/// Builds the reference bank from the live rows of the fold's training
/// split at `tap` (the checkpoint's score tap when `None`).
pub fn bank_stage(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, tap: Option<Tap>, out: &Path) -> Result<usize> {
    fn go<T: Real>(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, tap: Option<Tap>, out: &Path) -> Result<usize> {
        let params = load_checkpoint::<T>(checkpoint)?;
        let fingerprint = checkpoint_fingerprint(checkpoint)?;
        let data = load_fold_data(cfg, manifest)?;
        let live = live_only(&load_samples::<T>(&data.train, params.config.image_size)?);
        let tap = tap.unwrap_or(Tap::Block(params.config.score_tap));
        let bank = build_bank(&params, &live, tap, &fingerprint)?;
        bank.save(out)?;
        Ok(bank.len())
    }
    match cfg.precision {
        Precision::F32 => go::<f32>(cfg, checkpoint, manifest, tap, out),
        Precision::F64 => go::<f64>(cfg, checkpoint, manifest, tap, out),
    }
    .map_err(Error::in_stage("bank"))
}

/// Output files of the score stage.
#[derive(Debug, Clone)]
pub struct ScoreOutputs<'a> {
    pub scores: &'a Path,
    pub calib_scores: &'a Path,
    pub threshold: &'a Path,
}

/// Scores the fold's calibration and test splits, fits the threshold on
/// the calibration scores and writes both score files and the threshold.
pub fn score_stage(
    cfg: &RunConfig,
    checkpoint: &Path,
    bank: &Path,
    manifest: &Path,
    out: &ScoreOutputs<'_>,
) -> Result<ThresholdRecord> {
    fn go<T: Real>(cfg: &RunConfig, checkpoint: &Path, bank: &Path, manifest: &Path, out: &ScoreOutputs<'_>) -> Result<ThresholdRecord> {
        let params = load_checkpoint::<T>(checkpoint)?;
        let bank = ReferenceBank::<T>::load(bank)?;
        if bank.model_fingerprint != checkpoint_fingerprint(checkpoint)? {
            return Err(Error::contract("reference bank was built from a different checkpoint"));
        }
        let data = load_fold_data(cfg, manifest)?;
        let size = params.config.image_size;
        let test = score_samples(&params, &bank, &load_samples::<T>(&data.test, size)?)?;
        let calib = if data.calib_source == CalibSource::Test {
            test.clone()
        } else {
            score_samples(&params, &bank, &load_samples::<T>(&data.calib, size)?)?
        };
        let record = ThresholdRecord::fit(&data.fold, &calib, data.calib_source)?;
        let reports = |s: &[ScoredSample]| s.iter().map(|s| ScoreReport::from_scored(s, record.threshold)).collect::<Vec<_>>();
        write_scores(out.scores, &reports(&test))?;
        write_scores(out.calib_scores, &reports(&calib))?;
        write_json(&record, out.threshold)?;
        Ok(record)
    }
    match cfg.precision {
        Precision::F32 => go::<f32>(cfg, checkpoint, bank, manifest, out),
        Precision::F64 => go::<f64>(cfg, checkpoint, bank, manifest, out),
    }
    .map_err(Error::in_stage("score"))
}

/// Output files of the eval stage.
#[derive(Debug, Clone)]
pub struct EvalOutputs<'a> {
    pub metrics: &'a Path,
    pub report: Option<&'a Path>,
    pub curve: Option<&'a Path>,
}

/// Metrics of a score file at a fixed threshold. Ground truth comes from
/// `manifest`.
pub fn eval_stage(scores: &Path, manifest: &Path, threshold: &ThresholdRecord, out: &EvalOutputs<'_>) -> Result<EvalReport> {
    (|| {
        let manifest = Manifest::parse(
            &std::fs::read_to_string(manifest).map_err(Error::at_path(manifest))?,
            manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
        )?;
        let scored = join_scores(&read_scores(scores)?, &manifest)?;
        let report = EvalReport {
            fold: threshold.fold.clone(),
            calib_split: threshold.calib_split,
            metrics: compute_metrics(&scored, threshold.threshold)?,
        };
        write_json(&report, out.metrics)?;
        if let Some(p) = out.report {
            std::fs::write(p, report.to_text()).map_err(Error::at_path(p))?;
        }
        if let Some(p) = out.curve {
            let svg = curve_svg(&report.metrics.curve, report.metrics.threshold);
            std::fs::write(p, svg).map_err(Error::at_path(p))?;
        }
        Ok(report)
    })()
    .map_err(Error::in_stage("eval"))
}

pub fn read_threshold(path: &Path) -> Result<ThresholdRecord> {
    read_json(path)
}

/// Drives one run's stages against a run directory. Each stage reads its
/// inputs from disk, so a missing artifact fails the stage that needs it.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub cfg: RunConfig,
    pub paths: RunPaths,
    /// Print per-epoch losses to standard error.
    pub verbose: bool,
}

impl Pipeline {
    /// Creates the run directory and writes the resolved config into it.
    pub fn new(cfg: RunConfig, root: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let paths = RunPaths::new(root);
        std::fs::create_dir_all(&paths.root).map_err(Error::at_path(&paths.root))?;
        std::fs::write(paths.config(), cfg.to_toml()).map_err(Error::at_path(paths.config()))?;
        Ok(Self {
            cfg,
            paths,
            verbose: false,
        })
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.cfg.data.manifest.clone().unwrap_or_else(|| self.paths.synth_manifest())
    }

    /// Generates the synthetic corpus, unless the config names a manifest.
    pub fn synth(&self) -> Result<Manifest> {
        (|| match &self.cfg.data.manifest {
            Some(p) => Manifest::read(p),
            None => synth_dataset(&self.cfg.synth_config(), &self.paths.data_dir()),
        })()
        .map_err(Error::in_stage("synth"))
    }

    pub fn train(&self) -> Result<Vec<EpochLog>> {
        let verbose = self.verbose;
        train_stage(
            &self.cfg,
            &self.manifest_path(),
            &self.paths.checkpoint(),
            &self.paths.train_log(),
            |e| {
                if verbose {
                    eprintln!("{}", e.summary_line());
                }
            },
        )
    }

    pub fn bank(&self) -> Result<usize> {
        bank_stage(&self.cfg, &self.paths.checkpoint(), &self.manifest_path(), None, &self.paths.bank())
    }

    pub fn score(&self) -> Result<ThresholdRecord> {
        let (scores, calib_scores, threshold) = (self.paths.scores(), self.paths.calib_scores(), self.paths.threshold());
        score_stage(
            &self.cfg,
            &self.paths.checkpoint(),
            &self.paths.bank(),
            &self.manifest_path(),
            &ScoreOutputs {
                scores: &scores,
                calib_scores: &calib_scores,
                threshold: &threshold,
            },
        )
    }

    pub fn eval(&self) -> Result<EvalReport> {
        let threshold = read_threshold(&self.paths.threshold()).map_err(Error::in_stage("eval"))?;
        let (metrics, report, curve) = (self.paths.metrics(), self.paths.report(), self.paths.curve());
        eval_stage(
            &self.paths.scores(),
            &self.manifest_path(),
            &threshold,
            &EvalOutputs {
                metrics: &metrics,
                report: Some(&report),
                curve: self.cfg.eval.plot.then_some(curve.as_path()),
            },
        )
    }

    /// Runs every stage and writes the run summary.
    pub fn run(&self) -> Result<RunSummary> {
        let manifest = self.synth()?;
        let history = self.train()?;
        self.bank()?;
        let threshold = self.score()?;
        let report = self.eval()?;
        (|| {
            let protocol = resolve_protocol(&self.cfg.data.protocol)?;
            let s = RunSummary {
                config: self.cfg.to_toml(),
                config_sha256: self.cfg.hash(),
                seeds: Seeds {
                    root: self.cfg.seed,
                    synth: self.cfg.stream_seed(Stream::Synth),
                    init: self.cfg.stream_seed(Stream::Init),
                    train: self.cfg.stream_seed(Stream::Train),
                    frames: self.cfg.stream_seed(Stream::Frames),
                },
                protocol: protocol.name.clone(),
                protocol_sha256: sha256_hex(protocol.to_toml().as_bytes()),
                fold: report.fold.clone(),
                data_sha256: data_fingerprint(&manifest)?,
                checkpoint_sha256: checkpoint_fingerprint(&self.paths.checkpoint())?,
                bank_sha256: sha256_hex(&std::fs::read(self.paths.bank()).map_err(Error::at_path(self.paths.bank()))?),
                epochs: history.len(),
                final_loss: history.last().map_or(f64::NAN, |h| h.loss.l_overall),
                threshold,
                apcer: report.metrics.apcer,
                bpcer: report.metrics.bpcer,
                acer: report.metrics.acer,
            };
            write_json(&s, &self.paths.summary())?;
            Ok(s)
        })()
        .map_err(Error::in_stage("summary"))
    }
}

pub fn calib_name(c: CalibSource) -> &'static str {
    match c {
        CalibSource::Test => "test",
        CalibSource::Calib => "calib",
    }
}

/// Which tap an ablation varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    /// Train once per fold; rebuild the bank at each tap.
    Score,
    /// Retrain per fold for each loss-tap choice.
    Loss,
}

impl std::str::FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "score" => Ok(Self::Score),
            "loss" => Ok(Self::Loss),
            _ => Err(Error::invalid(format!("ablation kind `{s}`: expected score or loss"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub tap: String,
    /// Per fold, in protocol order.
    pub folds: Vec<MetricsReport>,
    pub summary: FoldSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub kind: AblationKind,
    pub protocol: String,
    pub fold_names: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Rows of `APCER / BPCER / ACER` as `mean±std` percentages over folds.
    pub fn to_text(&self) -> String {
        let head = match self.kind {
            AblationKind::Score => "Score tap",
            AblationKind::Loss => "Loss tap",
        };
        let mut s = format!("{} ({} folds of `{}`)\n", head, self.fold_names.len(), self.protocol);
        let _ = writeln!(s, "{:<10} {:>14} {:>14} {:>14}", head.split(' ').next().unwrap_or(head), "APCER(%)", "BPCER(%)", "ACER(%)");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:>14} {:>14} {:>14}",
                r.tap,
                r.summary.apcer.to_string(),
                r.summary.bpcer.to_string(),
                r.summary.acer.to_string()
            );
        }
        s
    }
}

/// Score taps `taps` plus the final norm, deduplicated in block order.
pub fn score_ablation_taps(taps: &[usize], depth: usize) -> Result<Vec<Tap>> {
    let mut out: Vec<Tap> = Vec::new();
    for &k in taps {
        let t = Tap::Block(k);
        t.validate(depth)?;
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out.sort_by_key(|t| t.token_index(depth));
    out.push(Tap::FinalNorm);
    Ok(out)
}

/// Trains one model per fold (or per fold and loss tap) and reports
/// metrics per tap, aggregated over every fold of `protocol`.
pub fn ablate(
    cfg: &RunConfig,
    manifest: &Manifest,
    protocol: &ProtocolSpec,
    kind: AblationKind,
    taps: &[usize],
) -> Result<AblationTable> {
    match cfg.precision {
        Precision::F32 => ablate_as::<f32>(cfg, manifest, protocol, kind, taps),
        Precision::F64 => ablate_as::<f64>(cfg, manifest, protocol, kind, taps),
    }
}

struct LoadedFold<T> {
    train: Vec<Sample<T>>,
    calib: Option<Vec<Sample<T>>>,
    test: Vec<Sample<T>>,
    calib_source: CalibSource,
}

fn load_fold<T: Real>(cfg: &RunConfig, manifest: &Manifest, protocol: &ProtocolSpec, fold: usize, size: usize) -> Result<LoadedFold<T>> {
    let d = fold_data(manifest, protocol, fold, cfg.data.calib, cfg.data.frames_per_video, cfg.stream_seed(Stream::Frames))?;
    Ok(LoadedFold {
        train: load_samples(&d.train, size)?,
        calib: match d.calib_source {
            CalibSource::Test => None,
            CalibSource::Calib => Some(load_samples(&d.calib, size)?),
        },
        test: load_samples(&d.test, size)?,
        calib_source: d.calib_source,
    })
}

fn fit_and_evaluate<T: Real>(params: &ModelParams<T>, fold: &LoadedFold<T>, tap: Tap) -> Result<MetricsReport> {
    let bank = build_bank(params, &live_only(&fold.train), tap, "")?;
    let test = score_samples(params, &bank, &fold.test)?;
    let calib = match &fold.calib {
        Some(c) => score_samples(params, &bank, c)?,
        None => test.clone(),
    };
    let record = ThresholdRecord::fit("", &calib, fold.calib_source)?;
    compute_metrics(&test, record.threshold)
}

fn train_fold<T: Real>(cfg: &RunConfig, model: &ModelConfig, fold: &LoadedFold<T>) -> Result<ModelParams<T>> {
    let params = ModelParams::<T>::init(model, &mut Rng::new(cfg.stream_seed(Stream::Init)))?;
    Ok(train(params, &fold.train, &cfg.train_config(), |_| {})?.params)
}

fn ablate_as<T: Real>(
    cfg: &RunConfig,
    manifest: &Manifest,
    protocol: &ProtocolSpec,
    kind: AblationKind,
    taps: &[usize],
) -> Result<AblationTable> {
    let model = cfg.model_config()?;
    if taps.is_empty() {
        return Err(Error::invalid("no taps to ablate"));
    }
    let rows: Vec<Tap> = match kind {
        AblationKind::Score => score_ablation_taps(taps, model.depth)?,
        AblationKind::Loss => {
            let mut v: Vec<usize> = taps.to_vec();
            v.sort_unstable();
            v.dedup();
            for &k in &v {
                Tap::Block(k).validate(model.depth)?;
            }
            v.into_iter().map(Tap::Block).collect()
        }
    };
    let folds = protocol.num_folds();
    let mut per_row: Vec<Vec<MetricsReport>> = vec![Vec::with_capacity(folds); rows.len()];
    for f in 0..folds {
        let fold = load_fold::<T>(cfg, manifest, protocol, f, model.image_size)?;
        match kind {
            AblationKind::Score => {
                let params = train_fold(cfg, &model, &fold)?;
                for (i, &tap) in rows.iter().enumerate() {
                    per_row[i].push(fit_and_evaluate(&params, &fold, tap)?);
                }
            }
            AblationKind::Loss => {
                for (i, &tap) in rows.iter().enumerate() {
                    let Tap::Block(k) = tap else { unreachable!("loss taps are blocks") };
                    let m = ModelConfig { loss_tap: k, ..model.clone() };
                    let params = train_fold(cfg, &m, &fold)?;
                    per_row[i].push(fit_and_evaluate(&params, &fold, Tap::Block(model.score_tap))?);
                }
            }
        }
    }
    let rows = rows
        .iter()
        .zip(per_row)
        .map(|(tap, folds)| {
            Ok(AblationRow {
                tap: tap.label(),
                summary: aggregate_folds(&folds)?,
                folds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable {
        kind,
        protocol: protocol.name.clone(),
        fold_names: protocol.fold_names(),
        rows,
    })
}
