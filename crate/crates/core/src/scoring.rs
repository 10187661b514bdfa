//! Live reference bank, max-cosine scoring and the FAR = FRR threshold.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{Container, MetaReader, MetaWriter, StoredTensor};
use crate::error::{Error, Result};
use crate::image::normalize_per_channel;
use crate::sample::{AttackType, Label, Sample};
use crate::scalar::Real;
use crate::vit::{forward, ModelParams, Tap};

pub const BANK_MAGIC: &[u8; 4] = b"FASB";
pub const BANK_VERSION: u16 = 1;

/// Unit-normalized live class tokens read at one tap.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBank<T> {
    pub dim: usize,
    /// `len × dim`, row-major.
    pub vectors: Vec<T>,
    pub source_ids: Vec<String>,
    pub tap: Tap,
    /// Hash of the checkpoint the tokens came from.
    pub model_fingerprint: String,
}

/// Best bank entry for one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub score: f64,
    pub index: usize,
    /// Zero-norm query; the score is fixed at −1.
    pub degenerate: bool,
}

fn norm<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}

impl<T: Real> ReferenceBank<T> {
    pub fn new(tap: Tap, model_fingerprint: impl Into<String>, dim: usize) -> Self {
        Self {
            dim,
            vectors: Vec::new(),
            source_ids: Vec::new(),
            tap,
            model_fingerprint: model_fingerprint.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Appends `token / ‖token‖`.
    pub fn push(&mut self, id: impl Into<String>, token: &[T]) -> Result<()> {
        let id = id.into();
        if token.len() != self.dim {
            return Err(Error::invalid(format!(
                "token of `{id}` has length {}, bank width is {}",
                token.len(),
                self.dim
            )));
        }
        let n = norm(token);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid(format!("token of `{id}` has norm {n} and cannot be normalized")));
        }
        self.vectors.extend(token.iter().map(|&v| T::lit(v.as_f64() / n)));
        self.source_ids.push(id);
        Ok(())
    }

    /// Max cosine similarity over the bank; the lowest index wins ties.
    pub fn best_match(&self, query: &[T]) -> Result<Match> {
        if self.is_empty() {
            return Err(Error::invalid("reference bank is empty"));
        }
        if query.len() != self.dim {
            return Err(Error::invalid(format!(
                "query length {} does not match bank width {}",
                query.len(),
                self.dim
            )));
        }
        let qn = norm(query);
        if !(qn > 0.0) {
            return Ok(Match {
                score: -1.0,
                index: 0,
                degenerate: true,
            });
        }
        let mut best = Match {
            score: f64::NEG_INFINITY,
            index: 0,
            degenerate: false,
        };
        for i in 0..self.len() {
            let r = self.row(i);
            let dot: f64 = query.iter().zip(r).map(|(&a, &b)| a.as_f64() * b.as_f64()).sum();
            let c = dot / (qn * norm(r));
            if c > best.score {
                best = Match {
                    score: c,
                    index: i,
                    degenerate: false,
                };
            }
        }
        best.score = best.score.clamp(-1.0, 1.0);
        Ok(best)
    }

    fn encode_meta(&self) -> Result<Vec<u8>> {
        let mut w = MetaWriter::default();
        w.bytes(tap_code(self.tap).as_bytes())?;
        w.bytes(self.model_fingerprint.as_bytes())?;
        w.u32(self.source_ids.len())?;
        for id in &self.source_ids {
            w.bytes(id.as_bytes())?;
        }
        Ok(w.0)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        Container {
            version: BANK_VERSION,
            meta: self.encode_meta()?,
            tensors: vec![StoredTensor::from_slice("vectors", vec![self.len(), self.dim], &self.vectors)],
        }
        .encode(BANK_MAGIC)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let c = Container::decode(bytes, BANK_MAGIC, BANK_VERSION)?;
        let mut r = MetaReader::new(&c.meta);
        let tap: Tap = r.string("tap")?.parse()?;
        let model_fingerprint = r.string("model fingerprint")?;
        let m = r.u32("reference count")?;
        let source_ids = (0..m).map(|_| r.string("source id")).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        let t = c.tensor("vectors")?;
        if t.shape.len() != 2 || t.shape[0] != m {
            return Err(Error::Tensor {
                tensor: t.name.clone(),
                message: format!("shape {:?} does not hold {m} rows", t.shape),
            });
        }
        Ok(Self {
            dim: t.shape[1],
            vectors: t.to_vec(),
            source_ids,
            tap,
            model_fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(Error::at_path(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path).map_err(Error::at_path(path))?)
    }
}

fn tap_code(tap: Tap) -> String {
    match tap {
        Tap::Block(k) => k.to_string(),
        Tap::FinalNorm => "final".into(),
    }
}

/// Class token of an sRGB sample at `tap`, after per-image normalization.
pub fn class_token<T: Real>(params: &ModelParams<T>, sample: &Sample<T>, tap: Tap) -> Result<Vec<T>> {
    tap.validate(params.config.depth)?;
    let acts = forward(params, &normalize_per_channel(&sample.image))?;
    Ok(acts.class_token(tap).to_vec())
}

/// Forwards every live sample and stacks its normalized class token.
pub fn build_bank<T: Real>(
    params: &ModelParams<T>,
    live: &[Sample<T>],
    tap: Tap,
    model_fingerprint: &str,
) -> Result<ReferenceBank<T>> {
    if live.is_empty() {
        return Err(Error::invalid("no live samples to build a reference bank from"));
    }
    if let Some(s) = live.iter().find(|s| s.label != Label::Live) {
        return Err(Error::contract(format!("reference bank input `{}` is not live", s.id)));
    }
    tap.validate(params.config.depth)?;
    let tokens: Vec<Result<Vec<T>>> = live.par_iter().map(|s| class_token(params, s, tap)).collect();
    let mut bank = ReferenceBank::new(tap, model_fingerprint, params.config.embed_dim);
    for (s, t) in live.iter().zip(tokens) {
        bank.push(s.id.clone(), &t?)?;
    }
    Ok(bank)
}

/// Score of one sample together with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub sample_id: String,
    pub label: Label,
    pub attack: AttackType,
    pub score: f64,
    pub nearest_reference: String,
    pub degenerate: bool,
}

/// Scores every sample against `bank` at the bank's tap.
pub fn score_samples<T: Real>(
    params: &ModelParams<T>,
    bank: &ReferenceBank<T>,
    samples: &[Sample<T>],
) -> Result<Vec<ScoredSample>> {
    let out: Vec<Result<ScoredSample>> = samples
        .par_iter()
        .map(|s| {
            let m = bank.best_match(&class_token(params, s, bank.tap)?)?;
            Ok(ScoredSample {
                sample_id: s.id.clone(),
                label: s.label,
                attack: s.attack,
                score: m.score,
                nearest_reference: if m.degenerate {
                    String::new()
                } else {
                    bank.source_ids[m.index].clone()
                },
                degenerate: m.degenerate,
            })
        })
        .collect();
    out.into_iter().collect()
}

/// Live when the score reaches the threshold.
pub fn predict(score: f64, threshold: f64) -> Label {
    if score >= threshold {
        Label::Live
    } else {
        Label::Spoof
    }
}

/// One row of the score CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub sample_id: String,
    pub score: f64,
    pub nearest_reference: String,
    pub predicted: Label,
}

impl ScoreReport {
    pub fn from_scored(s: &ScoredSample, threshold: f64) -> Self {
        Self {
            sample_id: s.sample_id.clone(),
            score: s.score,
            nearest_reference: s.nearest_reference.clone(),
            predicted: predict(s.score, threshold),
        }
    }
}

pub fn write_scores(path: &Path, reports: &[ScoreReport]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(Error::at_path(path))?;
    let mut w = csv::Writer::from_writer(file);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreReport>> {
    let file = std::fs::File::open(path).map_err(Error::at_path(path))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Counts behind FAR(θ) and FRR(θ) on sorted score lists:
/// `(spoof ≥ θ, live < θ)`.
fn error_counts(live_sorted: &[f64], spoof_sorted: &[f64], theta: f64) -> (usize, usize) {
    let accepted = spoof_sorted.len() - spoof_sorted.partition_point(|&s| s < theta);
    let rejected = live_sorted.partition_point(|&s| s < theta);
    (accepted, rejected)
}

fn sorted(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Candidate thresholds: every distinct observed score and the midpoint
/// between each pair of neighbours, ascending.
pub fn threshold_candidates(live: &[f64], spoof: &[f64]) -> Result<Vec<f64>> {
    let mut all = sorted(&[live, spoof].concat())?;
    all.dedup();
    let mut out = Vec::with_capacity(2 * all.len());
    for (i, &s) in all.iter().enumerate() {
        if i > 0 {
            out.push(all[i - 1] + (s - all[i - 1]) / 2.0);
        }
        out.push(s);
    }
    Ok(out)
}

/// The candidate minimizing |FAR − FRR|; ties go to the smaller FAR, then
/// the smaller threshold.
pub fn select_threshold(live: &[f64], spoof: &[f64]) -> Result<f64> {
    if live.is_empty() || spoof.is_empty() {
        return Err(Error::invalid("threshold selection needs live and spoof scores"));
    }
    let (ls, ss) = (sorted(live)?, sorted(spoof)?);
    let (nl, ns) = (ls.len() as u128, ss.len() as u128);
    let mut best: Option<(u128, u128, f64)> = None;
    for theta in threshold_candidates(live, spoof)? {
        let (a, r) = error_counts(&ls, &ss, theta);
        // |a/ns − r/nl| scaled by ns·nl stays an integer.
        let gap = (a as u128 * nl).abs_diff(r as u128 * ns);
        let key = (gap, a as u128 * nl, theta);
        if best.is_none_or(|b| (key.0, key.1) < (b.0, b.1)) {
            best = Some(key);
        }
    }
    Ok(best.expect("candidates are non-empty").2)
}

/// FAR and FRR at `theta`.
pub fn far_frr(live: &[f64], spoof: &[f64], theta: f64) -> (f64, f64) {
    let accepted = spoof.iter().filter(|&&s| s >= theta).count();
    let rejected = live.iter().filter(|&&s| s < theta).count();
    (accepted as f64 / spoof.len() as f64, rejected as f64 / live.len() as f64)
}
