//! Mini-batch training with Nesterov momentum and the augmentation gate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_fas_aug, apply_pda, FasAugConfig};
use crate::error::{Error, Result};
use crate::image::{normalize_per_channel, ImageTensor};
use crate::losses::{batch_loss_and_grad, LossBreakdown, LossConfig};
use crate::rng::{mix64, Rng};
use crate::sample::{Label, PatchLabels, Sample};
use crate::scalar::Real;
use crate::vit::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub momentum: f64,
    /// Probability of one FAS-Aug simulator per sample.
    pub p_fas: f64,
    /// Probability that a spoof sample gets live-patch masking.
    pub p_pda: f64,
    /// Per-patch replacement probability once masking is on.
    pub p_patch: f64,
    /// Augmentation switches off for good once an epoch's mean overall
    /// loss falls below this.
    pub gate_threshold: f64,
    /// Derived from the run's root seed; not part of the file form.
    #[serde(skip)]
    pub seed: u64,
    pub loss: LossConfig,
    pub augment: FasAugConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            learning_rate: 1e-4,
            epochs: 200,
            momentum: 0.9,
            p_fas: 0.2,
            p_pda: 0.2,
            p_patch: 0.5,
            gate_threshold: 1e-3,
            seed: 0,
            loss: LossConfig::default(),
            augment: FasAugConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Settings for training the toy model from scratch on synthetic data.
    pub fn toy() -> Self {
        Self {
            epochs: 60,
            learning_rate: 5e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_fas", self.p_fas), ("p_pda", self.p_pda), ("p_patch", self.p_patch)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        self.augment.validate()
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossBreakdown<f64>,
    /// Whether augmentation was active during this epoch.
    pub aug_enabled: bool,
    pub fas_applied: usize,
    pub pda_applied: usize,
}

impl EpochLog {
    /// One-line progress report.
    pub fn summary_line(&self) -> String {
        format!(
            "epoch {:>4}  overall {:.5}  class {:.5}  tap {:.5}  patch {:.5}  aug {}",
            self.epoch,
            self.loss.l_overall,
            self.loss.l_class,
            self.loss.l_tap,
            self.loss.l_apl,
            if self.aug_enabled { "on" } else { "off" }
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub params: ModelParams<T>,
    pub velocity: ModelParams<T>,
    pub epoch: usize,
    pub augmentation_enabled: bool,
    pub history: Vec<EpochLog>,
}

impl<T: Real> TrainState<T> {
    pub fn new(params: ModelParams<T>) -> Self {
        Self {
            velocity: params.zeros_like(),
            params,
            epoch: 0,
            augmentation_enabled: true,
            history: Vec::new(),
        }
    }

    /// `v ← μv − lr·g; θ ← θ + μv − lr·g`. Rejects non-finite gradients
    /// before touching any state.
    pub fn nesterov_step(&mut self, grads: &ModelParams<T>, lr: f64, momentum: f64) -> Result<()> {
        grads.check_finite()?;
        let (lr, mu) = (T::lit(lr), T::lit(momentum));
        let params = self.params.tensors_mut();
        let velocity = self.velocity.tensors_mut();
        for ((p, v), g) in params.into_iter().zip(velocity).zip(grads.tensors()) {
            nesterov_update(p.data, v.data, g.data, lr, mu);
        }
        Ok(())
    }
}

/// Element-wise Nesterov update on flat buffers.
pub fn nesterov_update<T: Real>(theta: &mut [T], velocity: &mut [T], grad: &[T], lr: T, momentum: T) {
    for ((t, v), &g) in theta.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v - lr * g;
        *t += momentum * *v - lr * g;
    }
}

/// A training input after augmentation and normalization.
pub type Prepared<T> = (ImageTensor<T>, Label, Option<PatchLabels>);

struct PrepOutcome<T> {
    item: Prepared<T>,
    fas: bool,
    pda: bool,
}

fn prepare_sample<T: Real>(
    sample: &Sample<T>,
    live_partners: &[&Sample<T>],
    augment: bool,
    cfg: &TrainConfig,
    patch_size: usize,
    rng: &mut Rng,
) -> Result<PrepOutcome<T>> {
    if !augment {
        return Ok(PrepOutcome {
            item: (normalize_per_channel(&sample.image), sample.label, sample.patch_labels.clone()),
            fas: false,
            pda: false,
        });
    }
    let outcome = apply_fas_aug(sample, rng, cfg.p_fas, &cfg.augment)?;
    let fas = outcome.op_applied.is_some();
    let mut current = Sample {
        image: outcome.image,
        label: outcome.label_after,
        attack: outcome.attack_after,
        ..sample.clone()
    };
    let mut pda = false;
    if current.label == Label::Spoof && !live_partners.is_empty() && rng.bernoulli(cfg.p_pda) {
        let partner = live_partners[rng.below(live_partners.len())];
        current = apply_pda(&current, partner, rng, cfg.p_patch, patch_size)?;
        pda = true;
    }
    Ok(PrepOutcome {
        item: (normalize_per_channel(&current.image), current.label, current.patch_labels),
        fas,
        pda,
    })
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    mix64(seed ^ mix64(0x7261_696e ^ epoch as u64))
}

/// Augments and normalizes one mini-batch. Sample `i` of the batch uses
/// the generator `batch_seed ⊕ i`, so preparation order does not matter.
pub fn prepare_batch<T: Real>(
    batch: &[&Sample<T>],
    augment: bool,
    cfg: &TrainConfig,
    patch_size: usize,
    batch_seed: u64,
) -> Result<(Vec<Prepared<T>>, usize, usize)> {
    let live: Vec<&Sample<T>> = batch.iter().copied().filter(|s| s.label == Label::Live).collect();
    let outcomes: Vec<Result<PrepOutcome<T>>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = Rng::for_item(batch_seed, i as u64);
            prepare_sample(s, &live, augment, cfg, patch_size, &mut rng)
        })
        .collect();
    let (mut fas, mut pda) = (0, 0);
    let mut items = Vec::with_capacity(batch.len());
    for o in outcomes {
        let o = o?;
        fas += o.fas as usize;
        pda += o.pda as usize;
        items.push(o.item);
    }
    Ok((items, fas, pda))
}

/// One pass over `dataset` in a seeded order, one optimizer step per batch.
pub fn train_epoch<T: Real>(state: &mut TrainState<T>, dataset: &[Sample<T>], cfg: &TrainConfig) -> Result<EpochLog> {
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let seed = epoch_seed(cfg.seed, state.epoch);
    let mut order_rng = Rng::new(seed);
    let order = order_rng.permutation(dataset.len());
    let augment = state.augmentation_enabled;
    let patch_size = state.params.config.patch_size;

    let mut sum = LossBreakdown::<f64>::default();
    let (mut fas, mut pda) = (0, 0);
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let batch: Vec<&Sample<T>> = chunk.iter().map(|&i| &dataset[i]).collect();
        let batch_seed = mix64(seed ^ (b as u64 + 1));
        let (items, f, p) = prepare_batch(&batch, augment, cfg, patch_size, batch_seed)?;
        fas += f;
        pda += p;
        let (loss, grads) = batch_loss_and_grad(&state.params, &items, &cfg.loss)?;
        state.nesterov_step(&grads, cfg.learning_rate, cfg.momentum)?;
        let n = items.len() as f64;
        let l = loss.to_f64();
        sum.l_class += l.l_class * n;
        sum.l_tap += l.l_tap * n;
        sum.l_apl += l.l_apl * n;
        sum.l_overall += l.l_overall * n;
    }
    let n = dataset.len() as f64;
    let mean = LossBreakdown {
        l_class: sum.l_class / n,
        l_tap: sum.l_tap / n,
        l_apl: sum.l_apl / n,
        l_overall: sum.l_overall / n,
    };
    let log = EpochLog {
        epoch: state.epoch,
        loss: mean,
        aug_enabled: augment,
        fas_applied: fas,
        pda_applied: pda,
    };
    if mean.l_overall < cfg.gate_threshold {
        state.augmentation_enabled = false;
    }
    state.epoch += 1;
    state.history.push(log.clone());
    Ok(log)
}

/// Runs `cfg.epochs` epochs, calling `on_epoch` after each.
pub fn train<T: Real>(
    params: ModelParams<T>,
    dataset: &[Sample<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainState<T>> {
    cfg.validate()?;
    let mut state = TrainState::new(params);
    for _ in 0..cfg.epochs {
        let log = train_epoch(&mut state, dataset, cfg)?;
        on_epoch(&log);
    }
    Ok(state)
}

/// Writes the per-epoch loss log as CSV.
pub fn write_loss_log(history: &[EpochLog], path: &std::path::Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(Error::at_path(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["epoch", "l_class", "l_tap", "l_apl", "l_overall", "aug_enabled"])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            h.loss.l_class.to_string(),
            h.loss.l_tap.to_string(),
            h.loss.l_apl.to_string(),
            h.loss.l_overall.to_string(),
            h.aug_enabled.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
