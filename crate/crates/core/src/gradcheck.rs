//! Central-difference check of the hand-written backward pass.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::{normalize_per_channel, ImageTensor};
use crate::losses::{batch_loss_and_grad, LossConfig};
use crate::rng::Rng;
use crate::sample::{Label, PatchLabels};
use crate::vit::{ModelConfig, ModelParams};

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckOptions {
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so that entries whose
    /// gradient is numerically zero are judged on absolute error.
    pub denominator_floor: f64,
    /// Standard deviation of the noise added to every parameter after the
    /// usual initialization, to move away from the near-linear regime.
    pub perturbation: f64,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            samples: 4,
            step: 1e-4,
            tolerance: 1e-4,
            denominator_floor: 1e-6,
            perturbation: 0.1,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub parameters_checked: usize,
    pub max_rel_error: f64,
    pub worst: GradCheckEntry,
    pub seconds: f64,
    pub passed: bool,
}

/// The small model the check runs on: two blocks of width 8, two heads,
/// 16 px images with 8 px patches.
pub fn grad_check_config() -> ModelConfig {
    ModelConfig::new(16, 8, 2, 8, 2)
}

/// Random normalized images; alternate labels, and spoof images carry a
/// mixed live/spoof patch map so the patch loss sees both targets.
pub fn grad_check_batch(
    config: &ModelConfig,
    n: usize,
    rng: &mut Rng,
) -> Vec<(ImageTensor<f64>, Label, Option<PatchLabels>)> {
    let s = config.image_size;
    (0..n)
        .map(|i| {
            let img = ImageTensor::from_fn(s, s, |_, _, _| rng.next_f64());
            let label = if i % 2 == 0 { Label::Live } else { Label::Spoof };
            let patches = (label == Label::Spoof).then(|| {
                let labels = (0..config.num_patches())
                    .map(|j| if j % 3 == 0 { Label::Live } else { Label::Spoof })
                    .collect();
                PatchLabels {
                    grid: config.grid(),
                    labels,
                }
            });
            (normalize_per_channel(&img), label, patches)
        })
        .collect()
}

/// Compares the analytic gradient of the batch-mean objective with central
/// differences for every parameter, in `f64`.
pub fn grad_check(config: &ModelConfig, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if opts.samples == 0 || !(opts.step > 0.0) {
        return Err(Error::invalid("grad check needs at least one sample and a positive step"));
    }
    let start = Instant::now();
    let mut rng = Rng::new(opts.seed);
    let mut params = ModelParams::<f64>::init(config, &mut rng)?;
    for t in params.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v += opts.perturbation * rng.normal());
    }
    let batch = grad_check_batch(config, opts.samples, &mut rng);
    let (_, grad) = batch_loss_and_grad(&params, &batch, &opts.loss)?;
    let analytic: Vec<(String, Vec<f64>)> = grad.tensors().into_iter().map(|t| (t.name, t.data.to_vec())).collect();

    let loss_at = |p: &ModelParams<f64>| batch_loss(p, &batch, &opts.loss);

    let mut worst = GradCheckEntry {
        tensor: String::new(),
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        rel_error: -1.0,
    };
    let mut checked = 0;
    for (ti, (name, a)) in analytic.iter().enumerate() {
        for (k, &ak) in a.iter().enumerate() {
            let original = params.tensors()[ti].data[k];
            params.tensors_mut()[ti].data[k] = original + opts.step;
            let plus = loss_at(&params)?;
            params.tensors_mut()[ti].data[k] = original - opts.step;
            let minus = loss_at(&params)?;
            params.tensors_mut()[ti].data[k] = original;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let denom = ak.abs().max(numeric.abs()).max(opts.denominator_floor);
            let rel = (ak - numeric).abs() / denom;
            if rel > worst.rel_error {
                worst = GradCheckEntry {
                    tensor: name.clone(),
                    index: k,
                    analytic: ak,
                    numeric,
                    rel_error: rel,
                };
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        parameters_checked: checked,
        max_rel_error: worst.rel_error,
        passed: worst.rel_error < opts.tolerance,
        worst,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn batch_loss(
    params: &ModelParams<f64>,
    batch: &[(ImageTensor<f64>, Label, Option<PatchLabels>)],
    cfg: &LossConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for (img, label, patches) in batch {
        let acts = crate::vit::forward(params, img)?;
        total += crate::losses::overall_loss(&acts, *label, patches.as_ref(), cfg)?.l_overall;
    }
    Ok(total / batch.len() as f64)
}
