//! L2-constrained softmax, attention-weighted patch loss and the composite
//! training objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::sample::{Label, PatchLabels};
use crate::scalar::Real;
use crate::vit::{self, l2_rescale, EncoderActivations, Linear, ModelParams, OutputGrads};

/// Which terms of the objective are active. All three by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Final-norm class token.
    pub class: bool,
    /// Intermediate class token at the loss tap.
    pub tap: bool,
    /// Attention-weighted patch loss.
    pub apl: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            class: true,
            tap: true,
            apl: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub l_class: T,
    pub l_tap: T,
    pub l_apl: T,
    pub l_overall: T,
}

impl<T: Real> LossBreakdown<T> {
    fn from_terms(l_class: T, l_tap: T, l_apl: T) -> Self {
        Self {
            l_class,
            l_tap,
            l_apl,
            l_overall: l_class + l_tap + l_apl,
        }
    }

    pub fn to_f64(self) -> LossBreakdown<f64> {
        LossBreakdown {
            l_class: self.l_class.as_f64(),
            l_tap: self.l_tap.as_f64(),
            l_apl: self.l_apl.as_f64(),
            l_overall: self.l_overall.as_f64(),
        }
    }
}

/// `−log softmax(logits)[target]` and its gradient `softmax − onehot`.
pub fn cross_entropy<T: Real>(logits: &[T], target: usize) -> (T, Vec<T>) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    let loss = lse - logits[target];
    let mut grad: Vec<T> = logits.iter().map(|&z| (z - lse).exp()).collect();
    grad[target] -= T::one();
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2SoftmaxLoss<T> {
    pub loss: T,
    /// The feature had zero norm and was used without rescaling.
    pub degenerate: bool,
}

/// Cross-entropy of `W (α f/‖f‖) + b` against `label`, for one sample.
/// Batch averaging is left to the caller.
pub fn l2softmax<T: Real>(feature: &[T], head: &Linear<T>, label: Label, alpha: T) -> Result<L2SoftmaxLoss<T>> {
    if feature.len() != head.in_dim {
        return Err(Error::invalid(format!(
            "feature length {} does not match head input {}",
            feature.len(),
            head.in_dim
        )));
    }
    if label.class_index() >= head.out_dim {
        return Err(Error::invalid("label index exceeds the number of classes"));
    }
    if !(alpha > T::zero()) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let r = l2_rescale(feature, alpha);
    let logits = vit::ops::linear_forward(head, &r.feature, 1);
    let (loss, _) = cross_entropy(&logits, label.class_index());
    Ok(L2SoftmaxLoss {
        loss,
        degenerate: r.degenerate,
    })
}

/// Expands optional patch labels to one target per patch; without patch
/// labels every patch inherits the image label.
pub fn patch_targets(patch_labels: Option<&PatchLabels>, image_label: Label, patches: usize) -> Result<Vec<Label>> {
    match patch_labels {
        Some(p) if p.len() != patches => Err(Error::invalid(format!(
            "{} patch labels for {patches} patches",
            p.len()
        ))),
        Some(p) => Ok(p.labels.clone()),
        None => Ok(vec![image_label; patches]),
    }
}

/// `Σ_j w_j · CE(patch_logits_j, label_j)`.
pub fn apl<T: Real>(patch_logits: &[Vec<T>], labels: &[Label], weights: &[T]) -> Result<T> {
    if patch_logits.len() != labels.len() || labels.len() != weights.len() {
        return Err(Error::invalid(format!(
            "patch loss inputs disagree: {} logits, {} labels, {} weights",
            patch_logits.len(),
            labels.len(),
            weights.len()
        )));
    }
    Ok(patch_logits
        .iter()
        .zip(labels)
        .zip(weights)
        .map(|((z, l), &w)| w * cross_entropy(z, l.class_index()).0)
        .sum())
}

/// The three-term objective for one sample.
pub fn overall_loss<T: Real>(
    acts: &EncoderActivations<T>,
    label: Label,
    patch_labels: Option<&PatchLabels>,
    cfg: &LossConfig,
) -> Result<LossBreakdown<T>> {
    overall_loss_with_grads(acts, label, patch_labels, cfg).map(|(l, _)| l)
}

/// Objective plus its gradient with respect to every model output,
/// including the last block's attention (through the patch weights).
pub fn overall_loss_with_grads<T: Real>(
    acts: &EncoderActivations<T>,
    label: Label,
    patch_labels: Option<&PatchLabels>,
    cfg: &LossConfig,
) -> Result<(LossBreakdown<T>, OutputGrads<T>)> {
    let y = label.class_index();
    let n_classes = acts.logits_final.len();
    let zeros = || vec![T::zero(); n_classes];

    let (l_class, g_final) = if cfg.class {
        cross_entropy(&acts.logits_final, y)
    } else {
        (T::zero(), zeros())
    };
    let (l_tap, g_tap) = if cfg.tap {
        cross_entropy(&acts.logits_tap, y)
    } else {
        (T::zero(), zeros())
    };

    let np = acts.logits_patch.len();
    let (l_apl, g_patch, g_attn) = if cfg.apl {
        let targets = patch_targets(patch_labels, label, np)?;
        let (weights, total) = vit::class_attention_weights(&acts.attention_final, acts.heads, acts.tokens);
        let terms: Vec<(T, Vec<T>)> = acts
            .logits_patch
            .iter()
            .zip(&targets)
            .map(|(z, t)| cross_entropy(z, t.class_index()))
            .collect();
        let l_apl: T = terms.iter().zip(&weights).map(|((ce, _), &w)| w * *ce).sum();
        let g_patch = terms
            .iter()
            .zip(&weights)
            .map(|((_, g), &w)| g.iter().map(|&v| v * w).collect())
            .collect();
        // w_j = s_j / Σs with s_j the head-averaged class-row attention, so
        // ∂L/∂s_j = (ce_j − L)/Σs and ∂s_j/∂A[h,0,j] = 1/heads.
        let g_attn = if total > T::zero() {
            let (n, heads) = (acts.tokens, acts.heads);
            let scale = T::one() / (total * T::from_usize(heads).unwrap());
            let mut g = vec![T::zero(); heads * n * n];
            for h in 0..heads {
                for j in 1..n {
                    g[h * n * n + j] = (terms[j - 1].0 - l_apl) * scale;
                }
            }
            Some(g)
        } else {
            None
        };
        (l_apl, g_patch, g_attn)
    } else {
        (T::zero(), vec![zeros(); np], None)
    };

    Ok((
        LossBreakdown::from_terms(l_class, l_tap, l_apl),
        OutputGrads {
            logits_final: g_final,
            logits_tap: g_tap,
            logits_patch: g_patch,
            attention_final: g_attn,
        },
    ))
}

/// Per-sample objective and its gradient with respect to every parameter.
/// `image` must already be normalized.
pub fn loss_and_grad<T: Real>(
    params: &ModelParams<T>,
    image: &ImageTensor<T>,
    label: Label,
    patch_labels: Option<&PatchLabels>,
    cfg: &LossConfig,
) -> Result<(LossBreakdown<T>, ModelParams<T>)> {
    let (acts, cache) = vit::forward_cached(params, image)?;
    let (loss, out) = overall_loss_with_grads(&acts, label, patch_labels, cfg)?;
    Ok((loss, vit::backward(params, &cache, &out)))
}

/// Batch-mean objective and gradient (the mean over the mini-batch).
pub fn batch_loss_and_grad<T: Real>(
    params: &ModelParams<T>,
    batch: &[(ImageTensor<T>, Label, Option<PatchLabels>)],
    cfg: &LossConfig,
) -> Result<(LossBreakdown<T>, ModelParams<T>)> {
    use rayon::prelude::*;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let per_sample: Vec<Result<(LossBreakdown<T>, ModelParams<T>)>> = batch
        .par_iter()
        .map(|(img, label, patches)| loss_and_grad(params, img, *label, patches.as_ref(), cfg))
        .collect();
    // Reduce in index order so the result does not depend on scheduling.
    let mut grad = params.zeros_like();
    let mut sum = LossBreakdown::<T>::default();
    for r in per_sample {
        let (l, g) = r?;
        sum.l_class += l.l_class;
        sum.l_tap += l.l_tap;
        sum.l_apl += l.l_apl;
        grad.add_assign(&g);
    }
    let inv = T::one() / T::from_usize(batch.len()).unwrap();
    grad.scale(inv);
    Ok((
        LossBreakdown::from_terms(sum.l_class * inv, sum.l_tap * inv, sum.l_apl * inv),
        grad,
    ))
}
