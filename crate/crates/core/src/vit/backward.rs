use crate::scalar::Real;

use super::forward::{BlockCache, ForwardCache};
use super::ops::{axpy, dot, gelu_grad, l2_rescale_backward, layer_norm_backward, linear_backward, Rescaled};
use super::params::{Block, Linear, ModelParams};

/// Loss gradients with respect to the model outputs.
#[derive(Debug, Clone)]
pub struct OutputGrads<T> {
    pub logits_final: Vec<T>,
    pub logits_tap: Vec<T>,
    pub logits_patch: Vec<Vec<T>>,
    /// Gradient on the last block's attention probabilities, when a loss
    /// reads them (`heads × tokens × tokens`).
    pub attention_final: Option<Vec<T>>,
}

fn head_backward<T: Real>(
    head: &Linear<T>,
    r: &Rescaled<T>,
    dz: &[T],
    alpha: T,
    grad: &mut Linear<T>,
) -> Vec<T> {
    let d_hat = linear_backward(head, &r.feature, dz, 1, grad);
    l2_rescale_backward(r, alpha, &d_hat)
}

fn block_backward<T: Real>(
    blk: &Block<T>,
    cache: &BlockCache<T>,
    dx: Vec<T>,
    extra_dattn: Option<&[T]>,
    heads: usize,
    grad: &mut Block<T>,
) -> Vec<T> {
    let d = blk.proj.out_dim;
    let n = dx.len() / d;
    let dh = d / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();

    // MLP branch.
    let dg = linear_backward(&blk.fc2, &cache.g, &dx, n, &mut grad.fc2);
    let du: Vec<T> = dg.iter().zip(&cache.u).map(|(&g, &u)| g * gelu_grad(u)).collect();
    let dh2 = linear_backward(&blk.fc1, &cache.h2, &du, n, &mut grad.fc1);
    let mut dx1 = dx;
    let from_ln2 = layer_norm_backward(&blk.ln2, &cache.ln2, &dh2, d, &mut grad.ln2);
    dx1.iter_mut().zip(&from_ln2).for_each(|(a, &b)| *a += b);

    // Attention branch.
    let d_o = linear_backward(&blk.proj, &cache.o, &dx1, n, &mut grad.proj);
    let qkv = &cache.qkv;
    let mut dqkv = vec![T::zero(); n * 3 * d];
    let mut d_a = vec![T::zero(); n];
    let mut d_s = vec![T::zero(); n];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..n {
            let row = &cache.attn[(h * n + i) * n..(h * n + i + 1) * n];
            let doi = &d_o[i * d + off..i * d + off + dh];
            for j in 0..n {
                let v = &qkv[j * 3 * d + 2 * d + off..j * 3 * d + 2 * d + off + dh];
                d_a[j] = dot(doi, v);
                if let Some(extra) = extra_dattn {
                    d_a[j] += extra[(h * n + i) * n + j];
                }
                let dv = &mut dqkv[j * 3 * d + 2 * d + off..j * 3 * d + 2 * d + off + dh];
                axpy(dv, row[j], doi);
            }
            let row_dot = dot(row, &d_a);
            for j in 0..n {
                d_s[j] = row[j] * (d_a[j] - row_dot) * scale;
            }
            let q = &qkv[i * 3 * d + off..i * 3 * d + off + dh];
            for j in 0..n {
                if d_s[j] == T::zero() {
                    continue;
                }
                let k = &qkv[j * 3 * d + d + off..j * 3 * d + d + off + dh];
                axpy(&mut dqkv[i * 3 * d + off..i * 3 * d + off + dh], d_s[j], k);
                axpy(&mut dqkv[j * 3 * d + d + off..j * 3 * d + d + off + dh], d_s[j], q);
            }
        }
    }
    let dh1 = linear_backward(&blk.qkv, &cache.h1, &dqkv, n, &mut grad.qkv);
    let from_ln1 = layer_norm_backward(&blk.ln1, &cache.ln1, &dh1, d, &mut grad.ln1);
    dx1.iter_mut().zip(&from_ln1).for_each(|(a, &b)| *a += b);
    dx1
}

/// Back-propagates output gradients through a cached forward pass.
pub(crate) fn backward<T: Real>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    out: &OutputGrads<T>,
) -> ModelParams<T> {
    let c = &params.config;
    let (d, n, np) = (c.embed_dim, c.num_tokens(), c.num_patches());
    let alpha = T::lit(c.alpha);
    let mut grad = params.zeros_like();

    let mut dy = vec![T::zero(); n * d];
    let d_cls = head_backward(&params.head_final, &cache.head_final, &out.logits_final, alpha, &mut grad.head_final);
    dy[..d].copy_from_slice(&d_cls);
    for (j, dz) in out.logits_patch.iter().enumerate() {
        let dp = head_backward(&params.head_patch, &cache.head_patch[j], dz, alpha, &mut grad.head_patch);
        dy[(j + 1) * d..(j + 2) * d].copy_from_slice(&dp);
    }
    let d_tap = head_backward(&params.head_tap, &cache.head_tap, &out.logits_tap, alpha, &mut grad.head_tap);

    let mut dx = layer_norm_backward(&params.norm, &cache.lnf, &dy, d, &mut grad.norm);
    for k in (0..c.depth).rev() {
        if k + 1 == c.loss_tap {
            dx[..d].iter_mut().zip(&d_tap).for_each(|(a, &b)| *a += b);
        }
        let extra = if k + 1 == c.depth {
            out.attention_final.as_deref()
        } else {
            None
        };
        dx = block_backward(&params.blocks[k], &cache.blocks[k], dx, extra, c.heads, &mut grad.blocks[k]);
    }

    grad.cls_token.iter_mut().zip(&dx[..d]).for_each(|(a, &b)| *a += b);
    grad.pos_embed.iter_mut().zip(&dx).for_each(|(a, &b)| *a += b);
    linear_backward(&params.patch_embed, &cache.patches, &dx[d..], np, &mut grad.patch_embed);
    grad
}
