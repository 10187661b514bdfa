use crate::error::{Error, Result};
use crate::image::{ColorSpace, ImageTensor, CHANNELS};
use crate::scalar::Real;

use super::config::Tap;
use super::ops::{gelu, l2_rescale, layer_norm_forward, linear_forward, softmax_in_place, LnCache, Rescaled};
use super::params::ModelParams;

/// Splits an image into `patch_size²·3`-long vectors in raster order.
/// Each vector is itself row-major over the patch, channels interleaved.
pub fn patchify<T: Real>(img: &ImageTensor<T>, patch_size: usize) -> Result<Vec<Vec<T>>> {
    let (h, w) = (img.height(), img.width());
    if patch_size == 0 || h % patch_size != 0 || w % patch_size != 0 {
        return Err(Error::invalid(format!(
            "patch size {patch_size} does not tile a {h}x{w} image"
        )));
    }
    let row_len = patch_size * CHANNELS;
    let mut out = Vec::with_capacity((h / patch_size) * (w / patch_size));
    for gy in 0..h / patch_size {
        for gx in 0..w / patch_size {
            let mut v = Vec::with_capacity(patch_size * row_len);
            for y in gy * patch_size..(gy + 1) * patch_size {
                let start = img.index(y, gx * patch_size, 0);
                v.extend_from_slice(&img.data()[start..start + row_len]);
            }
            out.push(v);
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`] for a square grid.
pub fn unpatchify<T: Real>(
    patches: &[Vec<T>],
    patch_size: usize,
    color_space: ColorSpace,
) -> Result<ImageTensor<T>> {
    let grid = (patches.len() as f64).sqrt().round() as usize;
    if grid * grid != patches.len() || patches.iter().any(|p| p.len() != patch_size * patch_size * CHANNELS) {
        return Err(Error::invalid("patches do not form a square grid of the given size"));
    }
    let side = grid * patch_size;
    let mut data = vec![T::zero(); side * side * CHANNELS];
    let row_len = patch_size * CHANNELS;
    for (k, p) in patches.iter().enumerate() {
        let (gy, gx) = (k / grid, k % grid);
        for r in 0..patch_size {
            let y = gy * patch_size + r;
            let start = (y * side + gx * patch_size) * CHANNELS;
            data[start..start + row_len].copy_from_slice(&p[r * row_len..(r + 1) * row_len]);
        }
    }
    ImageTensor::new(side, side, data, color_space)
}

/// Everything the losses and the scorer read from one forward pass.
#[derive(Debug, Clone)]
pub struct EncoderActivations<T> {
    /// `depth + 1` class tokens: after each block, then after the final norm.
    pub class_tokens: Vec<Vec<T>>,
    /// Patch tokens leaving the final normalization layer.
    pub patch_tokens_final: Vec<Vec<T>>,
    /// Last block's attention, `heads × tokens × tokens`, rows sum to one.
    pub attention_final: Vec<T>,
    pub heads: usize,
    pub tokens: usize,
    pub logits_final: Vec<T>,
    pub logits_tap: Vec<T>,
    pub logits_patch: Vec<Vec<T>>,
    /// Number of head features that had zero norm and were not rescaled.
    pub degenerate_features: usize,
}

impl<T: Real> EncoderActivations<T> {
    #[inline]
    pub fn attention(&self, head: usize, row: usize, col: usize) -> T {
        self.attention_final[(head * self.tokens + row) * self.tokens + col]
    }

    pub fn class_token(&self, tap: Tap) -> &[T] {
        let depth = self.class_tokens.len() - 1;
        &self.class_tokens[tap.token_index(depth)]
    }
}

/// Class-token attention over patches in the last block: averaged over
/// heads, class column dropped, renormalized to sum to one.
pub fn attention_class_weights<T: Real>(acts: &EncoderActivations<T>) -> Vec<T> {
    class_attention_weights(&acts.attention_final, acts.heads, acts.tokens).0
}

/// Returns the weights and their pre-normalization total.
pub(crate) fn class_attention_weights<T: Real>(attn: &[T], heads: usize, tokens: usize) -> (Vec<T>, T) {
    let inv_h = T::one() / T::from_usize(heads).unwrap();
    let mut s = vec![T::zero(); tokens - 1];
    for h in 0..heads {
        let row = &attn[h * tokens * tokens..h * tokens * tokens + tokens];
        for j in 1..tokens {
            s[j - 1] += row[j];
        }
    }
    s.iter_mut().for_each(|v| *v *= inv_h);
    let total: T = s.iter().copied().sum();
    if total > T::zero() {
        let inv = T::one() / total;
        (s.iter().map(|&v| v * inv).collect(), total)
    } else {
        let u = T::one() / T::from_usize(tokens - 1).unwrap();
        (vec![u; tokens - 1], total)
    }
}

pub(crate) struct BlockCache<T> {
    pub ln1: LnCache<T>,
    pub h1: Vec<T>,
    pub qkv: Vec<T>,
    pub attn: Vec<T>,
    pub o: Vec<T>,
    pub ln2: LnCache<T>,
    pub h2: Vec<T>,
    pub u: Vec<T>,
    pub g: Vec<T>,
}

pub(crate) struct ForwardCache<T> {
    pub patches: Vec<T>,
    pub blocks: Vec<BlockCache<T>>,
    pub lnf: LnCache<T>,
    pub head_final: Rescaled<T>,
    pub head_tap: Rescaled<T>,
    pub head_patch: Vec<Rescaled<T>>,
}

fn check_geometry<T: Real>(params: &ModelParams<T>, img: &ImageTensor<T>) -> Result<()> {
    let s = params.config.image_size;
    if img.height() != s || img.width() != s {
        return Err(Error::invalid(format!(
            "model expects {s}x{s} input, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

fn head_logits<T: Real>(head: &super::params::Linear<T>, r: &Rescaled<T>) -> Vec<T> {
    linear_forward(head, &r.feature, 1)
}

pub(crate) fn forward_cached<T: Real>(
    params: &ModelParams<T>,
    img: &ImageTensor<T>,
) -> Result<(EncoderActivations<T>, ForwardCache<T>)> {
    check_geometry(params, img)?;
    let c = &params.config;
    let (d, n, heads, dh) = (c.embed_dim, c.num_tokens(), c.heads, c.head_dim());
    let np = c.num_patches();
    let patches: Vec<T> = patchify(img, c.patch_size)?.into_iter().flatten().collect();

    // Token embedding: class token then projected patches, plus positions.
    let emb = linear_forward(&params.patch_embed, &patches, np);
    let mut x = Vec::with_capacity(n * d);
    x.extend_from_slice(&params.cls_token);
    x.extend_from_slice(&emb);
    x.iter_mut().zip(&params.pos_embed).for_each(|(v, &p)| *v += p);

    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut blocks = Vec::with_capacity(c.depth);
    let mut class_tokens = Vec::with_capacity(c.depth + 1);
    for blk in &params.blocks {
        let (h1, ln1) = layer_norm_forward(&blk.ln1, &x, d);
        let qkv = linear_forward(&blk.qkv, &h1, n);
        let mut attn = vec![T::zero(); heads * n * n];
        let mut o = vec![T::zero(); n * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let q = &qkv[i * 3 * d + off..i * 3 * d + off + dh];
                let row = &mut attn[(h * n + i) * n..(h * n + i + 1) * n];
                for (j, r) in row.iter_mut().enumerate() {
                    let k = &qkv[j * 3 * d + d + off..j * 3 * d + d + off + dh];
                    *r = super::ops::dot(q, k) * scale;
                }
                softmax_in_place(row);
                let oi = &mut o[i * d + off..i * d + off + dh];
                for (j, &a) in row.iter().enumerate() {
                    let v = &qkv[j * 3 * d + 2 * d + off..j * 3 * d + 2 * d + off + dh];
                    super::ops::axpy(oi, a, v);
                }
            }
        }
        let a = linear_forward(&blk.proj, &o, n);
        let x1: Vec<T> = x.iter().zip(&a).map(|(&p, &q)| p + q).collect();
        let (h2, ln2) = layer_norm_forward(&blk.ln2, &x1, d);
        let u = linear_forward(&blk.fc1, &h2, n);
        let g: Vec<T> = u.iter().map(|&v| gelu(v)).collect();
        let m = linear_forward(&blk.fc2, &g, n);
        let x2: Vec<T> = x1.iter().zip(&m).map(|(&p, &q)| p + q).collect();
        class_tokens.push(x2[..d].to_vec());
        blocks.push(BlockCache {
            ln1,
            h1,
            qkv,
            attn,
            o,
            ln2,
            h2,
            u,
            g,
        });
        x = x2;
    }

    let (final_out, lnf) = layer_norm_forward(&params.norm, &x, d);
    class_tokens.push(final_out[..d].to_vec());
    let patch_tokens_final: Vec<Vec<T>> = final_out[d..].chunks(d).map(|r| r.to_vec()).collect();

    let alpha = T::lit(c.alpha);
    let head_final = l2_rescale(&final_out[..d], alpha);
    let head_tap = l2_rescale(&class_tokens[c.loss_tap - 1], alpha);
    let head_patch: Vec<Rescaled<T>> = patch_tokens_final.iter().map(|p| l2_rescale(p, alpha)).collect();
    let degenerate_features = [&head_final, &head_tap]
        .into_iter()
        .chain(head_patch.iter())
        .filter(|r| r.degenerate)
        .count();

    let acts = EncoderActivations {
        logits_final: head_logits(&params.head_final, &head_final),
        logits_tap: head_logits(&params.head_tap, &head_tap),
        logits_patch: head_patch.iter().map(|r| head_logits(&params.head_patch, r)).collect(),
        class_tokens,
        patch_tokens_final,
        attention_final: blocks.last().map(|b| b.attn.clone()).unwrap_or_default(),
        heads,
        tokens: n,
        degenerate_features,
    };
    let cache = ForwardCache {
        patches,
        blocks,
        lnf,
        head_final,
        head_tap,
        head_patch,
    };
    Ok((acts, cache))
}

/// Runs the encoder on a normalized image of the configured size.
pub fn forward<T: Real>(params: &ModelParams<T>, img: &ImageTensor<T>) -> Result<EncoderActivations<T>> {
    forward_cached(params, img).map(|(acts, _)| acts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::normalize_per_channel;
    use crate::rng::Rng;
    use crate::vit::ModelConfig;

    fn image(seed: u64, side: usize) -> ImageTensor<f64> {
        let mut r = Rng::new(seed);
        ImageTensor::from_fn(side, side, |_, _, _| r.next_f64())
    }

    #[test]
    fn patchify_counts_and_inverse() {
        let img = image(1, 32);
        let p = patchify(&img, 8).unwrap();
        assert_eq!(p.len(), 16);
        assert!(p.iter().all(|v| v.len() == 192));
        assert_eq!(unpatchify(&p, 8, ColorSpace::SrgbUnit).unwrap(), img);
        assert_eq!(patchify(&ImageTensor::filled(224, 224, 0.5f32), 16).unwrap().len(), 196);
        assert!(patchify(&img, 7).is_err());
    }

    #[test]
    fn attention_rows_are_distributions() {
        let cfg = ModelConfig::new(16, 8, 2, 8, 2);
        let params = ModelParams::<f64>::init(&cfg, &mut Rng::new(2)).unwrap();
        let acts = forward(&params, &normalize_per_channel(&image(3, 16))).unwrap();
        for h in 0..acts.heads {
            for i in 0..acts.tokens {
                let s: f64 = (0..acts.tokens).map(|j| acts.attention(h, i, j)).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
        assert_eq!(acts.class_tokens.len(), 3);
        assert_eq!(acts.logits_patch.len(), 4);
        let w = attention_class_weights(&acts);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(w.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn geometry_mismatch_rejected() {
        let cfg = ModelConfig::new(16, 8, 2, 8, 2);
        let params = ModelParams::<f64>::init(&cfg, &mut Rng::new(2)).unwrap();
        assert!(matches!(forward(&params, &image(0, 8)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn uniform_attention_gives_uniform_weights() {
        let (w, _) = class_attention_weights(&vec![0.2f64; 2 * 25], 2, 5);
        assert!(w.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
