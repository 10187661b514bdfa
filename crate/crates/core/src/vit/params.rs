use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Real;

use super::config::ModelConfig;

const INIT_STD: f64 = 0.02;

/// Affine map `y = W x + b` with `W` stored `out × in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    fn init(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let mut l = Self::zeros(in_dim, out_dim);
        l.weight.iter_mut().for_each(|w| *w = T::lit(rng.truncated_normal(INIT_STD)));
        l
    }

    pub fn row(&self, o: usize) -> &[T] {
        &self.weight[o * self.in_dim..(o + 1) * self.in_dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    fn identity(dim: usize) -> Self {
        Self {
            gamma: vec![T::one(); dim],
            beta: vec![T::zero(); dim],
        }
    }

    fn zeros(dim: usize) -> Self {
        Self {
            gamma: vec![T::zero(); dim],
            beta: vec![T::zero(); dim],
        }
    }
}

/// One pre-norm encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub ln1: LayerNorm<T>,
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
    pub ln2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

/// All trainable tensors. Also used as the gradient and velocity container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub patch_embed: Linear<T>,
    pub cls_token: Vec<T>,
    /// `num_tokens × embed_dim`; row 0 belongs to the class token.
    pub pos_embed: Vec<T>,
    pub blocks: Vec<Block<T>>,
    pub norm: LayerNorm<T>,
    pub head_final: Linear<T>,
    pub head_tap: Linear<T>,
    /// Shared across every patch token.
    pub head_patch: Linear<T>,
}

/// Name, shape and contents of one parameter tensor.
pub struct TensorView<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

pub struct TensorViewMut<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [T],
}

macro_rules! for_each_tensor {
    ($p:expr, $out:ident, $push:ident, $blocks:expr, $($m:tt)*) => {{
        let c = $p.config.clone();
        let (d, pd, nt, hid, ncl) = (c.embed_dim, c.patch_dim(), c.num_tokens(), c.mlp_hidden(), c.n_classes);
        $push(&mut $out, "patch_embed.weight".to_string(), vec![d, pd], & $($m)* $p.patch_embed.weight);
        $push(&mut $out, "patch_embed.bias".to_string(), vec![d], & $($m)* $p.patch_embed.bias);
        $push(&mut $out, "cls_token".to_string(), vec![d], & $($m)* $p.cls_token);
        $push(&mut $out, "pos_embed".to_string(), vec![nt, d], & $($m)* $p.pos_embed);
        for (i, b) in $blocks {
            let pre = format!("blocks.{i}");
            $push(&mut $out, format!("{pre}.ln1.gamma"), vec![d], & $($m)* b.ln1.gamma);
            $push(&mut $out, format!("{pre}.ln1.beta"), vec![d], & $($m)* b.ln1.beta);
            $push(&mut $out, format!("{pre}.attn.qkv.weight"), vec![3 * d, d], & $($m)* b.qkv.weight);
            $push(&mut $out, format!("{pre}.attn.qkv.bias"), vec![3 * d], & $($m)* b.qkv.bias);
            $push(&mut $out, format!("{pre}.attn.proj.weight"), vec![d, d], & $($m)* b.proj.weight);
            $push(&mut $out, format!("{pre}.attn.proj.bias"), vec![d], & $($m)* b.proj.bias);
            $push(&mut $out, format!("{pre}.ln2.gamma"), vec![d], & $($m)* b.ln2.gamma);
            $push(&mut $out, format!("{pre}.ln2.beta"), vec![d], & $($m)* b.ln2.beta);
            $push(&mut $out, format!("{pre}.mlp.fc1.weight"), vec![hid, d], & $($m)* b.fc1.weight);
            $push(&mut $out, format!("{pre}.mlp.fc1.bias"), vec![hid], & $($m)* b.fc1.bias);
            $push(&mut $out, format!("{pre}.mlp.fc2.weight"), vec![d, hid], & $($m)* b.fc2.weight);
            $push(&mut $out, format!("{pre}.mlp.fc2.bias"), vec![d], & $($m)* b.fc2.bias);
        }
        $push(&mut $out, "norm.gamma".to_string(), vec![d], & $($m)* $p.norm.gamma);
        $push(&mut $out, "norm.beta".to_string(), vec![d], & $($m)* $p.norm.beta);
        for (name, head) in [
            ("head_final", & $($m)* $p.head_final),
            ("head_tap", & $($m)* $p.head_tap),
            ("head_patch", & $($m)* $p.head_patch),
        ] {
            $push(&mut $out, format!("{name}.weight"), vec![ncl, d], & $($m)* head.weight);
            $push(&mut $out, format!("{name}.bias"), vec![ncl], & $($m)* head.bias);
        }
    }};
}

fn push_view<'a, T>(out: &mut Vec<TensorView<'a, T>>, name: String, shape: Vec<usize>, data: &'a Vec<T>) {
    out.push(TensorView {
        name,
        shape,
        data: data.as_slice(),
    });
}

fn push_view_mut<'a, T>(out: &mut Vec<TensorViewMut<'a, T>>, name: String, shape: Vec<usize>, data: &'a mut Vec<T>) {
    out.push(TensorViewMut {
        name,
        shape,
        data: data.as_mut_slice(),
    });
}

impl<T: Real> ModelParams<T> {
    /// All-zero tensors with the shapes `config` implies.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let hid = config.mlp_hidden();
        let ncl = config.n_classes;
        Ok(Self {
            config: config.clone(),
            patch_embed: Linear::zeros(config.patch_dim(), d),
            cls_token: vec![T::zero(); d],
            pos_embed: vec![T::zero(); config.num_tokens() * d],
            blocks: (0..config.depth)
                .map(|_| Block {
                    ln1: LayerNorm::zeros(d),
                    qkv: Linear::zeros(d, 3 * d),
                    proj: Linear::zeros(d, d),
                    ln2: LayerNorm::zeros(d),
                    fc1: Linear::zeros(d, hid),
                    fc2: Linear::zeros(hid, d),
                })
                .collect(),
            norm: LayerNorm::zeros(d),
            head_final: Linear::zeros(d, ncl),
            head_tap: Linear::zeros(d, ncl),
            head_patch: Linear::zeros(d, ncl),
        })
    }

    /// Truncated-normal (σ = 0.02) weights and embeddings, zero biases,
    /// identity layer norms.
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let hid = config.mlp_hidden();
        let ncl = config.n_classes;
        let mut normal = |n: usize| -> Vec<T> { (0..n).map(|_| T::lit(rng.truncated_normal(INIT_STD))).collect() };
        let cls_token = normal(d);
        let pos_embed = normal(config.num_tokens() * d);
        let patch_embed = Linear::init(config.patch_dim(), d, rng);
        let blocks = (0..config.depth)
            .map(|_| Block {
                ln1: LayerNorm::identity(d),
                qkv: Linear::init(d, 3 * d, rng),
                proj: Linear::init(d, d, rng),
                ln2: LayerNorm::identity(d),
                fc1: Linear::init(d, hid, rng),
                fc2: Linear::init(hid, d, rng),
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            patch_embed,
            cls_token,
            pos_embed,
            blocks,
            norm: LayerNorm::identity(d),
            head_final: Linear::init(d, ncl, rng),
            head_tap: Linear::init(d, ncl, rng),
            head_patch: Linear::init(d, ncl, rng),
        })
    }

    /// Same shapes, every element zero (gradient / velocity buffers).
    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config already validated")
    }

    /// Every tensor in a fixed order, with its checkpoint name and shape.
    pub fn tensors(&self) -> Vec<TensorView<'_, T>> {
        let mut out = Vec::new();
        for_each_tensor!(self, out, push_view, self.blocks.iter().enumerate(),);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_, T>> {
        let mut out = Vec::new();
        for_each_tensor!(self, out, push_view_mut, self.blocks.iter_mut().enumerate(), mut);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// `self += other`, element-wise.
    pub fn add_assign(&mut self, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.data.iter_mut().zip(src.data).for_each(|(a, &b)| *a += b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|a| *a *= s);
        }
    }

    /// First non-finite element, by tensor name.
    pub fn check_finite(&self) -> Result<()> {
        for t in self.tensors() {
            if let Some(index) = t.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { tensor: t.name, index });
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(&self.config).expect("config already validated");
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            dst.data.iter_mut().zip(src.data).for_each(|(a, b)| *a = U::lit(b.as_f64()));
        }
        out
    }
}
