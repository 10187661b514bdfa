use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and head hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub depth: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    /// Norm every head feature is rescaled to before its linear map.
    pub alpha: f64,
    /// Block (1-based) whose class token feeds the reference bank.
    pub score_tap: usize,
    /// Block (1-based) whose class token gets its own classification head.
    pub loss_tap: usize,
    #[serde(default = "two")]
    pub n_classes: usize,
}

fn two() -> usize {
    2
}

pub const DEFAULT_ALPHA: f64 = 16.0;

impl ModelConfig {
    /// Config with the default taps for `depth`: the score tap at two thirds
    /// of the depth and the loss tap one block before the end.
    pub fn new(image_size: usize, patch_size: usize, depth: usize, embed_dim: usize, heads: usize) -> Self {
        let (score_tap, loss_tap) = default_taps(depth);
        Self {
            image_size,
            patch_size,
            depth,
            embed_dim,
            heads,
            mlp_ratio: 4.0,
            alpha: DEFAULT_ALPHA,
            score_tap,
            loss_tap,
            n_classes: 2,
        }
    }

    /// 224 px, 16 px patches, 12 blocks of width 768 with 12 heads.
    pub fn vit_base() -> Self {
        Self::new(224, 16, 12, 768, 12)
    }

    /// Desk-scale default used by the synthetic pipeline.
    pub fn toy() -> Self {
        Self::new(32, 8, 6, 64, 4)
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.embed_dim as f64) * self.mlp_ratio).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.image_size == 0 || self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.depth == 0 {
            return bad("depth must be positive".into());
        }
        if self.heads == 0 || self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return bad(format!("mlp_ratio {} gives an empty MLP", self.mlp_ratio));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        for (name, tap) in [("score_tap", self.score_tap), ("loss_tap", self.loss_tap)] {
            if tap == 0 || tap > self.depth {
                return bad(format!("{name} {tap} outside 1..={}", self.depth));
            }
        }
        if self.n_classes != 2 {
            return bad(format!("n_classes must be 2, got {}", self.n_classes));
        }
        Ok(())
    }
}

/// `(score_tap, loss_tap)` defaults: 8 and 11 at depth 12.
pub fn default_taps(depth: usize) -> (usize, usize) {
    let score = ((2 * depth) as f64 / 3.0).round().max(1.0) as usize;
    let loss = depth.saturating_sub(1).max(1);
    (score.min(depth.max(1)), loss)
}

/// A class-token read-out point: after a block, or after the final norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tap {
    Block(usize),
    FinalNorm,
}

impl Tap {
    /// Index into `EncoderActivations::class_tokens`.
    pub fn token_index(self, depth: usize) -> usize {
        match self {
            Tap::Block(k) => k - 1,
            Tap::FinalNorm => depth,
        }
    }

    pub fn from_token_index(index: usize, depth: usize) -> Self {
        if index >= depth {
            Tap::FinalNorm
        } else {
            Tap::Block(index + 1)
        }
    }

    pub fn validate(self, depth: usize) -> Result<()> {
        match self {
            Tap::Block(k) if k == 0 || k > depth => {
                Err(Error::invalid(format!("tap block {k} outside 1..={depth}")))
            }
            _ => Ok(()),
        }
    }

    pub fn label(self) -> String {
        match self {
            Tap::Block(k) => format!("block {k}"),
            Tap::FinalNorm => "final norm".to_string(),
        }
    }
}

impl std::str::FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if matches!(t.as_str(), "final" | "final-norm" | "final_norm" | "norm") {
            return Ok(Tap::FinalNorm);
        }
        t.parse::<usize>()
            .map(Tap::Block)
            .map_err(|_| Error::invalid(format!("tap `{s}` is neither a block index nor `final`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_taps_match_base_depth() {
        assert_eq!(default_taps(12), (8, 11));
        assert_eq!(default_taps(6), (4, 5));
        assert_eq!(default_taps(2), (1, 1));
        assert_eq!(default_taps(1), (1, 1));
    }

    #[test]
    fn geometry() {
        let base = ModelConfig::vit_base();
        assert_eq!(base.num_patches(), 196);
        assert_eq!(ModelConfig::new(32, 8, 4, 32, 4).num_patches(), 16);
        base.validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::toy();
        c.patch_size = 7;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.heads = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.score_tap = 7;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.loss_tap = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn tap_parsing() {
        assert_eq!("final".parse::<Tap>().unwrap(), Tap::FinalNorm);
        assert_eq!("4".parse::<Tap>().unwrap(), Tap::Block(4));
        assert!("x".parse::<Tap>().is_err());
        assert_eq!(Tap::FinalNorm.token_index(6), 6);
        assert_eq!(Tap::from_token_index(3, 6), Tap::Block(4));
    }
}
