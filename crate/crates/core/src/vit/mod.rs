//! Vision-transformer encoder with per-block class-token taps.

mod backward;
pub mod checkpoint;
mod config;
mod forward;
pub(crate) mod ops;
mod params;

pub use backward::OutputGrads;
pub(crate) use backward::backward;
pub use config::{default_taps, ModelConfig, Tap, DEFAULT_ALPHA};
pub use forward::{attention_class_weights, forward, patchify, unpatchify, EncoderActivations};
pub(crate) use forward::{class_attention_weights, forward_cached};
pub use ops::{l2_rescale, softmax, Rescaled};
pub use params::{Block, LayerNorm, Linear, ModelParams, TensorView, TensorViewMut};
