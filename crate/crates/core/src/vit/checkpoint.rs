//! Checkpoint files: the model config as a fixed metadata record followed by
//! every parameter tensor under its dotted name.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::container::{Container, MetaReader, MetaWriter, StoredTensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

use super::config::ModelConfig;
use super::params::ModelParams;

pub const MAGIC: &[u8; 4] = b"FASV";
pub const VERSION: u16 = 1;

fn encode_config(c: &ModelConfig) -> Result<Vec<u8>> {
    let mut w = MetaWriter::default();
    w.u32(c.image_size)?;
    w.u32(c.patch_size)?;
    w.u32(c.depth)?;
    w.u32(c.embed_dim)?;
    w.u32(c.heads)?;
    w.f64(c.mlp_ratio);
    w.f64(c.alpha);
    w.u32(c.score_tap)?;
    w.u32(c.loss_tap)?;
    w.u32(c.n_classes)?;
    Ok(w.0)
}

fn decode_config(meta: &[u8]) -> Result<ModelConfig> {
    let mut r = MetaReader::new(meta);
    let c = ModelConfig {
        image_size: r.u32("image_size")?,
        patch_size: r.u32("patch_size")?,
        depth: r.u32("depth")?,
        embed_dim: r.u32("embed_dim")?,
        heads: r.u32("heads")?,
        mlp_ratio: r.f64("mlp_ratio")?,
        alpha: r.f64("alpha")?,
        score_tap: r.u32("score_tap")?,
        loss_tap: r.u32("loss_tap")?,
        n_classes: r.u32("n_classes")?,
    };
    r.finish()?;
    c.validate()?;
    Ok(c)
}

/// Serializes parameters in their own precision.
pub fn encode_checkpoint<T: Real>(params: &ModelParams<T>) -> Result<Vec<u8>> {
    let container = Container {
        version: VERSION,
        meta: encode_config(&params.config)?,
        tensors: params
            .tensors()
            .into_iter()
            .map(|t| StoredTensor::from_slice(t.name, t.shape, t.data))
            .collect(),
    };
    container.encode(MAGIC)
}

/// Parses a checkpoint, converting stored values to `T`. Every tensor the
/// config implies must be present with the right shape; extra tensors are an
/// error too.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<ModelParams<T>> {
    let container = Container::decode(bytes, MAGIC, VERSION)?;
    let config = decode_config(&container.meta)?;
    let mut params = ModelParams::<T>::zeros(&config)?;
    let mut expected = 0;
    for view in params.tensors_mut() {
        let stored = container.tensor(&view.name)?;
        stored.expect_shape(&view.shape)?;
        view.data.copy_from_slice(&stored.to_vec::<T>());
        expected += 1;
    }
    if container.tensors.len() != expected {
        let known: Vec<String> = params.tensors().into_iter().map(|t| t.name).collect();
        let extra = container
            .tensors
            .iter()
            .find(|t| !known.contains(&t.name))
            .map(|t| t.name.clone())
            .unwrap_or_else(|| "<duplicate>".into());
        return Err(Error::Tensor {
            tensor: extra,
            message: "not part of this model".into(),
        });
    }
    Ok(params)
}

pub fn save_checkpoint<T: Real>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(params)?;
    std::fs::write(path, bytes).map_err(Error::at_path(path))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<ModelParams<T>> {
    let bytes = std::fs::read(path).map_err(Error::at_path(path))?;
    decode_checkpoint(&bytes)
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Model fingerprint: hash of the checkpoint file.
pub fn checkpoint_fingerprint(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(Error::at_path(path))?;
    Ok(sha256_hex(&bytes))
}
