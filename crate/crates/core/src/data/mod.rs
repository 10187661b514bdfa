//! Manifests, protocol splits, frame sampling and the synthetic corpus.

mod manifest;
mod protocol;
mod synth;

pub use manifest::{load_samples, sample_frames, sample_id, Column, Manifest, ManifestRow, MANIFEST_HEADER};
pub use protocol::{
    builtin_protocol, resolve_protocol, CalibSource, Clause, Fold, ProtocolSpec, Split, BUILTIN_PROTOCOLS,
};
pub use synth::{generation_strength, parse_chain, synth_dataset, synth_images, SynthConfig};
