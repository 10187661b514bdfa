//! Whole-run configuration: model, training, data and evaluation settings
//! under one root seed, with a TOML file form.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{CalibSource, SynthConfig};
use crate::error::{Error, Result};
use crate::rng::mix64;
use crate::train::TrainConfig;
use crate::vit::{default_taps, ModelConfig, DEFAULT_ALPHA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            _ => Err(Error::invalid(format!("precision `{s}`: expected f32 or f64"))),
        }
    }
}

/// Model section of the file form. Taps left out follow the depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub image_size: usize,
    pub patch_size: usize,
    pub depth: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score_tap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_tap: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::toy();
        Self {
            image_size: m.image_size,
            patch_size: m.patch_size,
            depth: m.depth,
            embed_dim: m.embed_dim,
            heads: m.heads,
            mlp_ratio: m.mlp_ratio,
            alpha: DEFAULT_ALPHA,
            score_tap: None,
            loss_tap: None,
        }
    }
}

impl ModelSection {
    pub fn resolve(&self) -> Result<ModelConfig> {
        let (score, loss) = default_taps(self.depth);
        let cfg = ModelConfig {
            mlp_ratio: self.mlp_ratio,
            alpha: self.alpha,
            score_tap: self.score_tap.unwrap_or(score),
            loss_tap: self.loss_tap.unwrap_or(loss),
            ..ModelConfig::new(self.image_size, self.patch_size, self.depth, self.embed_dim, self.heads)
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Existing manifest to use instead of generating the synthetic corpus.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Built-in protocol name or path to a protocol file.
    pub protocol: String,
    /// Zero-based fold the pipeline runs.
    pub fold: usize,
    /// Frames kept per video in every split; 0 keeps all.
    pub frames_per_video: usize,
    /// Split the threshold is calibrated on.
    pub calib: CalibSource,
    pub synth: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            protocol: "synthetic".into(),
            fold: 0,
            frames_per_video: 0,
            calib: CalibSource::Test,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Write the FAR/FRR curve as SVG.
    pub plot: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { plot: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    pub precision: Precision,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::default(),
            model: ModelSection::default(),
            train: TrainConfig::toy(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Independent streams derived from the root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Synth = 1,
    Init = 2,
    Train = 3,
    Frames = 4,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::at_path(path))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.resolve()?;
        self.train.validate()?;
        self.data.synth.validate()
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        self.model.resolve()
    }

    pub fn stream_seed(&self, stream: Stream) -> u64 {
        mix64(self.seed ^ mix64(0x5eed_0000 + stream as u64))
    }

    /// Training settings with the derived training seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.stream_seed(Stream::Train),
            ..self.train.clone()
        }
    }

    /// Generator settings with the derived corpus seed filled in.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.stream_seed(Stream::Synth),
            ..self.data.synth.clone()
        }
    }

    /// SHA-256 of the canonical file form.
    pub fn hash(&self) -> String {
        crate::vit::checkpoint::sha256_hex(self.to_toml().as_bytes())
    }

    /// Applies `key=value` overrides addressed by dotted path, e.g.
    /// `train.epochs=5`. Values are parsed as TOML, falling back to a string.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(&self.to_toml()).expect("own file form parses");
        for (key, value) in overrides {
            let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.clone()));
            let mut parts: Vec<&str> = key.split('.').collect();
            let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty key in override `{key}`")))?;
            let mut table = &mut doc;
            for p in parts {
                table = table
                    .entry(p)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a section")))?;
            }
            table.insert(last.to_string(), parsed);
        }
        Self::parse(&toml::to_string(&doc).expect("table serializes"))
    }
}
