//! Labels and labelled samples.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::image::ImageTensor;

/// Image-level ground truth. `Live < Spoof`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    #[serde(alias = "live")]
    Live,
    #[serde(alias = "spoof")]
    Spoof,
}

impl Label {
    /// Class index used by the classification heads.
    pub fn class_index(self) -> usize {
        match self {
            Label::Live => 0,
            Label::Spoof => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Live => "LIVE",
            Label::Spoof => "SPOOF",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(Label::Live),
            "spoof" => Ok(Label::Spoof),
            _ => Err(Error::invalid(format!("unknown label `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttackType {
    #[serde(alias = "none")]
    None,
    #[serde(alias = "print")]
    Print,
    #[serde(alias = "display")]
    Display,
    #[serde(alias = "synth_print")]
    SynthPrint,
    #[serde(alias = "synth_display")]
    SynthDisplay,
}

impl AttackType {
    pub const ALL: [AttackType; 5] = [
        AttackType::None,
        AttackType::Print,
        AttackType::Display,
        AttackType::SynthPrint,
        AttackType::SynthDisplay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackType::None => "NONE",
            AttackType::Print => "PRINT",
            AttackType::Display => "DISPLAY",
            AttackType::SynthPrint => "SYNTH_PRINT",
            AttackType::SynthDisplay => "SYNTH_DISPLAY",
        }
    }

    /// Whether `label` and this attack type agree (`Live` iff `None`).
    pub fn consistent_with(self, label: Label) -> bool {
        (self == AttackType::None) == (label == Label::Live)
    }
}

impl fmt::Display for AttackType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.to_ascii_uppercase();
        AttackType::ALL
            .into_iter()
            .find(|a| a.as_str() == upper)
            .ok_or_else(|| Error::invalid(format!("unknown attack type `{s}`")))
    }
}

/// Per-patch labels on a `grid × grid` raster of ViT patches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchLabels {
    pub grid: usize,
    pub labels: Vec<Label>,
}

impl PatchLabels {
    pub fn uniform(grid: usize, label: Label) -> Self {
        Self {
            grid,
            labels: vec![label; grid * grid],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Capture metadata carried through from the manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub subject_id: String,
    pub session: String,
    pub device: String,
    pub video_id: String,
    pub frame_index: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    pub image: ImageTensor<T>,
    pub label: Label,
    pub attack: AttackType,
    pub patch_labels: Option<PatchLabels>,
    pub meta: SampleMeta,
}

impl<T> Sample<T> {
    pub fn new(id: impl Into<String>, image: ImageTensor<T>, label: Label, attack: AttackType) -> Self {
        Self {
            id: id.into(),
            image,
            label,
            attack,
            patch_labels: None,
            meta: SampleMeta::default(),
        }
    }

    pub fn live(id: impl Into<String>, image: ImageTensor<T>) -> Self {
        Self::new(id, image, Label::Live, AttackType::None)
    }

    pub fn spoof(id: impl Into<String>, image: ImageTensor<T>, attack: AttackType) -> Self {
        Self::new(id, image, Label::Spoof, attack)
    }
}
