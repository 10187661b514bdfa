use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{read_image, resize_bilinear};
use crate::rng::Rng;
use crate::sample::{AttackType, Label, Sample, SampleMeta};
use crate::scalar::Real;

pub const MANIFEST_HEADER: [&str; 8] = [
    "path",
    "label",
    "attack_type",
    "subject_id",
    "session",
    "device",
    "video_id",
    "frame_index",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    /// Image path, relative to the manifest's directory unless absolute.
    pub path: String,
    pub label: Label,
    pub attack_type: AttackType,
    pub subject_id: String,
    pub session: String,
    pub device: String,
    pub video_id: String,
    pub frame_index: u32,
}

impl ManifestRow {
    /// Value of a column as text, for protocol filters.
    pub fn column(&self, column: Column) -> String {
        match column {
            Column::Path => self.path.clone(),
            Column::Label => self.label.as_str().to_string(),
            Column::AttackType => self.attack_type.as_str().to_string(),
            Column::SubjectId => self.subject_id.clone(),
            Column::Session => self.session.clone(),
            Column::Device => self.device.clone(),
            Column::VideoId => self.video_id.clone(),
            Column::FrameIndex => self.frame_index.to_string(),
        }
    }

    pub fn meta(&self) -> SampleMeta {
        SampleMeta {
            subject_id: self.subject_id.clone(),
            session: self.session.clone(),
            device: self.device.clone(),
            video_id: self.video_id.clone(),
            frame_index: self.frame_index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    Path,
    Label,
    AttackType,
    SubjectId,
    Session,
    Device,
    VideoId,
    FrameIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, rows: Vec<ManifestRow>) -> Result<Self> {
        let m = Self {
            root: root.into(),
            rows,
        };
        for (i, r) in m.rows.iter().enumerate() {
            if !r.attack_type.consistent_with(r.label) {
                return Err(Error::invalid(format!(
                    "manifest row {}: label {} with attack type {}",
                    i + 1,
                    r.label,
                    r.attack_type
                )));
            }
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Parses CSV text with the fixed header. Does not touch the images.
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header != MANIFEST_HEADER {
            return Err(Error::invalid(format!(
                "manifest header is `{}`, expected `{}`",
                header.join(","),
                MANIFEST_HEADER.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row: ManifestRow = rec
                .deserialize(None)
                .map_err(|e| Error::invalid(format!("manifest row {}: {e}", i + 1)))?;
            rows.push(row);
        }
        Self::new(root, rows)
    }

    /// Reads a manifest and checks that every image path exists.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::at_path(path))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(&text, root)?;
        for r in &m.rows {
            let p = m.resolve(r);
            if !p.is_file() {
                return Err(Error::Path {
                    path: p,
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest but missing"),
                });
            }
        }
        Ok(m)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(MANIFEST_HEADER)?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(Error::at_path(path))
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            root: self.root.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

/// Keeps `min(per_video, available)` frames of every video, chosen
/// uniformly without replacement. Row order is preserved.
pub fn sample_frames(manifest: &Manifest, per_video: usize, rng: &mut Rng) -> Manifest {
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, r) in manifest.rows.iter().enumerate() {
        let g = *index.entry(r.video_id.as_str()).or_insert_with(|| {
            groups.push((r.video_id.clone(), Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(i);
    }
    let mut keep = vec![false; manifest.len()];
    for (_, rows) in &groups {
        for k in rng.choose_indices(rows.len(), per_video.min(rows.len())) {
            keep[rows[k]] = true;
        }
    }
    let kept: Vec<usize> = (0..manifest.len()).filter(|&i| keep[i]).collect();
    manifest.subset(&kept)
}

/// Row identifier used in score files: the manifest path.
pub fn sample_id(row: &ManifestRow) -> String {
    row.path.clone()
}

/// Loads the listed rows as sRGB samples resized to `image_size` square.
pub fn load_samples<T: Real>(manifest: &Manifest, image_size: usize) -> Result<Vec<Sample<T>>> {
    manifest
        .rows
        .par_iter()
        .map(|r| {
            let path = manifest.resolve(r);
            let mut img = read_image::<T>(&path)?;
            if img.height() != image_size || img.width() != image_size {
                img = resize_bilinear(&img, image_size, image_size)?;
            }
            Ok(Sample {
                id: sample_id(r),
                image: img,
                label: r.label,
                attack: r.attack_type,
                patch_labels: None,
                meta: r.meta(),
            })
        })
        .collect()
}
