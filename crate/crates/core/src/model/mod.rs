//! Domain types shared across the harness: labels, frames, observations and
//! the dataset manifest. Binary-classification metrics live in [`metrics`].

mod manifest;
pub mod metrics;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use manifest::{ClassCounts, DatasetManifest, ManifestMeta};
pub use metrics::{
    compute_metrics, confusion_from_pairs, AveragedMetrics, ClassMetrics, ConfusionMatrix,
    MetricsReport, UndefinedRatio,
};

/// Seconds between consecutive frames of a triplet.
pub const FRAME_INTERVAL_S: f64 = 0.5;

/// Number of frames in every observation.
pub const FRAMES_PER_OBSERVATION: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("input is empty")]
    EmptyInput,
    #[error("confusion matrix has zero total")]
    EmptyMatrix,
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("invalid observation {id}: {reason}")]
    InvalidObservation { id: String, reason: String },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("unknown label token {0:?}")]
    UnknownLabel(String),
    #[error("manifest line {line}: {source}")]
    ManifestLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Ground-truth or predicted conflict status. `Conflict` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConflictLabel {
    #[serde(rename = "yes")]
    Conflict,
    #[serde(rename = "no")]
    NoConflict,
}

impl ConflictLabel {
    pub const ALL: [ConflictLabel; 2] = [ConflictLabel::Conflict, ConflictLabel::NoConflict];

    /// Wire token: `"yes"` or `"no"`.
    pub fn token(self) -> &'static str {
        match self {
            ConflictLabel::Conflict => "yes",
            ConflictLabel::NoConflict => "no",
        }
    }

    pub fn is_conflict(self) -> bool {
        self == ConflictLabel::Conflict
    }

    pub fn other(self) -> ConflictLabel {
        match self {
            ConflictLabel::Conflict => ConflictLabel::NoConflict,
            ConflictLabel::NoConflict => ConflictLabel::Conflict,
        }
    }
}

impl fmt::Display for ConflictLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ConflictLabel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "yes" => Ok(ConflictLabel::Conflict),
            "no" => Ok(ConflictLabel::NoConflict),
            other => Err(ModelError::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(ModelError::InvalidManifest(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Ingested,
}

/// Where a frame's pixels live. Paths are relative to the workspace root and
/// carry the SHA-256 of the file contents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ImageRef {
    Path { path: String, sha256: String },
    Inline {
        #[serde(with = "base64_bytes")]
        bytes: Vec<u8>,
    },
}

impl ImageRef {
    pub fn for_file(path: impl Into<String>, bytes: &[u8]) -> Self {
        ImageRef::Path {
            path: path.into(),
            sha256: sha256_hex(bytes),
        }
    }

    pub fn is_inline(&self) -> bool {
        matches!(self, ImageRef::Inline { .. })
    }

    /// Load the image bytes, resolving relative paths against `root`.
    pub fn load(&self, root: &std::path::Path) -> std::io::Result<Vec<u8>> {
        match self {
            ImageRef::Path { path, .. } => std::fs::read(root.join(path)),
            ImageRef::Inline { bytes } => Ok(bytes.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub index: u8,
    pub time_offset: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub image_ref: ImageRef,
    pub source_id: String,
}

impl Frame {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.index as usize >= FRAMES_PER_OBSERVATION {
            return Err(ModelError::InvalidFrame(format!("index {} out of range", self.index)));
        }
        let expected = FRAME_INTERVAL_S * self.index as f64;
        if (self.time_offset - expected).abs() > 1e-9 {
            return Err(ModelError::InvalidFrame(format!(
                "frame {} has offset {} s, expected {} s",
                self.index, self.time_offset, expected
            )));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(ModelError::InvalidFrame("zero image dimension".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: String,
    pub frames: Vec<Frame>,
    #[serde(default)]
    pub ground_truth: Option<ConflictLabel>,
    #[serde(default)]
    pub split: Option<Split>,
    pub provenance: Provenance,
    #[serde(default)]
    pub scenario_ref: Option<String>,
}

impl Observation {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: String| ModelError::InvalidObservation {
            id: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(bad("empty id".into()));
        }
        if self.frames.len() != FRAMES_PER_OBSERVATION {
            return Err(bad(format!("expected 3 frames, found {}", self.frames.len())));
        }
        for (k, frame) in self.frames.iter().enumerate() {
            if frame.index as usize != k {
                return Err(bad(format!("frame at position {k} has index {}", frame.index)));
            }
            frame.validate().map_err(|e| bad(e.to_string()))?;
        }
        if self.split.is_some() && self.ground_truth.is_none() {
            return Err(bad("assigned to a split but unlabeled".into()));
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}
