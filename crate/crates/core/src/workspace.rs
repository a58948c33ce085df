//! On-disk layout of a harness workspace. Every path the CLI and the review
//! service touch is relative to one root directory.

use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.jsonl")
    }

    pub fn scenarios(&self) -> PathBuf {
        self.root.join("scenarios.jsonl")
    }

    /// Relative to the root, as stored in manifests.
    pub fn frames_rel() -> &'static Path {
        Path::new("frames")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.runs_dir().join(run_id)
    }

    pub fn review_dir(&self) -> PathBuf {
        self.root.join("review")
    }

    pub fn exports_dir(&self) -> PathBuf {
        self.root.join("exports")
    }
}

/// Ids that are safe to use as a single path component.
pub fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}
