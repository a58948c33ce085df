use std::path::PathBuf;

use super::ReviewError;
use crate::eval::{RunRecord, RUN_FILE};
use crate::model::DatasetManifest;
use crate::workspace::{is_safe_id, Layout};

/// Read access to the observations and runs that reviews refer to.
pub trait Catalog: Send + Sync {
    fn manifest(&self) -> Result<Option<DatasetManifest>, ReviewError>;
    fn run(&self, run_id: &str) -> Result<Option<RunRecord>, ReviewError>;
    /// Every run, sorted by id.
    fn runs(&self) -> Result<Vec<RunRecord>, ReviewError>;
    /// Directory that frame paths resolve against.
    fn root(&self) -> PathBuf;

    fn has_observation(&self, id: &str) -> Result<bool, ReviewError> {
        Ok(self.manifest()?.is_some_and(|m| m.get(id).is_some()))
    }
}

/// Reads the workspace on every call, so runs finished while the service is
/// up become visible without a restart.
pub struct WorkspaceCatalog {
    layout: Layout,
}

impl WorkspaceCatalog {
    pub fn new(layout: Layout) -> Self {
        WorkspaceCatalog { layout }
    }
}

impl Catalog for WorkspaceCatalog {
    fn manifest(&self) -> Result<Option<DatasetManifest>, ReviewError> {
        let path = self.layout.manifest();
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(DatasetManifest::read(&path)?))
    }

    fn run(&self, run_id: &str) -> Result<Option<RunRecord>, ReviewError> {
        if !is_safe_id(run_id) {
            return Ok(None);
        }
        let dir = self.layout.run_dir(run_id);
        if !dir.join(RUN_FILE).exists() {
            return Ok(None);
        }
        Ok(Some(RunRecord::load(&dir)?))
    }

    fn runs(&self) -> Result<Vec<RunRecord>, ReviewError> {
        let dir = self.layout.runs_dir();
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.join(RUN_FILE).exists() {
                out.push(RunRecord::load(&path)?);
            }
        }
        out.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        Ok(out)
    }

    fn root(&self) -> PathBuf {
        self.layout.root.clone()
    }
}

/// In-memory catalog for tests and embedding.
#[derive(Debug, Clone, Default)]
pub struct MemoryCatalog {
    pub manifest: Option<DatasetManifest>,
    pub runs: Vec<RunRecord>,
    pub root: PathBuf,
}

impl Catalog for MemoryCatalog {
    fn manifest(&self) -> Result<Option<DatasetManifest>, ReviewError> {
        Ok(self.manifest.clone())
    }

    fn run(&self, run_id: &str) -> Result<Option<RunRecord>, ReviewError> {
        Ok(self.runs.iter().find(|r| r.run_id == run_id).cloned())
    }

    fn runs(&self) -> Result<Vec<RunRecord>, ReviewError> {
        let mut runs = self.runs.clone();
        runs.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        Ok(runs)
    }

    fn root(&self) -> PathBuf {
        self.root.clone()
    }
}
