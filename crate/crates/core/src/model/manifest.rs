use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{sha256_hex, ConflictLabel, ModelError, Observation, Split};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub conflict_count: u64,
    pub no_conflict_count: u64,
}

impl ClassCounts {
    pub fn add(&mut self, label: ConflictLabel) {
        match label {
            ConflictLabel::Conflict => self.conflict_count += 1,
            ConflictLabel::NoConflict => self.no_conflict_count += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.conflict_count + self.no_conflict_count
    }

    pub fn imbalance(&self) -> u64 {
        self.conflict_count.abs_diff(self.no_conflict_count)
    }

    pub fn get(&self, label: ConflictLabel) -> u64 {
        match label {
            ConflictLabel::Conflict => self.conflict_count,
            ConflictLabel::NoConflict => self.no_conflict_count,
        }
    }
}

/// Sidecar stored next to a line-delimited manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMeta {
    pub seed: u64,
    pub imbalance_tolerance: u64,
    pub split_counts: BTreeMap<Split, ClassCounts>,
    pub observations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub observations: Vec<Observation>,
    pub split_counts: BTreeMap<Split, ClassCounts>,
    pub seed: u64,
    #[serde(default)]
    pub imbalance_tolerance: u64,
}

impl DatasetManifest {
    /// Build a manifest, rejecting duplicate ids and recounting splits.
    pub fn build(observations: Vec<Observation>, seed: u64) -> Result<Self, ModelError> {
        let mut seen = HashSet::new();
        for o in &observations {
            if !seen.insert(o.id.as_str()) {
                return Err(ModelError::InvalidManifest(format!("duplicate id {:?}", o.id)));
            }
            o.validate()?;
        }
        let split_counts = Self::recount(&observations);
        Ok(DatasetManifest {
            observations,
            split_counts,
            seed,
            imbalance_tolerance: 0,
        })
    }

    pub fn recount(observations: &[Observation]) -> BTreeMap<Split, ClassCounts> {
        let mut counts = BTreeMap::new();
        for o in observations {
            if let (Some(split), Some(label)) = (o.split, o.ground_truth) {
                counts.entry(split).or_insert_with(ClassCounts::default).add(label);
            }
        }
        counts
    }

    /// Counts over every labeled observation, split or not.
    pub fn class_counts(&self) -> ClassCounts {
        let mut c = ClassCounts::default();
        for label in self.observations.iter().filter_map(|o| o.ground_truth) {
            c.add(label);
        }
        c
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen = HashSet::new();
        for o in &self.observations {
            if !seen.insert(o.id.as_str()) {
                return Err(ModelError::InvalidManifest(format!("duplicate id {:?}", o.id)));
            }
            o.validate()?;
        }
        if Self::recount(&self.observations) != self.split_counts {
            return Err(ModelError::InvalidManifest(
                "split_counts disagree with observations".into(),
            ));
        }
        for (split, c) in &self.split_counts {
            if c.imbalance() > self.imbalance_tolerance {
                return Err(ModelError::InvalidManifest(format!(
                    "split {split} imbalance {} exceeds tolerance {}",
                    c.imbalance(),
                    self.imbalance_tolerance
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Observation> {
        self.observations.iter().find(|o| o.id == id)
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &Observation> {
        self.observations.iter().filter(move |o| o.split == Some(split))
    }

    pub fn meta(&self) -> ManifestMeta {
        ManifestMeta {
            seed: self.seed,
            imbalance_tolerance: self.imbalance_tolerance,
            split_counts: self.split_counts.clone(),
            observations: self.observations.len(),
        }
    }

    /// Line-delimited JSON, one observation per line. Inline images are refused.
    pub fn to_jsonl_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut out = Vec::new();
        for o in &self.observations {
            if o.frames.iter().any(|f| f.image_ref.is_inline()) {
                return Err(ModelError::InvalidManifest(format!(
                    "observation {} has inline image bytes",
                    o.id
                )));
            }
            serde_json::to_writer(&mut out, o)?;
            out.push(b'\n');
        }
        Ok(out)
    }

    pub fn content_hash(&self) -> Result<String, ModelError> {
        Ok(sha256_hex(&self.to_jsonl_bytes()?))
    }

    pub fn meta_path(path: &Path) -> PathBuf {
        path.with_extension("meta.json")
    }

    pub fn write(&self, path: &Path) -> Result<(), ModelError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let bytes = self.to_jsonl_bytes()?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&bytes)?;
        w.flush()?;
        let meta = serde_json::to_vec_pretty(&self.meta())?;
        std::fs::write(Self::meta_path(path), meta)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ModelError> {
        let reader = BufReader::new(File::open(path)?);
        let mut observations = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let o: Observation = serde_json::from_str(&line)
                .map_err(|source| ModelError::ManifestLine { line: i + 1, source })?;
            observations.push(o);
        }
        let meta_path = Self::meta_path(path);
        let (seed, tolerance) = if meta_path.exists() {
            let meta: ManifestMeta = serde_json::from_slice(&std::fs::read(&meta_path)?)?;
            (meta.seed, meta.imbalance_tolerance)
        } else {
            (0, 0)
        };
        let mut m = DatasetManifest::build(observations, seed)?;
        m.imbalance_tolerance = tolerance;
        Ok(m)
    }
}
