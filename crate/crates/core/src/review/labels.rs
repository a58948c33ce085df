use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{LabelEvent, ReviewError};
use crate::model::{ConflictLabel, DatasetManifest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedLabel {
    pub observation_id: String,
    pub label: ConflictLabel,
    pub yes: usize,
    pub no: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TiedLabel {
    pub observation_id: String,
    pub yes: usize,
    pub no: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelResolution {
    pub resolved: Vec<ResolvedLabel>,
    /// Left unlabeled.
    pub ties: Vec<TiedLabel>,
    /// Observations whose ground truth differs from before.
    pub changed: Vec<String>,
    /// Tied observations that had a split; an unlabeled observation cannot
    /// stay in one.
    pub removed_from_split: Vec<String>,
}

/// Majority vote over each annotator's latest label. Observations nobody
/// labeled keep their current ground truth.
pub fn resolve_labels<'a>(
    manifest: &DatasetManifest,
    latest: impl IntoIterator<Item = &'a LabelEvent>,
) -> Result<(DatasetManifest, LabelResolution), ReviewError> {
    let mut votes: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for e in latest {
        if manifest.get(&e.observation_id).is_none() {
            return Err(ReviewError::UnknownObservation(e.observation_id.clone()));
        }
        let v = votes.entry(e.observation_id.as_str()).or_default();
        match e.label {
            ConflictLabel::Conflict => v.0 += 1,
            ConflictLabel::NoConflict => v.1 += 1,
        }
    }
    let mut res = LabelResolution::default();
    let mut observations = manifest.observations.clone();
    for o in &mut observations {
        let Some(&(yes, no)) = votes.get(o.id.as_str()) else { continue };
        let before = o.ground_truth;
        if yes == no {
            o.ground_truth = None;
            if o.split.take().is_some() {
                res.removed_from_split.push(o.id.clone());
            }
            res.ties.push(TiedLabel { observation_id: o.id.clone(), yes, no });
        } else {
            let label = if yes > no { ConflictLabel::Conflict } else { ConflictLabel::NoConflict };
            o.ground_truth = Some(label);
            res.resolved.push(ResolvedLabel { observation_id: o.id.clone(), label, yes, no });
        }
        if o.ground_truth != before {
            res.changed.push(o.id.clone());
        }
    }
    let mut out = DatasetManifest::build(observations, manifest.seed)?;
    out.imbalance_tolerance = manifest.imbalance_tolerance;
    Ok((out, res))
}
