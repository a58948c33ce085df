use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::model::{ConflictLabel, DatasetManifest, Observation, Split};
use crate::seed;

/// Requested observation count per split. Each count is split evenly between
/// the two classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Build a manifest from freshly extracted or simulated observations.
pub fn build_manifest(obs: Vec<Observation>, seed: u64) -> Result<DatasetManifest, IngestError> {
    let mut seen = HashSet::new();
    for o in &obs {
        if !seen.insert(o.id.as_str()) {
            return Err(IngestError::DuplicateId(o.id.clone()));
        }
    }
    Ok(DatasetManifest::build(obs, seed)?)
}

/// Assign balanced splits. Any previous assignment is discarded; observations
/// not drawn stay unassigned.
///
/// Per class, ids are sorted, shuffled with the `"splitter"` stream of `seed`,
/// and consumed in train, val, test order.
pub fn assign_splits(m: &DatasetManifest, counts: SplitCounts, seed: u64) -> Result<DatasetManifest, IngestError> {
    for split in [Split::Train, Split::Val, Split::Test] {
        if !counts.get(split).is_multiple_of(2) {
            return Err(IngestError::OddSplitCount { split, count: counts.get(split) });
        }
    }
    let need = counts.total() / 2;
    let mut pools = Vec::new();
    for label in ConflictLabel::ALL {
        let mut ids: Vec<&str> = m
            .observations
            .iter()
            .filter(|o| o.ground_truth == Some(label))
            .map(|o| o.id.as_str())
            .collect();
        if ids.len() < need {
            return Err(IngestError::InsufficientClass { label, needed: need, available: ids.len() });
        }
        ids.sort_unstable();
        pools.push(ids);
    }

    let mut rng = seed::substream(seed, "splitter");
    let mut assigned = std::collections::HashMap::new();
    for ids in &mut pools {
        ids.shuffle(&mut rng);
        let mut it = ids.iter();
        for split in [Split::Train, Split::Val, Split::Test] {
            for id in it.by_ref().take(counts.get(split) / 2) {
                assigned.insert(id.to_string(), split);
            }
        }
    }

    let observations = m
        .observations
        .iter()
        .map(|o| Observation { split: assigned.get(&o.id).copied(), ..o.clone() })
        .collect();
    let mut out = DatasetManifest::build(observations, seed)?;
    out.imbalance_tolerance = 0;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::observation;
    use crate::model::ClassCounts;

    fn balanced(n_per_class: usize) -> DatasetManifest {
        let mut obs = Vec::new();
        for i in 0..n_per_class {
            obs.push(observation(&format!("c{i:04}"), Some(ConflictLabel::Conflict)));
            obs.push(observation(&format!("n{i:04}"), Some(ConflictLabel::NoConflict)));
        }
        build_manifest(obs, 0).unwrap()
    }

    const PAPER: SplitCounts = SplitCounts { train: 504, val: 56, test: 140 };

    #[test]
    fn balanced_seven_hundred_split() {
        let m = balanced(350);
        assert_eq!(m.class_counts(), ClassCounts { conflict_count: 350, no_conflict_count: 350 });
        let s = assign_splits(&m, PAPER, 11).unwrap();
        let c = |sp| s.split_counts[&sp];
        assert_eq!(c(Split::Train), ClassCounts { conflict_count: 252, no_conflict_count: 252 });
        assert_eq!(c(Split::Val), ClassCounts { conflict_count: 28, no_conflict_count: 28 });
        assert_eq!(c(Split::Test), ClassCounts { conflict_count: 70, no_conflict_count: 70 });
        s.validate().unwrap();
    }

    #[test]
    fn deterministic_per_seed_and_seed_sensitive() {
        let m = balanced(350);
        let a = assign_splits(&m, PAPER, 5).unwrap();
        let b = assign_splits(&m, PAPER, 5).unwrap();
        let c = assign_splits(&m, PAPER, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.observations, c.observations);
    }

    #[test]
    fn insufficient_class_and_odd_counts() {
        let mut m = balanced(350);
        m.observations.pop();
        let m = build_manifest(m.observations, 0).unwrap();
        assert!(matches!(
            assign_splits(&m, PAPER, 0),
            Err(IngestError::InsufficientClass { label: ConflictLabel::NoConflict, needed: 350, available: 349 })
        ));
        let odd = SplitCounts { train: 3, val: 0, test: 0 };
        assert!(matches!(assign_splits(&m, odd, 0), Err(IngestError::OddSplitCount { .. })));
    }

    #[test]
    fn leftovers_are_unassigned_and_old_splits_cleared() {
        let m = balanced(10);
        let first = assign_splits(&m, SplitCounts { train: 20, val: 0, test: 0 }, 1).unwrap();
        let second = assign_splits(&first, SplitCounts { train: 4, val: 2, test: 2 }, 1).unwrap();
        assert_eq!(second.observations.iter().filter(|o| o.split.is_none()).count(), 12);
    }

    #[test]
    fn duplicate_ids_and_empty_input() {
        let dup = vec![observation("x", None), observation("x", None)];
        assert!(matches!(build_manifest(dup, 0), Err(IngestError::DuplicateId(id)) if id == "x"));
        let empty = build_manifest(vec![], 0).unwrap();
        assert_eq!(empty.class_counts().total(), 0);
    }
}
