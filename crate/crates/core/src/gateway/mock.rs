use std::collections::BTreeMap;

use super::{format_reply, Backend, ChatRequest, GatewayError};
use crate::model::{ConflictLabel, ConfusionMatrix, DatasetManifest, Split};

/// Answers with a known label per observation, typically the ground truth or
/// the oracle's label.
pub struct OracleBackend {
    id: String,
    labels: BTreeMap<String, ConflictLabel>,
    rationales: BTreeMap<String, (String, String)>,
}

impl OracleBackend {
    pub fn new(labels: BTreeMap<String, ConflictLabel>) -> Self {
        OracleBackend { id: "oracle".into(), labels, rationales: BTreeMap::new() }
    }

    /// Ground truth of every labeled observation in the manifest.
    pub fn from_manifest(m: &DatasetManifest) -> Self {
        Self::new(
            m.observations
                .iter()
                .filter_map(|o| o.ground_truth.map(|l| (o.id.clone(), l)))
                .collect(),
        )
    }

    /// Explanation and recommendation text used in rationale mode.
    pub fn with_rationales(mut self, rationales: BTreeMap<String, (String, String)>) -> Self {
        self.rationales = rationales;
        self
    }
}

fn generic_rationale(label: ConflictLabel) -> (&'static str, &'static str) {
    match label {
        ConflictLabel::Conflict => (
            "two moving vehicles are on paths that reach the same space at nearly the same time",
            "the vehicle without priority should stop before the intersection and let the other pass",
        ),
        ConflictLabel::NoConflict => (
            "the moving vehicles use separate space or reach shared space well apart in time",
            "all vehicles can continue at their current speed",
        ),
    }
}

fn reply(
    labels: &BTreeMap<String, ConflictLabel>,
    rationales: &BTreeMap<String, (String, String)>,
    req: &ChatRequest,
) -> Result<String, GatewayError> {
    let label = *labels
        .get(&req.observation_id)
        .ok_or_else(|| GatewayError::UnknownObservation(req.observation_id.clone()))?;
    let (explanation, recommendation) = match rationales.get(&req.observation_id) {
        Some((e, r)) => (e.as_str(), r.as_str()),
        None => generic_rationale(label),
    };
    Ok(format_reply(label, req.mode, explanation, recommendation))
}

impl Backend for OracleBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn max_in_flight(&self) -> usize {
        8
    }

    fn invoke(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        reply(&self.labels, &self.rationales, req)
    }
}

/// Deterministic stand-in that reproduces a target confusion matrix over a
/// split. Within each true class, observations are ordered by id: the first
/// `fn` conflicts answer "no" and the first `fp` non-conflicts answer "yes".
pub struct ScriptedConfusionBackend {
    id: String,
    answers: BTreeMap<String, ConflictLabel>,
    rationales: BTreeMap<String, (String, String)>,
}

impl ScriptedConfusionBackend {
    pub fn new(m: &DatasetManifest, split: Split, target: ConfusionMatrix) -> Result<Self, GatewayError> {
        let mut by_class: BTreeMap<ConflictLabel, Vec<&str>> = BTreeMap::new();
        for o in m.in_split(split) {
            let truth = o
                .ground_truth
                .ok_or_else(|| GatewayError::InconsistentTarget(format!("{} is unlabeled", o.id)))?;
            by_class.entry(truth).or_default().push(&o.id);
        }
        let conflicts = by_class.get(&ConflictLabel::Conflict).map_or(0, Vec::len) as u64;
        let calm = by_class.get(&ConflictLabel::NoConflict).map_or(0, Vec::len) as u64;
        if target.tp + target.fn_ != conflicts || target.tn + target.fp != calm {
            return Err(GatewayError::InconsistentTarget(format!(
                "tp+fn = {} and tn+fp = {}, split has {conflicts} conflicts and {calm} non-conflicts",
                target.tp + target.fn_,
                target.tn + target.fp
            )));
        }
        let mut answers = BTreeMap::new();
        for (truth, flipped) in [(ConflictLabel::Conflict, target.fn_), (ConflictLabel::NoConflict, target.fp)] {
            let mut ids = by_class.remove(&truth).unwrap_or_default();
            ids.sort_unstable();
            for (i, id) in ids.into_iter().enumerate() {
                let answer = if (i as u64) < flipped { truth.other() } else { truth };
                answers.insert(id.to_string(), answer);
            }
        }
        Ok(ScriptedConfusionBackend { id: "scripted".into(), answers, rationales: BTreeMap::new() })
    }

    pub fn with_rationales(mut self, rationales: BTreeMap<String, (String, String)>) -> Self {
        self.rationales = rationales;
        self
    }
}

impl Backend for ScriptedConfusionBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn max_in_flight(&self) -> usize {
        8
    }

    fn invoke(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        reply(&self.answers, &self.rationales, req)
    }
}
