//! Human review: ground-truth labeling and 0-10 expert scoring of model
//! explanations and recommendations.
//!
//! State is derived from an append-only event log (`events.jsonl`, one
//! [`LogEntry`] per line, fsynced before a mutation is acknowledged). A
//! snapshot (`snapshot.json`) is written every few hundred events; opening a
//! store loads the snapshot and replays the log tail after it.

mod catalog;
pub mod http;
mod labels;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::eval::EvalError;
use crate::model::{sha256_hex, ConflictLabel, ModelError};

pub use catalog::{Catalog, MemoryCatalog, WorkspaceCatalog};
pub use labels::{resolve_labels, LabelResolution, ResolvedLabel, TiedLabel};

pub const EVENT_LOG: &str = "events.jsonl";
pub const SNAPSHOT: &str = "snapshot.json";
pub const LOG_FORMAT: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("unknown run {0:?}")]
    UnknownRun(String),
    #[error("unknown observation {0:?}")]
    UnknownObservation(String),
    #[error("run {run_id} has no {target} text for observation {observation_id}")]
    MissingTargetText { run_id: String, observation_id: String, target: ReviewTarget },
    #[error("{field} = {value} is outside 0..=10")]
    RangeViolation { field: &'static str, value: i64 },
    #[error("{0} must not be empty")]
    MissingField(&'static str),
    #[error("no {target} scores for run {run_id}")]
    NoScores { run_id: String, target: ReviewTarget },
    #[error("idempotency key {0:?} was already used for a different request")]
    IdempotencyConflict(String),
    #[error("event log line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewTarget {
    Explanation,
    Recommendation,
}

impl std::fmt::Display for ReviewTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReviewTarget::Explanation => "explanation",
            ReviewTarget::Recommendation => "recommendation",
        })
    }
}

impl std::str::FromStr for ReviewTarget {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "explanation" => Ok(ReviewTarget::Explanation),
            "recommendation" => Ok(ReviewTarget::Recommendation),
            _ => Err(format!("unknown review target {s:?}")),
        }
    }
}

/// One reviewer's judgment of one explanation or recommendation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewScore {
    pub reviewer_id: String,
    pub run_id: String,
    pub observation_id: String,
    pub target: ReviewTarget,
    pub clarity: i64,
    pub accuracy: i64,
    pub practical_relevance: i64,
    #[serde(default)]
    pub submitted_at: String,
}

impl ReviewScore {
    pub fn key(&self) -> ScoreKey {
        ScoreKey {
            reviewer_id: self.reviewer_id.clone(),
            run_id: self.run_id.clone(),
            observation_id: self.observation_id.clone(),
            target: self.target,
        }
    }

    pub fn criteria(&self) -> [(&'static str, i64); 3] {
        [
            ("clarity", self.clarity),
            ("accuracy", self.accuracy),
            ("practical_relevance", self.practical_relevance),
        ]
    }

    pub fn check_fields(&self) -> Result<(), ReviewError> {
        for (field, value) in [
            ("reviewer_id", &self.reviewer_id),
            ("run_id", &self.run_id),
            ("observation_id", &self.observation_id),
        ] {
            if value.trim().is_empty() {
                return Err(ReviewError::MissingField(field));
            }
        }
        for (field, value) in self.criteria() {
            if !(0..=10).contains(&value) {
                return Err(ReviewError::RangeViolation { field, value });
            }
        }
        Ok(())
    }

    fn total(&self) -> i64 {
        self.clarity + self.accuracy + self.practical_relevance
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScoreKey {
    pub reviewer_id: String,
    pub run_id: String,
    pub observation_id: String,
    pub target: ReviewTarget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEvent {
    pub annotator_id: String,
    pub observation_id: String,
    pub label: ConflictLabel,
    #[serde(default)]
    pub submitted_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReviewEvent {
    Score(ReviewScore),
    Label(LabelEvent),
}

impl ReviewEvent {
    fn submitted_at_mut(&mut self) -> &mut String {
        match self {
            ReviewEvent::Score(s) => &mut s.submitted_at,
            ReviewEvent::Label(l) => &mut l.submitted_at,
        }
    }

    /// Digest of the request content, timestamps excluded, so a client retry
    /// matches its original submission.
    fn fingerprint(&self) -> String {
        let mut e = self.clone();
        e.submitted_at_mut().clear();
        sha256_hex(&serde_json::to_vec(&e).expect("events serialize"))
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub format: u32,
    pub seq: u64,
    #[serde(default)]
    pub idempotency_key: Option<String>,
    pub event: ReviewEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub seq: u64,
    /// True when an idempotency key matched an earlier identical request and
    /// nothing new was written.
    pub replayed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct KeyRecord {
    seq: u64,
    fingerprint: String,
}

/// Everything derived from the log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReviewState {
    pub seq: u64,
    scores: BTreeMap<ScoreKey, ReviewScore>,
    /// (observation, annotator) -> latest label.
    labels: BTreeMap<(String, String), LabelEvent>,
    keys: BTreeMap<String, KeyRecord>,
}

impl ReviewState {
    fn apply(&mut self, entry: &LogEntry) {
        self.seq = self.seq.max(entry.seq);
        if let Some(k) = &entry.idempotency_key {
            self.keys.insert(k.clone(), KeyRecord { seq: entry.seq, fingerprint: entry.event.fingerprint() });
        }
        match &entry.event {
            ReviewEvent::Score(s) => {
                self.scores.insert(s.key(), s.clone());
            }
            ReviewEvent::Label(l) => {
                self.labels.insert((l.observation_id.clone(), l.annotator_id.clone()), l.clone());
            }
        }
    }

    pub fn scores(&self) -> impl Iterator<Item = &ReviewScore> {
        self.scores.values()
    }

    pub fn score(&self, key: &ScoreKey) -> Option<&ReviewScore> {
        self.scores.get(key)
    }

    pub fn labels(&self) -> impl Iterator<Item = &LabelEvent> {
        self.labels.values()
    }

    pub fn labels_for<'a>(&'a self, observation_id: &'a str) -> impl Iterator<Item = &'a LabelEvent> + 'a {
        self.labels.values().filter(move |l| l.observation_id == observation_id)
    }

    /// Rebuild state from a complete event log.
    pub fn replay(path: &Path) -> Result<ReviewState, ReviewError> {
        let mut state = ReviewState::default();
        for entry in read_log(path)? {
            state.apply(&entry);
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionMeans {
    pub clarity: f64,
    pub accuracy: f64,
    pub practical_relevance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub run_id: String,
    pub target: ReviewTarget,
    /// Mean over (item, reviewer) scores of each score's criterion mean.
    pub mean: f64,
    pub per_criterion: CriterionMeans,
    pub n_items: usize,
    pub n_reviewers: usize,
    pub n_scores: usize,
}

/// Item score is the mean of its three criteria; the overall mean is taken over
/// every (item, reviewer) score. Sums are exact integers, so the result does not
/// depend on submission order.
pub fn aggregate_scores<'a>(
    scores: impl IntoIterator<Item = &'a ReviewScore>,
    run_id: &str,
    target: ReviewTarget,
) -> Result<Aggregate, ReviewError> {
    let (mut n, mut total, mut c, mut a, mut p) = (0i64, 0i64, 0i64, 0i64, 0i64);
    let mut items = BTreeSet::new();
    let mut reviewers = BTreeSet::new();
    for s in scores.into_iter().filter(|s| s.run_id == run_id && s.target == target) {
        n += 1;
        total += s.total();
        c += s.clarity;
        a += s.accuracy;
        p += s.practical_relevance;
        items.insert(s.observation_id.as_str());
        reviewers.insert(s.reviewer_id.as_str());
    }
    if n == 0 {
        return Err(ReviewError::NoScores { run_id: run_id.to_string(), target });
    }
    let nf = n as f64;
    Ok(Aggregate {
        run_id: run_id.to_string(),
        target,
        mean: total as f64 / (3.0 * nf),
        per_criterion: CriterionMeans { clarity: c as f64 / nf, accuracy: a as f64 / nf, practical_relevance: p as f64 / nf },
        n_items: items.len(),
        n_reviewers: reviewers.len(),
        n_scores: n as usize,
    })
}

/// Parse an event log, truncating a torn final line in place.
pub fn read_log(path: &Path) -> Result<Vec<LogEntry>, ReviewError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let bytes = std::fs::read(path)?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(complete as u64)?;
        f.sync_all()?;
    }
    let mut out = Vec::new();
    for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let entry: LogEntry =
            serde_json::from_slice(line).map_err(|e| ReviewError::CorruptLog { line: i + 1, reason: e.to_string() })?;
        if entry.format != LOG_FORMAT {
            return Err(ReviewError::CorruptLog { line: i + 1, reason: format!("unsupported format {}", entry.format) });
        }
        out.push(entry);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    format: u32,
    seq: u64,
    scores: Vec<ReviewScore>,
    labels: Vec<LabelEvent>,
    keys: BTreeMap<String, KeyRecord>,
}

impl Snapshot {
    fn of(s: &ReviewState) -> Snapshot {
        Snapshot {
            format: LOG_FORMAT,
            seq: s.seq,
            scores: s.scores.values().cloned().collect(),
            labels: s.labels.values().cloned().collect(),
            keys: s.keys.clone(),
        }
    }

    fn into_state(self) -> ReviewState {
        ReviewState {
            seq: self.seq,
            scores: self.scores.into_iter().map(|s| (s.key(), s)).collect(),
            labels: self.labels.into_iter().map(|l| ((l.observation_id.clone(), l.annotator_id.clone()), l)).collect(),
            keys: self.keys,
        }
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// The review store. One writer at a time; readers share the state lock.
pub struct ReviewStore {
    dir: PathBuf,
    snapshot_every: u64,
    state: RwLock<ReviewState>,
    log: Mutex<File>,
}

impl ReviewStore {
    pub fn open(dir: &Path) -> Result<ReviewStore, ReviewError> {
        Self::open_with(dir, 256)
    }

    pub fn open_with(dir: &Path, snapshot_every: u64) -> Result<ReviewStore, ReviewError> {
        std::fs::create_dir_all(dir)?;
        let snap_path = dir.join(SNAPSHOT);
        let mut state = if snap_path.exists() {
            let snap: Snapshot = serde_json::from_slice(&std::fs::read(&snap_path)?)?;
            snap.into_state()
        } else {
            ReviewState::default()
        };
        let log_path = dir.join(EVENT_LOG);
        for entry in read_log(&log_path)? {
            if entry.seq > state.seq {
                state.apply(&entry);
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(ReviewStore { dir: dir.to_path_buf(), snapshot_every: snapshot_every.max(1), state: RwLock::new(state), log: Mutex::new(log) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join(EVENT_LOG)
    }

    /// A copy of the current state.
    pub fn state(&self) -> ReviewState {
        self.state.read().unwrap().clone()
    }

    pub fn read<T>(&self, f: impl FnOnce(&ReviewState) -> T) -> T {
        f(&self.state.read().unwrap())
    }

    /// Append an event and apply it once it is on disk.
    fn append(&self, mut event: ReviewEvent, key: Option<String>) -> Result<Ack, ReviewError> {
        let log = self.log.lock().unwrap();
        if let Some(k) = &key {
            let state = self.state.read().unwrap();
            if let Some(prior) = state.keys.get(k) {
                return if prior.fingerprint == event.fingerprint() {
                    Ok(Ack { seq: prior.seq, replayed: true })
                } else {
                    Err(ReviewError::IdempotencyConflict(k.clone()))
                };
            }
        }
        if event.submitted_at_mut().is_empty() {
            *event.submitted_at_mut() = now();
        }
        let seq = self.state.read().unwrap().seq + 1;
        let entry = LogEntry { format: LOG_FORMAT, seq, idempotency_key: key, event };
        let mut line = serde_json::to_vec(&entry)?;
        line.push(b'\n');
        let mut f = &*log;
        f.write_all(&line)?;
        f.sync_data()?;
        let mut state = self.state.write().unwrap();
        state.apply(&entry);
        if seq.is_multiple_of(self.snapshot_every) {
            self.write_snapshot(&state)?;
        }
        Ok(Ack { seq, replayed: false })
    }

    fn write_snapshot(&self, state: &ReviewState) -> Result<(), ReviewError> {
        let tmp = self.dir.join(format!("{SNAPSHOT}.tmp"));
        let mut f = File::create(&tmp)?;
        f.write_all(&serde_json::to_vec(&Snapshot::of(state))?)?;
        f.sync_all()?;
        std::fs::rename(tmp, self.dir.join(SNAPSHOT))?;
        Ok(())
    }

    pub fn snapshot(&self) -> Result<(), ReviewError> {
        let _log = self.log.lock().unwrap();
        self.write_snapshot(&self.state.read().unwrap())
    }

    /// Validate against the catalog and durably record a score. A later score
    /// with the same (reviewer, run, observation, target) replaces it.
    pub fn record_score(&self, score: ReviewScore, key: Option<String>, catalog: &dyn Catalog) -> Result<Ack, ReviewError> {
        score.check_fields()?;
        let run = catalog.run(&score.run_id)?.ok_or_else(|| ReviewError::UnknownRun(score.run_id.clone()))?;
        let verdict = run
            .verdict(&score.observation_id)
            .ok_or_else(|| ReviewError::UnknownObservation(score.observation_id.clone()))?;
        let text = match score.target {
            ReviewTarget::Explanation => &verdict.explanation,
            ReviewTarget::Recommendation => &verdict.recommendation,
        };
        if text.as_deref().is_none_or(|t| t.trim().is_empty()) {
            return Err(ReviewError::MissingTargetText {
                run_id: score.run_id,
                observation_id: score.observation_id,
                target: score.target,
            });
        }
        self.append(ReviewEvent::Score(score), key)
    }

    pub fn record_label(&self, label: LabelEvent, key: Option<String>, catalog: &dyn Catalog) -> Result<Ack, ReviewError> {
        if label.annotator_id.trim().is_empty() {
            return Err(ReviewError::MissingField("annotator_id"));
        }
        if !catalog.has_observation(&label.observation_id)? {
            return Err(ReviewError::UnknownObservation(label.observation_id));
        }
        self.append(ReviewEvent::Label(label), key)
    }

    pub fn aggregate(&self, run_id: &str, target: ReviewTarget) -> Result<Aggregate, ReviewError> {
        self.read(|s| aggregate_scores(s.scores(), run_id, target))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::eval::RunRecord;
    use crate::gateway::{ModelVerdict, PromptId, ResponseMode};
    use crate::model::fixtures::observation;
    use crate::model::{DatasetManifest, Split};
    use proptest::prelude::*;

    pub(crate) fn verdict(id: &str, rationale: bool) -> ModelVerdict {
        ModelVerdict {
            observation_id: id.into(),
            label: ConflictLabel::Conflict,
            raw_text: "yes".into(),
            explanation: rationale.then(|| format!("explanation for {id}")),
            recommendation: rationale.then(|| format!("recommendation for {id}")),
            conformant: true,
            latency_ms: 1,
            backend_id: "oracle".into(),
        }
    }

    pub(crate) fn run(run_id: &str, items: usize, rationale: bool) -> RunRecord {
        let ids: Vec<String> = (0..items).map(|i| format!("obs-{i}")).collect();
        RunRecord {
            run_id: run_id.into(),
            backend_id: "oracle".into(),
            prompt_id: PromptId::P2,
            split: Split::Test,
            mode: if rationale { ResponseMode::VerdictWithRationale } else { ResponseMode::VerdictOnly },
            started_at: "2026-01-01T00:00:00.000Z".into(),
            finished_at: Some("2026-01-01T00:01:00.000Z".into()),
            verdicts: ids.iter().map(|id| verdict(id, rationale)).collect(),
            excluded: vec![],
            ground_truth: ids.iter().map(|id| (id.clone(), ConflictLabel::Conflict)).collect(),
            manifest_hash: String::new(),
            config_hash: String::new(),
            config: serde_json::Value::Null,
        }
    }

    pub(crate) fn catalog() -> MemoryCatalog {
        let obs = (0..5).map(|i| observation(&format!("obs-{i}"), None)).collect();
        MemoryCatalog {
            manifest: Some(DatasetManifest::build(obs, 0).unwrap()),
            runs: vec![run("run-r", 5, true), run("run-v", 5, false)],
            root: PathBuf::new(),
        }
    }

    pub(crate) fn score(reviewer: &str, obs: &str, target: ReviewTarget, c: i64, a: i64, p: i64) -> ReviewScore {
        ReviewScore {
            reviewer_id: reviewer.into(),
            run_id: "run-r".into(),
            observation_id: obs.into(),
            target,
            clarity: c,
            accuracy: a,
            practical_relevance: p,
            submitted_at: String::new(),
        }
    }

    use ReviewTarget::{Explanation, Recommendation};

    #[test]
    fn score_round_trips_through_restart() {
        let dir = tempfile::tempdir().unwrap();
        let cat = catalog();
        let s = score("r1", "obs-0", Explanation, 9, 9, 9);
        {
            let store = ReviewStore::open(dir.path()).unwrap();
            assert_eq!(store.record_score(s.clone(), None, &cat).unwrap().seq, 1);
        }
        let store = ReviewStore::open(dir.path()).unwrap();
        let back = store.read(|st| st.score(&s.key()).cloned()).unwrap();
        assert_eq!(ReviewScore { submitted_at: String::new(), ..back.clone() }, s);
        assert!(!back.submitted_at.is_empty());
    }

    #[test]
    fn validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReviewStore::open(dir.path()).unwrap();
        let cat = catalog();
        let e = store.record_score(score("r1", "obs-0", Explanation, 11, 9, 9), None, &cat).unwrap_err();
        assert!(matches!(e, ReviewError::RangeViolation { field: "clarity", value: 11 }));
        let e = store.record_score(score("r1", "obs-0", Explanation, 5, -1, 9), None, &cat).unwrap_err();
        assert!(matches!(e, ReviewError::RangeViolation { field: "accuracy", .. }));
        let e = store
            .record_score(ReviewScore { run_id: "run-v".into(), ..score("r1", "obs-0", Recommendation, 9, 9, 9) }, None, &cat)
            .unwrap_err();
        assert!(matches!(e, ReviewError::MissingTargetText { .. }));
        let e = store
            .record_score(ReviewScore { run_id: "nope".into(), ..score("r1", "obs-0", Explanation, 9, 9, 9) }, None, &cat)
            .unwrap_err();
        assert!(matches!(e, ReviewError::UnknownRun(_)));
        let e = store.record_score(score("r1", "obs-9", Explanation, 9, 9, 9), None, &cat).unwrap_err();
        assert!(matches!(e, ReviewError::UnknownObservation(_)));
        // nothing was written
        assert_eq!(store.state().seq, 0);
        assert!(matches!(store.aggregate("run-r", Explanation), Err(ReviewError::NoScores { .. })));
    }

    #[test]
    fn worked_aggregates() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReviewStore::open(dir.path()).unwrap();
        let cat = catalog();
        store.record_score(score("r1", "obs-0", Explanation, 6, 8, 10), None, &cat).unwrap();
        store.record_score(score("r2", "obs-0", Explanation, 8, 8, 8), None, &cat).unwrap();
        let agg = store.aggregate("run-r", Explanation).unwrap();
        assert_eq!(agg.mean, 8.0);
        assert_eq!((agg.n_items, agg.n_reviewers, agg.n_scores), (1, 2, 2));
        assert_eq!(agg.per_criterion, CriterionMeans { clarity: 7.0, accuracy: 8.0, practical_relevance: 9.0 });

        for r in ["a", "b", "c"] {
            for i in 0..5 {
                store.record_score(score(r, &format!("obs-{i}"), Recommendation, 9, 9, 9), None, &cat).unwrap();
            }
        }
        assert_eq!(store.aggregate("run-r", Recommendation).unwrap().mean, 9.0);
    }

    #[test]
    fn resubmission_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReviewStore::open(dir.path()).unwrap();
        let cat = catalog();
        store.record_score(score("r1", "obs-0", Explanation, 2, 2, 2), None, &cat).unwrap();
        store.record_score(score("r1", "obs-0", Explanation, 8, 8, 8), None, &cat).unwrap();
        let agg = store.aggregate("run-r", Explanation).unwrap();
        assert_eq!((agg.mean, agg.n_scores), (8.0, 1));
    }

    #[test]
    fn idempotency_keys() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReviewStore::open(dir.path()).unwrap();
        let cat = catalog();
        let s = score("r1", "obs-0", Explanation, 7, 7, 7);
        let first = store.record_score(s.clone(), Some("k1".into()), &cat).unwrap();
        let again = store.record_score(s.clone(), Some("k1".into()), &cat).unwrap();
        assert_eq!(again, Ack { seq: first.seq, replayed: true });
        assert_eq!(read_log(&store.log_path()).unwrap().len(), 1);
        let e = store.record_score(score("r1", "obs-0", Explanation, 1, 1, 1), Some("k1".into()), &cat).unwrap_err();
        assert!(matches!(e, ReviewError::IdempotencyConflict(_)));
        // keys survive a restart
        drop(store);
        let store = ReviewStore::open(dir.path()).unwrap();
        assert!(store.record_score(s, Some("k1".into()), &cat).unwrap().replayed);
    }

    #[test]
    fn snapshot_plus_tail_equals_full_replay() {
        let dir = tempfile::tempdir().unwrap();
        let cat = catalog();
        let store = ReviewStore::open_with(dir.path(), 4).unwrap();
        for i in 0..11 {
            let s = score(&format!("r{}", i % 3), &format!("obs-{}", i % 5), Explanation, i % 11, 10 - i % 11, 5);
            store.record_score(s, Some(format!("key-{i}")), &cat).unwrap();
        }
        let label = LabelEvent {
            annotator_id: "a".into(),
            observation_id: "obs-1".into(),
            label: ConflictLabel::Conflict,
            submitted_at: String::new(),
        };
        store.record_label(label, None, &cat).unwrap();
        let live = store.state();
        drop(store);
        assert!(dir.path().join(SNAPSHOT).exists());
        let reopened = ReviewStore::open(dir.path()).unwrap().state();
        let replayed = ReviewState::replay(&dir.path().join(EVENT_LOG)).unwrap();
        assert_eq!(live, reopened);
        assert_eq!(live, replayed);
        assert_eq!(live.seq, 12);
    }

    #[test]
    fn torn_log_tail_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        let cat = catalog();
        {
            let store = ReviewStore::open(dir.path()).unwrap();
            store.record_score(score("r1", "obs-0", Explanation, 9, 9, 9), None, &cat).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(dir.path().join(EVENT_LOG)).unwrap();
        f.write_all(b"{\"format\":1,\"seq\":2,\"ev").unwrap();
        drop(f);
        let store = ReviewStore::open(dir.path()).unwrap();
        assert_eq!(store.state().seq, 1);
        assert_eq!(store.record_score(score("r2", "obs-0", Explanation, 8, 8, 8), None, &cat).unwrap().seq, 2);
        assert_eq!(read_log(&store.log_path()).unwrap().len(), 2);
    }

    #[test]
    fn concurrent_writers_lose_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let cat = catalog();
        let store = ReviewStore::open(dir.path()).unwrap();
        std::thread::scope(|s| {
            for r in 0..4 {
                let (store, cat) = (&store, &cat);
                s.spawn(move || {
                    for i in 0..5 {
                        store.record_score(score(&format!("r{r}"), &format!("obs-{i}"), Explanation, 5, 5, 5), None, cat).unwrap();
                    }
                });
            }
        });
        let seqs: Vec<u64> = read_log(&store.log_path()).unwrap().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, (1..=20).collect::<Vec<_>>());
        assert_eq!(store.aggregate("run-r", Explanation).unwrap().n_scores, 20);
    }

    fn arb_scores() -> impl Strategy<Value = Vec<ReviewScore>> {
        prop::collection::vec(
            (0..3usize, 0..5usize, any::<bool>(), 0..=10i64, 0..=10i64, 0..=10i64).prop_map(|(r, i, t, c, a, p)| {
                let target = if t { Explanation } else { Recommendation };
                score(&format!("r{r}"), &format!("obs-{i}"), target, c, a, p)
            }),
            1..40,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn aggregate_ignores_submission_order(scores in arb_scores(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            // distinct keys only; with duplicates order decides which one wins
            let mut by_key = BTreeMap::new();
            for s in scores {
                by_key.insert(s.key(), s);
            }
            let unique: Vec<ReviewScore> = by_key.into_values().collect();
            let mut shuffled = unique.clone();
            shuffled.shuffle(&mut crate::seed::substream(seed, "test"));
            for target in [Explanation, Recommendation] {
                let a = aggregate_scores(&unique, "run-r", target).ok();
                let b = aggregate_scores(&shuffled, "run-r", target).ok();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn log_replay_and_reopen_reproduce_state(scores in arb_scores(), every in 1u64..6) {
            let dir = tempfile::tempdir().unwrap();
            let cat = catalog();
            let live = {
                let store = ReviewStore::open_with(dir.path(), every).unwrap();
                for s in scores {
                    store.record_score(s, None, &cat).unwrap();
                }
                store.state()
            };
            prop_assert_eq!(&ReviewState::replay(&dir.path().join(EVENT_LOG)).unwrap(), &live);
            let reopened = ReviewStore::open_with(dir.path(), every).unwrap();
            prop_assert_eq!(&reopened.state(), &live);
        }
    }
}
