//! Evaluation runs: fan a backend out over a split, persist every outcome to
//! an append-only transcript, and tabulate the result.
//!
//! A run directory holds `transcript.jsonl` (one outcome per line, written
//! by a single writer) and `run.json` (the assembled [`RunRecord`]). Re-running
//! with the same directory skips observations already in the transcript.

mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};

use serde::{Deserialize, Serialize};

use crate::gateway::{build_request, query, Backend, GatewayError, ModelVerdict, PromptId, PromptTemplate, RequestParams, ResponseMode};
use crate::model::{sha256_hex, ConflictLabel, DatasetManifest, ModelError, Split};

pub use report::{
    compare_runs, emit_report, render_comparison, tabulate, write_reports, Comparison, ComparisonRow, Conformance,
    Report, ReportFormat, Tabulation, CSV_HEADER,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("run has no tabulatable verdicts")]
    EmptyRun,
    #[error("runs cannot be compared: {0}")]
    SplitMismatch(String),
    #[error("split {0} has no observations")]
    EmptySplit(Split),
    #[error("observation {0} in the evaluated split is unlabeled")]
    Unlabeled(String),
    #[error("request budget exhausted after {completed} of {total} observations")]
    BudgetExceeded { completed: usize, total: usize, source: GatewayError },
    #[error("interrupted after {completed} of {total} observations")]
    Interrupted { completed: usize, total: usize },
    #[error("transcript line {line} is unreadable: {reason}")]
    CorruptTranscript { line: usize, reason: String },
    #[error("backend configuration: {0}")]
    Backend(GatewayError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub observation_id: String,
    pub reason: String,
    #[serde(default)]
    pub raw_text: Option<String>,
    /// Transport-level failures are retried when the run resumes.
    #[serde(default)]
    pub retryable: bool,
}

/// One transcript line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum TranscriptEntry {
    Verdict(ModelVerdict),
    Excluded(Excluded),
}

impl TranscriptEntry {
    pub fn observation_id(&self) -> &str {
        match self {
            TranscriptEntry::Verdict(v) => &v.observation_id,
            TranscriptEntry::Excluded(e) => &e.observation_id,
        }
    }

    fn settled(&self) -> bool {
        !matches!(self, TranscriptEntry::Excluded(e) if e.retryable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub backend_id: String,
    pub prompt_id: PromptId,
    pub split: Split,
    pub mode: ResponseMode,
    pub started_at: String,
    #[serde(default)]
    pub finished_at: Option<String>,
    /// Sorted by observation id.
    pub verdicts: Vec<ModelVerdict>,
    pub excluded: Vec<Excluded>,
    /// Truth of every observation in the split at run time.
    pub ground_truth: BTreeMap<String, ConflictLabel>,
    pub manifest_hash: String,
    pub config_hash: String,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl RunRecord {
    pub fn is_finished(&self) -> bool {
        self.finished_at.is_some()
    }

    pub fn verdict(&self, observation_id: &str) -> Option<&ModelVerdict> {
        self.verdicts
            .binary_search_by(|v| v.observation_id.as_str().cmp(observation_id))
            .ok()
            .map(|i| &self.verdicts[i])
    }

    pub fn load(run_dir: &Path) -> Result<RunRecord, EvalError> {
        Ok(serde_json::from_slice(&std::fs::read(run_dir.join(RUN_FILE))?)?)
    }

    pub fn save(&self, run_dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(run_dir)?;
        let tmp = run_dir.join(format!("{RUN_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        std::fs::rename(tmp, run_dir.join(RUN_FILE))?;
        Ok(())
    }
}

pub const RUN_FILE: &str = "run.json";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";

/// Deterministic id, so a repeated invocation finds and resumes its run.
pub fn derive_run_id(backend_id: &str, prompt: PromptId, split: Split, mode: ResponseMode, manifest_hash: &str, config_hash: &str) -> String {
    let key = format!("{backend_id}\n{prompt}\n{split}\n{mode:?}\n{manifest_hash}\n{config_hash}");
    format!("run-{}", &sha256_hex(key.as_bytes())[..12])
}

/// Everything a run needs besides the backend.
pub struct EvalSpec<'a> {
    pub manifest: &'a DatasetManifest,
    pub split: Split,
    pub prompt: PromptId,
    pub mode: ResponseMode,
    pub model_id: String,
    pub params: RequestParams,
    /// Frame paths resolve against this directory.
    pub root: PathBuf,
    pub run_dir: PathBuf,
    pub run_id: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    /// Worker count; defaults to the backend's in-flight limit.
    pub workers: Option<usize>,
    pub interrupt: Option<&'a AtomicBool>,
}

/// Read a transcript, dropping a torn final line left by a crash. The last
/// entry per observation wins.
pub fn read_transcript(path: &Path) -> Result<BTreeMap<String, TranscriptEntry>, EvalError> {
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let bytes = std::fs::read(path)?;
    let complete = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(i) => i + 1,
        None => 0,
    };
    if complete < bytes.len() {
        // torn write: keep only whole lines
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(complete as u64)?;
        f.sync_all()?;
    }
    for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let entry: TranscriptEntry = serde_json::from_slice(line)
            .map_err(|e| EvalError::CorruptTranscript { line: i + 1, reason: e.to_string() })?;
        out.insert(entry.observation_id().to_string(), entry);
    }
    Ok(out)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn outcome(backend: &dyn Backend, spec: &EvalSpec<'_>, t: &PromptTemplate, id: &str) -> Result<TranscriptEntry, GatewayError> {
    let o = spec.manifest.get(id).expect("pending ids come from the manifest");
    let excluded = |reason: String, raw_text: Option<String>, retryable: bool| {
        Ok(TranscriptEntry::Excluded(Excluded { observation_id: id.to_string(), reason, raw_text, retryable }))
    };
    let req = match build_request(t, o, spec.mode, &spec.model_id, &spec.params, &spec.root) {
        Ok(r) => r,
        Err(e) => return excluded(e.to_string(), None, false),
    };
    match query(backend, &req) {
        Ok(v) => Ok(TranscriptEntry::Verdict(v)),
        Err(GatewayError::Unparseable { raw }) => excluded("unparseable".into(), Some(raw), false),
        Err(e) if e.is_fatal() => Err(e),
        Err(e @ (GatewayError::Timeout { .. } | GatewayError::RemoteError { .. })) => excluded(e.to_string(), None, true),
        Err(e) => excluded(e.to_string(), None, false),
    }
}

/// Evaluate every observation of the split exactly once, resuming from any
/// transcript already in `spec.run_dir`.
pub fn run_eval(backend: &dyn Backend, spec: &EvalSpec<'_>) -> Result<RunRecord, EvalError> {
    let t = PromptTemplate::get(spec.prompt);
    let mut ground_truth = BTreeMap::new();
    for o in spec.manifest.in_split(spec.split) {
        let label = o.ground_truth.ok_or_else(|| EvalError::Unlabeled(o.id.clone()))?;
        ground_truth.insert(o.id.clone(), label);
    }
    if ground_truth.is_empty() {
        return Err(EvalError::EmptySplit(spec.split));
    }
    std::fs::create_dir_all(&spec.run_dir)?;
    let transcript_path = spec.run_dir.join(TRANSCRIPT_FILE);
    let mut entries = read_transcript(&transcript_path)?;
    entries.retain(|id, _| ground_truth.contains_key(id));
    let settled: BTreeSet<&str> = entries.values().filter(|e| e.settled()).map(|e| e.observation_id()).collect();
    let pending: Vec<String> = ground_truth.keys().filter(|id| !settled.contains(id.as_str())).cloned().collect();

    let started_at = match RunRecord::load(&spec.run_dir) {
        Ok(r) if r.run_id == spec.run_id => r.started_at,
        _ => now(),
    };
    let mut record = RunRecord {
        run_id: spec.run_id.clone(),
        backend_id: backend.id().to_string(),
        prompt_id: spec.prompt,
        split: spec.split,
        mode: spec.mode,
        started_at,
        finished_at: None,
        verdicts: Vec::new(),
        excluded: Vec::new(),
        ground_truth,
        manifest_hash: spec.manifest.content_hash()?,
        config_hash: spec.config_hash.clone(),
        config: spec.config.clone(),
    };
    record.save(&spec.run_dir)?;

    let workers = spec.workers.unwrap_or_else(|| backend.max_in_flight()).clamp(1, pending.len().max(1));
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let fatal: Mutex<Option<GatewayError>> = Mutex::new(None);
    let interrupted = || spec.interrupt.is_some_and(|f| f.load(Ordering::SeqCst));

    let mut file = OpenOptions::new().create(true).append(true).open(&transcript_path)?;
    let write_result: std::io::Result<()> = std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<TranscriptEntry>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, stop, fatal, pending, t) = (&next, &stop, &fatal, &pending, &t);
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) || interrupted() {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(id) = pending.get(i) else { break };
                match outcome(backend, spec, t, id) {
                    Ok(entry) => {
                        if tx.send(entry).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        stop.store(true, Ordering::SeqCst);
                        fatal.lock().unwrap().get_or_insert(e);
                        break;
                    }
                }
            });
        }
        drop(tx);
        // single writer: every entry is on disk before it counts
        for entry in rx {
            let mut line = serde_json::to_vec(&entry).map_err(std::io::Error::other)?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.sync_data()?;
            entries.insert(entry.observation_id().to_string(), entry);
        }
        Ok(())
    });
    write_result?;
    drop(file);

    for entry in entries.into_values() {
        match entry {
            TranscriptEntry::Verdict(v) => record.verdicts.push(v),
            TranscriptEntry::Excluded(e) => record.excluded.push(e),
        }
    }
    let total = record.ground_truth.len();
    let done = record.verdicts.len() + record.excluded.iter().filter(|e| !e.retryable).count();
    if let Some(e) = fatal.into_inner().unwrap() {
        record.save(&spec.run_dir)?;
        return Err(match e {
            GatewayError::BudgetExceeded { .. } => EvalError::BudgetExceeded { completed: done, total, source: e },
            other => EvalError::Backend(other),
        });
    }
    if record.verdicts.len() + record.excluded.len() < total {
        record.save(&spec.run_dir)?;
        return Err(EvalError::Interrupted { completed: done, total });
    }
    record.finished_at = Some(now());
    record.save(&spec.run_dir)?;
    Ok(record)
}

/// Write a transcript from scratch; used by tools that rebuild runs.
pub fn write_transcript(path: &Path, entries: &[TranscriptEntry]) -> Result<(), EvalError> {
    let mut f = File::create(path)?;
    for e in entries {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.sync_all()?;
    Ok(())
}
