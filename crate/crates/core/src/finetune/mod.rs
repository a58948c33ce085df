//! Chat-format fine-tuning files: one JSON object per observation with a
//! system prompt, a user turn carrying the three frames as data URLs, and the
//! target assistant reply. A `<name>.meta.json` sidecar records provenance.

mod rationale;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::gateway::{
    format_reply, frame_data_urls, parse_verdict, PromptId, PromptTemplate, ResponseMode, RATIONALE_INSTRUCTION,
};
use crate::model::{ClassCounts, ConflictLabel, DatasetManifest, ModelError, Provenance, Split};

pub use rationale::scenario_rationale;

pub const EXPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FinetuneError {
    #[error("observation {0} has no ground-truth label")]
    UnlabeledObservation(String),
    #[error("cannot read frames of {observation}: {reason}")]
    ImageReadFailure { observation: String, reason: String },
    #[error("no rationale text for observation {0}")]
    MissingRationale(String),
    #[error("fine-tune exports cover the train or val split, not {0}")]
    InvalidSplit(Split),
    #[error("split {0} is empty")]
    EmptySplit(Split),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Part {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Content {
    Text(String),
    Parts(Vec<Part>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: Content,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub messages: Vec<Message>,
}

impl FinetuneRecord {
    pub fn system_text(&self) -> Option<&str> {
        match &self.messages.first()?.content {
            Content::Text(t) => Some(t),
            Content::Parts(_) => None,
        }
    }

    pub fn assistant_text(&self) -> Option<&str> {
        match &self.messages.get(2)?.content {
            Content::Text(t) => Some(t),
            Content::Parts(_) => None,
        }
    }
}

/// Sidecar written next to every export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportMeta {
    pub format_version: u32,
    pub split: Split,
    pub prompt_id: PromptId,
    pub mode: ResponseMode,
    pub manifest_hash: String,
    pub records: usize,
    pub bytes: u64,
    pub class_counts: ClassCounts,
    /// Assistant rationales were generated from simulator facts, not written by people.
    pub synthetic_rationale: bool,
    /// Observation id of each line, in file order.
    pub observation_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub path: PathBuf,
    pub records: usize,
    pub bytes: u64,
    pub class_counts: ClassCounts,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Build the record for one observation. `rationale` is required in
/// rationale mode.
pub fn build_record(
    t: &PromptTemplate,
    mode: ResponseMode,
    label: ConflictLabel,
    image_urls: Vec<String>,
    rationale: Option<&(String, String)>,
) -> FinetuneRecord {
    let mut parts: Vec<Part> = image_urls
        .into_iter()
        .map(|url| Part::ImageUrl { image_url: ImageUrl { url } })
        .collect();
    if mode == ResponseMode::VerdictWithRationale {
        parts.push(Part::Text { text: RATIONALE_INSTRUCTION.to_string() });
    }
    let (e, r) = rationale.map(|(e, r)| (e.as_str(), r.as_str())).unwrap_or(("", ""));
    FinetuneRecord {
        messages: vec![
            Message { role: "system".into(), content: Content::Text(t.system_text.to_string()) },
            Message { role: "user".into(), content: Content::Parts(parts) },
            Message { role: "assistant".into(), content: Content::Text(format_reply(label, mode, e, r)) },
        ],
    }
}

/// Write `split` of `m` as chat-format JSONL at `out`, records ordered by
/// observation id. Frames are read relative to `root`.
pub fn export_chat_jsonl(
    m: &DatasetManifest,
    split: Split,
    t: &PromptTemplate,
    mode: ResponseMode,
    root: &Path,
    rationales: &BTreeMap<String, (String, String)>,
    out: &Path,
) -> Result<ExportSummary, FinetuneError> {
    if split == Split::Test {
        return Err(FinetuneError::InvalidSplit(split));
    }
    let mut obs: Vec<_> = m.in_split(split).collect();
    if obs.is_empty() {
        return Err(FinetuneError::EmptySplit(split));
    }
    obs.sort_by(|a, b| a.id.cmp(&b.id));
    for o in &obs {
        if o.ground_truth.is_none() {
            return Err(FinetuneError::UnlabeledObservation(o.id.clone()));
        }
        if mode == ResponseMode::VerdictWithRationale && !rationales.contains_key(&o.id) {
            return Err(FinetuneError::MissingRationale(o.id.clone()));
        }
    }
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(out)?);
    let mut bytes = 0u64;
    let mut class_counts = ClassCounts::default();
    let mut ids = Vec::with_capacity(obs.len());
    for o in &obs {
        let label = o.ground_truth.expect("checked above");
        let urls = frame_data_urls(o, root).map_err(|e| FinetuneError::ImageReadFailure {
            observation: o.id.clone(),
            reason: e.to_string(),
        })?;
        let rec = build_record(t, mode, label, urls, rationales.get(&o.id));
        let line = serde_json::to_string(&rec)?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        bytes += line.len() as u64 + 1;
        class_counts.add(label);
        ids.push(o.id.clone());
    }
    w.flush()?;

    let meta = ExportMeta {
        format_version: EXPORT_FORMAT_VERSION,
        split,
        prompt_id: t.id,
        mode,
        manifest_hash: m.content_hash()?,
        records: ids.len(),
        bytes,
        class_counts,
        synthetic_rationale: mode == ResponseMode::VerdictWithRationale
            && obs.iter().any(|o| o.provenance == Provenance::Synthetic),
        observation_ids: ids,
    };
    std::fs::write(meta_path(out), serde_json::to_vec_pretty(&meta)?)?;
    Ok(ExportSummary { path: out.to_owned(), records: meta.records, bytes, class_counts })
}

/// Parse every record of an export.
pub fn read_export(path: &Path) -> Result<Vec<FinetuneRecord>, FinetuneError> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        out.push(serde_json::from_str(&line?)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub line_count: usize,
    pub schema_violations: Vec<Violation>,
    pub class_balance: ClassCounts,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.schema_violations.is_empty()
    }
}

fn check_record(text: &str) -> Result<ConflictLabel, String> {
    let rec: FinetuneRecord = serde_json::from_str(text).map_err(|e| format!("not a record: {e}"))?;
    let roles: Vec<&str> = rec.messages.iter().map(|m| m.role.as_str()).collect();
    if roles != ["system", "user", "assistant"] {
        return Err(format!("roles {roles:?}, expected system, user, assistant"));
    }
    let system = rec.system_text().ok_or("system content must be text")?;
    if ![PromptId::P1, PromptId::P2].iter().any(|&p| PromptTemplate::get(p).system_text == system) {
        return Err("system text is not a known prompt".into());
    }
    let Content::Parts(parts) = &rec.messages[1].content else {
        return Err("user content must be a list of parts".into());
    };
    let images: Vec<&str> = parts
        .iter()
        .filter_map(|p| match p {
            Part::ImageUrl { image_url } => Some(image_url.url.as_str()),
            Part::Text { .. } => None,
        })
        .collect();
    if images.len() != 3 {
        return Err(format!("{} image parts, expected 3", images.len()));
    }
    if parts.iter().take(3).any(|p| !matches!(p, Part::ImageUrl { .. })) {
        return Err("images must come first".into());
    }
    for (k, url) in images.iter().enumerate() {
        let payload = url
            .strip_prefix("data:image/png;base64,")
            .ok_or_else(|| format!("image {k} is not a PNG data URL"))?;
        let bytes = STANDARD.decode(payload).map_err(|e| format!("image {k}: {e}"))?;
        if !bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
            return Err(format!("image {k} is not PNG data"));
        }
    }
    let answer = rec.assistant_text().ok_or("assistant content must be text")?;
    let p = parse_verdict(answer).map_err(|e| e.to_string())?;
    if !p.conformant {
        return Err(format!("assistant answer {answer:?} is not conformant"));
    }
    let rationale_requested = parts.iter().any(|p| matches!(p, Part::Text { .. }));
    if rationale_requested && (p.explanation.is_none() || p.recommendation.is_none()) {
        return Err("rationale layout lacks explanation or recommendation".into());
    }
    if !rationale_requested && answer != p.label.token() {
        return Err("verdict-only answer must be exactly yes or no".into());
    }
    Ok(p.label)
}

/// Check an export line by line without loading it whole.
pub fn validate_export(path: &Path) -> Result<ValidationReport, FinetuneError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut report = ValidationReport {
        line_count: 0,
        schema_violations: Vec::new(),
        class_balance: ClassCounts::default(),
    };
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if r.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        report.line_count += 1;
        let line = report.line_count;
        let terminated = buf.last() == Some(&b'\n');
        let text = match std::str::from_utf8(&buf) {
            Ok(t) => t.trim_end_matches(['\n', '\r']),
            Err(_) => {
                report.schema_violations.push(Violation { line, reason: "not UTF-8".into() });
                continue;
            }
        };
        match check_record(text) {
            Ok(label) => report.class_balance.add(label),
            Err(reason) => report.schema_violations.push(Violation { line, reason }),
        }
        if !terminated && report.schema_violations.last().is_none_or(|v| v.line != line) {
            report.schema_violations.push(Violation { line, reason: "missing final newline".into() });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fixtures::observation, ImageRef, Observation};

    const PNG: &[u8] = b"\x89PNG\r\n\x1a\nfake";

    fn workspace(dir: &Path, per_class: usize, split: Split) -> DatasetManifest {
        std::fs::create_dir_all(dir.join("frames")).unwrap();
        let mut obs: Vec<Observation> = Vec::new();
        for i in 0..per_class * 2 {
            let label = if i % 2 == 0 { ConflictLabel::Conflict } else { ConflictLabel::NoConflict };
            let mut o = observation(&format!("o{i:03}"), Some(label));
            o.split = Some(split);
            for f in &mut o.frames {
                let rel = format!("frames/{}_f{}.png", o.id, f.index);
                let bytes = [PNG, o.id.as_bytes()].concat();
                std::fs::write(dir.join(&rel), &bytes).unwrap();
                f.image_ref = ImageRef::for_file(rel, &bytes);
            }
            obs.push(o);
        }
        obs.reverse();
        DatasetManifest::build(obs, 0).unwrap()
    }

    #[test]
    fn export_is_sorted_balanced_and_valid() {
        let dir = tempfile::tempdir().unwrap();
        let m = workspace(dir.path(), 5, Split::Train);
        let out = dir.path().join("export/train.jsonl");
        let t = PromptTemplate::get(PromptId::P2);
        let s = export_chat_jsonl(&m, Split::Train, &t, ResponseMode::VerdictOnly, dir.path(), &BTreeMap::new(), &out)
            .unwrap();
        assert_eq!(s.records, 10);
        assert_eq!(s.class_counts, ClassCounts { conflict_count: 5, no_conflict_count: 5 });
        assert_eq!(s.bytes, std::fs::metadata(&out).unwrap().len());

        let recs = read_export(&out).unwrap();
        assert_eq!(recs[0].assistant_text(), Some("yes"));
        assert_eq!(recs[1].assistant_text(), Some("no"));
        assert!(recs.iter().all(|r| r.system_text() == Some(t.system_text)));

        let meta: ExportMeta = serde_json::from_slice(&std::fs::read(meta_path(&out)).unwrap()).unwrap();
        assert_eq!(meta.observation_ids[0], "o000");
        assert_eq!(meta.manifest_hash, m.content_hash().unwrap());
        assert!(!meta.synthetic_rationale);
        assert_eq!(meta_path(&out), dir.path().join("export/train.meta.json"));

        let report = validate_export(&out).unwrap();
        assert!(report.is_clean(), "{:?}", report.schema_violations);
        assert_eq!(report.line_count, 10);
        assert_eq!(report.class_balance, s.class_counts);
    }

    #[test]
    fn rationale_mode_needs_text_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let m = workspace(dir.path(), 2, Split::Val);
        let out = dir.path().join("val.jsonl");
        let t = PromptTemplate::get(PromptId::P1);
        let mode = ResponseMode::VerdictWithRationale;
        let err = export_chat_jsonl(&m, Split::Val, &t, mode, dir.path(), &BTreeMap::new(), &out);
        assert!(matches!(err, Err(FinetuneError::MissingRationale(_))));
        let rationales = m
            .observations
            .iter()
            .map(|o| (o.id.clone(), ("what happens".to_string(), "what to do".to_string())))
            .collect();
        export_chat_jsonl(&m, Split::Val, &t, mode, dir.path(), &rationales, &out).unwrap();
        let recs = read_export(&out).unwrap();
        assert_eq!(
            recs[0].assistant_text(),
            Some("verdict: yes\nexplanation: what happens\nrecommendation: what to do")
        );
        assert!(validate_export(&out).unwrap().is_clean());
        let meta: ExportMeta = serde_json::from_slice(&std::fs::read(meta_path(&out)).unwrap()).unwrap();
        assert!(meta.synthetic_rationale);
    }

    #[test]
    fn truncated_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let m = workspace(dir.path(), 2, Split::Train);
        let out = dir.path().join("t.jsonl");
        let t = PromptTemplate::get(PromptId::P2);
        export_chat_jsonl(&m, Split::Train, &t, ResponseMode::VerdictOnly, dir.path(), &BTreeMap::new(), &out).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let cut = lines[2].len() / 2;
        lines[2].truncate(cut);
        std::fs::write(&out, lines.join("\n") + "\n").unwrap();
        let report = validate_export(&out).unwrap();
        assert_eq!(report.line_count, 4);
        assert_eq!(report.schema_violations.iter().map(|v| v.line).collect::<Vec<_>>(), [3]);
        assert_eq!(report.class_balance.total(), 3);
    }

    #[test]
    fn bad_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = workspace(dir.path(), 1, Split::Train);
        let t = PromptTemplate::get(PromptId::P2);
        let out = dir.path().join("x.jsonl");
        let none = BTreeMap::new();
        assert!(matches!(
            export_chat_jsonl(&m, Split::Test, &t, ResponseMode::VerdictOnly, dir.path(), &none, &out),
            Err(FinetuneError::InvalidSplit(Split::Test))
        ));
        assert!(matches!(
            export_chat_jsonl(&m, Split::Val, &t, ResponseMode::VerdictOnly, dir.path(), &none, &out),
            Err(FinetuneError::EmptySplit(Split::Val))
        ));
        std::fs::remove_file(dir.path().join("frames/o000_f2.png")).unwrap();
        assert!(matches!(
            export_chat_jsonl(&m, Split::Train, &t, ResponseMode::VerdictOnly, dir.path(), &none, &out),
            Err(FinetuneError::ImageReadFailure { .. })
        ));
        m.observations[0].ground_truth = None;
        assert!(matches!(
            export_chat_jsonl(&m, Split::Train, &t, ResponseMode::VerdictOnly, dir.path(), &none, &out),
            Err(FinetuneError::UnlabeledObservation(_))
        ));
    }

    #[test]
    fn foreign_system_text_and_bad_answer_flagged() {
        let rec = build_record(
            &PromptTemplate::get(PromptId::P1),
            ResponseMode::VerdictOnly,
            ConflictLabel::Conflict,
            vec![format!("data:image/png;base64,{}", STANDARD.encode(PNG)); 3],
            None,
        );
        assert!(check_record(&serde_json::to_string(&rec).unwrap()).is_ok());
        let mut bad = rec.clone();
        bad.messages[0].content = Content::Text("Be helpful.".into());
        assert!(check_record(&serde_json::to_string(&bad).unwrap()).unwrap_err().contains("known prompt"));
        let mut bad = rec;
        bad.messages[2].content = Content::Text("Yes.".into());
        assert!(check_record(&serde_json::to_string(&bad).unwrap()).unwrap_err().contains("conformant"));
    }
}
