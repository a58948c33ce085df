//! Prompt construction, inference backends and verdict parsing.

mod mock;
mod parse;
pub mod remote;

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::model::{sha256_hex, ConflictLabel, Observation, FRAMES_PER_OBSERVATION};

pub use mock::{OracleBackend, ScriptedConfusionBackend};
pub use parse::{parse_verdict, ParsedVerdict};
pub use remote::{RemoteBackend, RemoteConfig, Transport, TransportError, TransportResponse, UreqTransport};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("observation {observation}: frame {index} unavailable ({reason})")]
    MissingFrame { observation: String, index: usize, reason: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("remote endpoint failed with status {status} after {attempts} attempt(s): {body}")]
    RemoteError { status: u16, attempts: u32, body: String },
    #[error("request budget of {budget} exhausted")]
    BudgetExceeded { budget: u64 },
    #[error("no yes/no verdict recoverable from {raw:?}")]
    Unparseable { raw: String },
    #[error("target matrix inconsistent with the split: {0}")]
    InconsistentTarget(String),
    #[error("backend has no answer for observation {0:?}")]
    UnknownObservation(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl GatewayError {
    /// Errors that end a whole run rather than a single observation.
    pub fn is_fatal(&self) -> bool {
        matches!(self, GatewayError::BudgetExceeded { .. } | GatewayError::Config(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptId {
    P1,
    P2,
}

impl std::str::FromStr for PromptId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "P1" => Ok(PromptId::P1),
            "P2" => Ok(PromptId::P2),
            _ => Err(format!("unknown prompt {s:?} (expected P1 or P2)")),
        }
    }
}

impl std::fmt::Display for PromptId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PromptId::P1 => "P1",
            PromptId::P2 => "P2",
        })
    }
}

const P1_TEXT: &str = include_str!("../../prompts/p1.txt");
const P2_TEXT: &str = include_str!("../../prompts/p2.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: PromptId,
    pub system_text: &'static str,
}

impl PromptTemplate {
    pub fn get(id: PromptId) -> PromptTemplate {
        let system_text = match id {
            PromptId::P1 => P1_TEXT,
            PromptId::P2 => P2_TEXT,
        };
        PromptTemplate { id, system_text }
    }

    /// Answer token to label.
    pub fn lexicon(token: &str) -> Option<ConflictLabel> {
        match token {
            "yes" => Some(ConflictLabel::Conflict),
            "no" => Some(ConflictLabel::NoConflict),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    VerdictOnly,
    VerdictWithRationale,
}

impl std::str::FromStr for ResponseMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "verdict-only" | "verdict_only" => Ok(ResponseMode::VerdictOnly),
            "rationale" | "verdict-with-rationale" | "verdict_with_rationale" => {
                Ok(ResponseMode::VerdictWithRationale)
            }
            _ => Err(format!("unknown mode {s:?} (expected verdict-only or rationale)")),
        }
    }
}

/// Instruction appended in rationale mode. Replies are read line by line.
pub const RATIONALE_INSTRUCTION: &str = "Reply in exactly three lines:\n\
verdict: yes or no\n\
explanation: what in the frames supports the verdict\n\
recommendation: the next action the drivers involved should take";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum ContentPart {
    Text(String),
    /// A `data:image/png;base64,...` URL.
    Image(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestParams {
    pub temperature: f64,
    pub max_answer_tokens: u32,
}

impl Default for RequestParams {
    fn default() -> Self {
        RequestParams { temperature: 0.0, max_answer_tokens: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub observation_id: String,
    pub system: String,
    pub user_parts: Vec<ContentPart>,
    pub model_id: String,
    pub params: RequestParams,
    pub mode: ResponseMode,
}

impl ChatRequest {
    pub fn images(&self) -> impl Iterator<Item = &str> {
        self.user_parts.iter().filter_map(|p| match p {
            ContentPart::Image(url) => Some(url.as_str()),
            ContentPart::Text(_) => None,
        })
    }
}

pub fn png_data_url(bytes: &[u8]) -> String {
    format!("data:image/png;base64,{}", STANDARD.encode(bytes))
}

/// Read, checksum and encode the three frames of `o`, in index order.
pub fn frame_data_urls(o: &Observation, root: &Path) -> Result<Vec<String>, GatewayError> {
    let missing = |index: usize, reason: String| GatewayError::MissingFrame {
        observation: o.id.clone(),
        index,
        reason,
    };
    let mut frames: Vec<_> = o.frames.iter().collect();
    frames.sort_by_key(|f| f.index);
    let mut urls = Vec::with_capacity(FRAMES_PER_OBSERVATION);
    for k in 0..FRAMES_PER_OBSERVATION {
        let f = frames
            .iter()
            .find(|f| f.index as usize == k)
            .ok_or_else(|| missing(k, "not in observation".into()))?;
        let bytes = f.image_ref.load(root).map_err(|e| missing(k, e.to_string()))?;
        if let crate::model::ImageRef::Path { sha256, .. } = &f.image_ref {
            if !sha256.is_empty() && *sha256 != sha256_hex(&bytes) {
                return Err(missing(k, "checksum mismatch".into()));
            }
        }
        urls.push(png_data_url(&bytes));
    }
    Ok(urls)
}

pub fn build_request(
    t: &PromptTemplate,
    o: &Observation,
    mode: ResponseMode,
    model_id: &str,
    params: &RequestParams,
    root: &Path,
) -> Result<ChatRequest, GatewayError> {
    let mut user_parts: Vec<ContentPart> = frame_data_urls(o, root)?.into_iter().map(ContentPart::Image).collect();
    if mode == ResponseMode::VerdictWithRationale {
        user_parts.push(ContentPart::Text(RATIONALE_INSTRUCTION.to_string()));
    }
    Ok(ChatRequest {
        observation_id: o.id.clone(),
        system: t.system_text.to_string(),
        user_parts,
        model_id: model_id.to_string(),
        params: params.clone(),
        mode,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVerdict {
    pub observation_id: String,
    pub label: ConflictLabel,
    pub raw_text: String,
    #[serde(default)]
    pub explanation: Option<String>,
    #[serde(default)]
    pub recommendation: Option<String>,
    pub conformant: bool,
    pub latency_ms: u64,
    pub backend_id: String,
}

/// An inference backend. Implementations are shared across worker threads.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    /// Upper bound on concurrent `invoke` calls worth issuing.
    fn max_in_flight(&self) -> usize {
        1
    }

    /// Raw model text for `req`.
    fn invoke(&self, req: &ChatRequest) -> Result<String, GatewayError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }

    fn invoke(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        (**self).invoke(req)
    }
}

/// Invoke and parse. `Unparseable` is returned as an error so callers can
/// exclude the observation.
pub fn query(backend: &dyn Backend, req: &ChatRequest) -> Result<ModelVerdict, GatewayError> {
    let started = std::time::Instant::now();
    let raw = backend.invoke(req)?;
    let latency_ms = started.elapsed().as_millis() as u64;
    let p = parse_verdict(&raw)?;
    Ok(ModelVerdict {
        observation_id: req.observation_id.clone(),
        label: p.label,
        raw_text: raw,
        explanation: p.explanation,
        recommendation: p.recommendation,
        conformant: p.conformant,
        latency_ms,
        backend_id: backend.id().to_string(),
    })
}

/// Caps the number of `invoke` calls made through any backend.
pub struct Budgeted<B> {
    inner: B,
    budget: u64,
    used: std::sync::atomic::AtomicU64,
}

impl<B: Backend> Budgeted<B> {
    pub fn new(inner: B, budget: u64) -> Self {
        Budgeted { inner, budget, used: Default::default() }
    }

    pub fn used(&self) -> u64 {
        self.used.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl<B: Backend> Backend for Budgeted<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn max_in_flight(&self) -> usize {
        self.inner.max_in_flight()
    }

    fn invoke(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        use std::sync::atomic::Ordering;
        let budget = self.budget;
        self.used
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| (n < budget).then_some(n + 1))
            .map_err(|_| GatewayError::BudgetExceeded { budget })?;
        self.inner.invoke(req)
    }
}

/// Reply text in the requested layout.
pub fn format_reply(label: ConflictLabel, mode: ResponseMode, explanation: &str, recommendation: &str) -> String {
    match mode {
        ResponseMode::VerdictOnly => label.token().to_string(),
        ResponseMode::VerdictWithRationale => {
            format!("verdict: {}\nexplanation: {explanation}\nrecommendation: {recommendation}", label.token())
        }
    }
}
