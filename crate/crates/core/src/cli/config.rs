//! Layered settings: built-in defaults, then a TOML file, then environment
//! variables and flags (clap resolves a flag before its variable).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::{PromptId, RemoteConfig, ResponseMode};
use crate::model::{sha256_hex, ConfusionMatrix, Split};

/// Looked up in the workspace when `--config` is not given.
pub const DEFAULT_CONFIG_FILE: &str = "tcd.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Oracle,
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub n: usize,
    /// Conflict fraction enforced exactly by rebalancing.
    pub balance: f64,
    pub rebalance: bool,
    pub conflict_bias: f64,
    pub width_px: u32,
    pub height_px: u32,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        SimulateSettings { n: 140, balance: 0.5, rebalance: true, conflict_bias: 0.5, width_px: 512, height_px: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings { train: 504, val: 56, test: 140 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSettings {
    pub fps: Option<f64>,
    pub duration_s: Option<f64>,
    pub stride_s: f64,
    pub starts: Vec<f64>,
    /// Command template with `{input}`, `{timestamp}` and `{output}`.
    pub decoder: Option<String>,
    /// `WxH`, or `none` to keep source resolution.
    pub resize: String,
}

impl Default for IngestSettings {
    fn default() -> Self {
        IngestSettings { fps: None, duration_s: None, stride_s: 1.0, starts: vec![], decoder: None, resize: "1024x1024".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSettings {
    pub split: Split,
    pub prompt: PromptId,
    pub mode: ResponseMode,
}

impl Default for ExportSettings {
    fn default() -> Self {
        ExportSettings { split: Split::Train, prompt: PromptId::P2, mode: ResponseMode::VerdictOnly }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub backend: BackendKind,
    pub prompt: PromptId,
    pub split: Split,
    pub mode: ResponseMode,
    pub workers: Option<usize>,
    /// Target of the scripted backend.
    pub matrix: Option<ConfusionMatrix>,
    /// Cap on backend calls; for the remote backend retries count too.
    pub budget: Option<u64>,
    pub temperature: f64,
    pub max_answer_tokens: u32,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            backend: BackendKind::Oracle,
            prompt: PromptId::P2,
            split: Split::Test,
            mode: ResponseMode::VerdictOnly,
            workers: None,
            matrix: None,
            budget: None,
            temperature: 0.0,
            max_answer_tokens: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSettings {
    pub bind: String,
    pub ui_dir: Option<PathBuf>,
    pub cors_origin: Option<String>,
}

impl Default for ServeSettings {
    fn default() -> Self {
        ServeSettings { bind: "127.0.0.1:8080".into(), ui_dir: None, cors_origin: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub simulate: SimulateSettings,
    pub split: SplitSettings,
    pub ingest: IngestSettings,
    pub export: ExportSettings,
    pub eval: EvalSettings,
    pub remote: RemoteConfig,
    pub serve: ServeSettings,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 42,
            simulate: SimulateSettings::default(),
            split: SplitSettings::default(),
            ingest: IngestSettings::default(),
            export: ExportSettings::default(),
            eval: EvalSettings::default(),
            remote: RemoteConfig::default(),
            serve: ServeSettings::default(),
        }
    }
}

impl Settings {
    /// Defaults overlaid with `explicit`, or with `<workspace>/tcd.toml` when
    /// that exists.
    pub fn load(explicit: Option<&Path>, workspace: &Path) -> Result<Settings, String> {
        let path = match explicit {
            Some(p) => Some(if p.is_absolute() { p.to_path_buf() } else { workspace.join(p) }),
            None => Some(workspace.join(DEFAULT_CONFIG_FILE)).filter(|p| p.exists()),
        };
        let Some(path) = path else { return Ok(Settings::default()) };
        let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }

    /// The parts of the resolved settings that affect `command`'s output,
    /// serialized as stored in artifacts.
    pub fn view(&self, command: &str) -> Value {
        let mut v = serde_json::Map::new();
        v.insert("command".into(), command.into());
        match command {
            "simulate" => {
                v.insert("seed".into(), self.seed.into());
                v.insert("simulate".into(), to_value(&self.simulate));
            }
            "split" => {
                v.insert("seed".into(), self.seed.into());
                v.insert("split".into(), to_value(&self.split));
            }
            "ingest" => {
                v.insert("ingest".into(), to_value(&self.ingest));
            }
            "export-finetune" => {
                v.insert("export".into(), to_value(&self.export));
            }
            "eval" | "infer" => {
                // throughput knobs stay out, so raising a budget resumes the same run
                let mut eval = to_value(&self.eval);
                strip(&mut eval, &["workers", "budget"]);
                v.insert("eval".into(), eval);
                if self.eval.backend == BackendKind::Remote {
                    let mut remote = to_value(&self.remote);
                    strip(&mut remote, &["token_env", "request_budget", "max_in_flight", "requests_per_minute"]);
                    v.insert("remote".into(), remote);
                }
            }
            "serve" => {
                v.insert("serve".into(), to_value(&self.serve));
            }
            _ => {}
        }
        Value::Object(v)
    }
}

/// Digest of a resolved configuration view. Object keys serialize sorted, so
/// equal settings hash equally.
pub fn config_hash(view: &Value) -> String {
    sha256_hex(&serde_json::to_vec(view).expect("settings serialize"))[..16].to_string()
}

fn to_value<T: Serialize>(t: &T) -> Value {
    serde_json::to_value(t).expect("settings serialize")
}

fn strip(v: &mut Value, keys: &[&str]) {
    if let Value::Object(m) = v {
        for k in keys {
            m.remove(*k);
        }
    }
}
