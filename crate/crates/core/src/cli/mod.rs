//! The `tcd` command line.
//!
//! Exit codes: 0 success, 1 usage or invalid input, 2 request budget
//! exhausted, 3 IO or store failure, 130 interrupted (the run can be resumed).

mod commands;
pub mod config;
mod errors;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::eval::ReportFormat;
use crate::gateway::{PromptId, ResponseMode};
use crate::model::{ConfusionMatrix, Split};

pub use config::{config_hash, BackendKind, Settings};
pub use errors::{CliError, EXIT_BUDGET, EXIT_INTERRUPTED, EXIT_STORE, EXIT_USAGE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "tcd", version, about = "Traffic conflict detection harness: simulate, ingest, evaluate and review")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Root directory; every other path is relative to it.
    #[arg(long, global = true, env = "TCD_WORKSPACE", default_value = ".")]
    pub workspace: PathBuf,
    /// Seed for all randomness (scenario sampling, split assignment).
    #[arg(long, global = true, env = "TCD_SEED")]
    pub seed: Option<u64>,
    /// TOML settings file; defaults to tcd.toml in the workspace when present.
    #[arg(long, global = true, env = "TCD_CONFIG")]
    pub config: Option<PathBuf>,
    /// Human-readable text or one JSON document on stdout.
    #[arg(long, global = true, value_enum, env = "TCD_OUTPUT", default_value = "text")]
    pub output: OutputFormat,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenarios, render frame triplets and write the manifest.
    Simulate(SimulateArgs),
    /// Extract frame triplets from videos or image sequences into the manifest.
    Ingest(IngestArgs),
    /// Assign class-balanced train/val/test splits.
    Split(SplitArgs),
    /// Write a chat-format fine-tuning file for the train or val split.
    ExportFinetune(ExportArgs),
    /// Query a backend about one observation.
    Infer(InferArgs),
    /// Evaluate a backend over a split; resumes an interrupted run.
    Eval(EvalArgs),
    /// Render the report of a stored run.
    Report(ReportArgs),
    /// Rank runs over the same split.
    Compare(CompareArgs),
    /// Run the review HTTP service.
    Serve(ServeArgs),
    /// Resolve annotator labels by majority into the manifest.
    LabelsResolve(LabelsResolveArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Ingest(_) => "ingest",
            Command::Split(_) => "split",
            Command::ExportFinetune(_) => "export-finetune",
            Command::Infer(_) => "infer",
            Command::Eval(_) => "eval",
            Command::Report(_) => "report",
            Command::Compare(_) => "compare",
            Command::Serve(_) => "serve",
            Command::LabelsResolve(_) => "labels-resolve",
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of observations.
    #[arg(long)]
    pub n: Option<usize>,
    /// Exact conflict fraction after rebalancing.
    #[arg(long)]
    pub balance: Option<f64>,
    /// Keep the sampler's class mix instead of rebalancing.
    #[arg(long)]
    pub no_rebalance: bool,
    /// Probability that the sampler aims at a conflict scene.
    #[arg(long)]
    pub bias: Option<f64>,
    /// Rendered frame width in pixels.
    #[arg(long)]
    pub width: Option<u32>,
    /// Rendered frame height in pixels.
    #[arg(long)]
    pub height: Option<u32>,
    /// Worker threads; does not affect output.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Video file or image-sequence directory; repeatable.
    #[arg(long = "source", required = true)]
    pub sources: Vec<PathBuf>,
    /// Capture rate of the sources, frames per second.
    #[arg(long)]
    pub fps: Option<f64>,
    /// Video duration in seconds, needed for stride sweeps over videos.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Seconds between triplet starts when sweeping a source.
    #[arg(long)]
    pub stride: Option<f64>,
    /// Explicit triplet start time in seconds; repeatable. Overrides --stride.
    #[arg(long = "start")]
    pub starts: Vec<f64>,
    /// Decoder command template for videos, with {input}, {timestamp} and {output}.
    #[arg(long, env = "TCD_DECODER")]
    pub decoder: Option<String>,
    /// Letterbox target as WxH, or "none".
    #[arg(long)]
    pub resize: Option<String>,
    /// CSV of `observation_id,yes|no` ground-truth labels to apply.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// train or val.
    #[arg(long)]
    pub split: Option<Split>,
    /// P1 or P2.
    #[arg(long)]
    pub prompt: Option<PromptId>,
    /// verdict-only or rationale.
    #[arg(long)]
    pub mode: Option<ResponseMode>,
    /// Output file; defaults to exports/<split>-<prompt>-<mode>.jsonl.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Inference backend.
    #[arg(long, value_enum, env = "TCD_BACKEND")]
    pub backend: Option<BackendKind>,
    /// P1 or P2.
    #[arg(long)]
    pub prompt: Option<PromptId>,
    /// Split to evaluate.
    #[arg(long)]
    pub split: Option<Split>,
    /// verdict-only or rationale.
    #[arg(long)]
    pub mode: Option<ResponseMode>,
    /// Scripted backend target as tp,fp,fn,tn (or tp=..,fp=..,fn=..,tn=..).
    #[arg(long, value_parser = parse_matrix)]
    pub matrix: Option<ConfusionMatrix>,
    /// Remote model identifier.
    #[arg(long, env = "TCD_MODEL")]
    pub model: Option<String>,
    /// Remote chat-completions endpoint.
    #[arg(long, env = "TCD_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Maximum backend calls; the remote backend counts retries too.
    #[arg(long)]
    pub budget: Option<u64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Observation id from the manifest.
    #[arg(long)]
    pub observation: String,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Run id; derived from the configuration when omitted, so repeating a
    /// command resumes its run.
    #[arg(long)]
    pub run_id: Option<String>,
    /// Concurrent requests.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run id under runs/.
    #[arg(long)]
    pub run: String,
    /// Format printed in text mode; json, csv and md files are always written.
    #[arg(long, default_value = "md")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Comma-separated run ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub runs: Vec<String>,
    #[arg(long, default_value = "md")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address.
    #[arg(long, env = "TCD_BIND")]
    pub bind: Option<String>,
    /// Built review UI to serve at /.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    /// Allowed CORS origin; any when unset.
    #[arg(long)]
    pub cors_origin: Option<String>,
}

#[derive(Debug, Args)]
pub struct LabelsResolveArgs {
    /// Report the resolution without writing the manifest.
    #[arg(long)]
    pub dry_run: bool,
}

fn parse_matrix(s: &str) -> Result<ConfusionMatrix, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err("expected four counts: tp,fp,fn,tn".into());
    }
    let mut v = [0u64; 4];
    for (i, (part, name)) in parts.iter().zip(["tp", "fp", "fn", "tn"]).enumerate() {
        let num = match part.split_once('=') {
            Some((k, n)) if k.trim() == name => n.trim(),
            Some((k, _)) => return Err(format!("expected {name} in position {}, found {k}", i + 1)),
            None => part,
        };
        v[i] = num.parse().map_err(|_| format!("{name} is not a count: {num:?}"))?;
    }
    Ok(ConfusionMatrix::new(v[0], v[1], v[2], v[3]))
}

/// Parse `args` (program name first), run the command and return the exit
/// code. Results go to `out`; diagnostics to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write, interrupt: Option<&AtomicBool>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => {
                    eprint!("{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let format = cli.global.output;
    match commands::dispatch(cli, interrupt) {
        Ok(outcome) => {
            let _ = match format {
                OutputFormat::Json => writeln!(out, "{}", serde_json::to_string_pretty(&outcome.json).unwrap_or_default()),
                OutputFormat::Text => write!(out, "{}", outcome.text),
            };
            0
        }
        Err(e) => {
            match format {
                OutputFormat::Json => {
                    let doc = serde_json::json!({"error": e.kind, "message": e.message, "exit_code": e.code});
                    let _ = writeln!(out, "{}", serde_json::to_string_pretty(&doc).unwrap_or_default());
                }
                OutputFormat::Text => eprintln!("error: {}", e.message),
            }
            e.code
        }
    }
}
