use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use super::config::{config_hash, BackendKind, Settings};
use super::errors::CliError;
use super::*;
use crate::eval::{self, derive_run_id, run_eval, EvalSpec, Report, RunRecord};
use crate::finetune::{export_chat_jsonl, scenario_rationale, validate_export};
use crate::gateway::{
    build_request, query, Backend, Budgeted, OracleBackend, PromptTemplate, RemoteBackend, RequestParams,
    ScriptedConfusionBackend,
};
use crate::ingest::{
    assign_splits, build_manifest, ingest_sources, DecoderConfig, Extractor, ResizeTarget, SourceKind, SourceSpec,
    SplitCounts, StartSelection,
};
use crate::model::{ConflictLabel, DatasetManifest};
use crate::review::http::{AppState, ServeOptions};
use crate::review::{resolve_labels, ReviewStore, WorkspaceCatalog};
use crate::sim::{self, GeneratorConfig, RenderConfig, SynthesisConfig};
use crate::workspace::{is_safe_id, Layout};

/// What a command prints: prose for people, one document for machines.
pub struct Outcome {
    pub text: String,
    pub json: Value,
}

struct Ctx {
    layout: Layout,
    settings: Settings,
}

impl Ctx {
    fn root(&self) -> &Path {
        &self.layout.root
    }

    fn manifest(&self) -> Result<DatasetManifest, CliError> {
        let path = self.layout.manifest();
        if !path.exists() {
            return Err(CliError::usage(format!(
                "no manifest at {}; run `tcd simulate` or `tcd ingest` first",
                path.display()
            )));
        }
        Ok(DatasetManifest::read(&path)?)
    }

    fn hash(&self, command: &str) -> (Value, String) {
        let view = self.settings.view(command);
        let h = config_hash(&view);
        (view, h)
    }
}

pub fn dispatch(cli: Cli, interrupt: Option<&AtomicBool>) -> Result<Outcome, CliError> {
    let g = cli.global;
    let mut settings = Settings::load(g.config.as_deref(), &g.workspace).map_err(CliError::usage)?;
    if let Some(seed) = g.seed {
        settings.seed = seed;
    }
    let mut ctx = Ctx { layout: Layout::new(&g.workspace), settings };
    match cli.command {
        Command::Simulate(a) => simulate(&mut ctx, a),
        Command::Ingest(a) => ingest(&mut ctx, a),
        Command::Split(a) => split(&mut ctx, a),
        Command::ExportFinetune(a) => export(&mut ctx, a),
        Command::Infer(a) => infer(&mut ctx, a),
        Command::Eval(a) => evaluate(&mut ctx, a, interrupt),
        Command::Report(a) => report(&ctx, a),
        Command::Compare(a) => compare(&ctx, a),
        Command::Serve(a) => serve(&mut ctx, a),
        Command::LabelsResolve(a) => labels_resolve(&ctx, a),
    }
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

fn to_json<T: Serialize>(t: &T) -> Value {
    serde_json::to_value(t).expect("output serializes")
}

fn split_counts_json(m: &DatasetManifest) -> Value {
    let mut out = serde_json::Map::new();
    for s in crate::model::Split::ALL {
        let c = m.split_counts.get(&s).cloned().unwrap_or_default();
        out.insert(s.to_string(), to_json(&c));
    }
    Value::Object(out)
}

fn simulate(ctx: &mut Ctx, a: SimulateArgs) -> Result<Outcome, CliError> {
    let s = &mut ctx.settings.simulate;
    if let Some(n) = a.n {
        s.n = n;
    }
    if let Some(b) = a.balance {
        s.balance = b;
    }
    if a.no_rebalance {
        s.rebalance = false;
    }
    if let Some(b) = a.bias {
        s.conflict_bias = b;
    }
    if let Some(w) = a.width {
        s.width_px = w;
    }
    if let Some(h) = a.height {
        s.height_px = h;
    }
    if s.n == 0 {
        return Err(CliError::usage("--n must be at least 1"));
    }
    let s = s.clone();
    let seed = ctx.settings.seed;
    let mut cfg = SynthesisConfig {
        n: s.n,
        balance: s.rebalance.then_some(s.balance),
        generator: GeneratorConfig { conflict_bias: s.conflict_bias, ..GeneratorConfig::default() },
        render: RenderConfig { width_px: s.width_px, height_px: s.height_px, ..RenderConfig::default() },
        ..SynthesisConfig::default()
    };
    if let Some(w) = a.workers {
        cfg.workers = w.max(1);
    }
    std::fs::create_dir_all(ctx.root())?;
    let out = sim::synthesize(seed, &cfg, ctx.root())?;
    sim::write_scenarios(&ctx.layout.scenarios(), &out.scenarios)?;
    let m = build_manifest(out.observations, seed)?;
    m.write(&ctx.layout.manifest())?;
    let counts = m.class_counts();
    let (_, hash) = ctx.hash("simulate");
    let json = json!({
        "command": "simulate",
        "seed": seed,
        "observations": m.observations.len(),
        "conflict": counts.get(ConflictLabel::Conflict),
        "no_conflict": counts.get(ConflictLabel::NoConflict),
        "biased_conflicts": out.biased_conflicts,
        "replaced": out.replaced,
        "manifest": ctx.layout.manifest(),
        "manifest_hash": m.content_hash()?,
        "config_hash": hash,
    });
    let text = format!(
        "simulated {} observations ({} conflict, {} no conflict; {} replaced to rebalance)\nmanifest: {}\n",
        m.observations.len(),
        counts.get(ConflictLabel::Conflict),
        counts.get(ConflictLabel::NoConflict),
        out.replaced,
        ctx.layout.manifest().display()
    );
    Ok(Outcome { text, json })
}

/// `observation_id,yes|no` lines; blank lines, `#` comments and a header row
/// are skipped.
fn read_label_csv(path: &Path) -> Result<Vec<(String, ConflictLabel)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::store(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((id, label)) = line.split_once(',') else {
            return Err(CliError::usage(format!("{} line {}: expected id,label", path.display(), i + 1)));
        };
        let (id, label) = (id.trim(), label.trim().to_ascii_lowercase());
        if i == 0 && id == "observation_id" {
            continue;
        }
        let label: ConflictLabel = label
            .parse()
            .map_err(|e: crate::model::ModelError| CliError::usage(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push((id.to_string(), label));
    }
    Ok(out)
}

fn ingest(ctx: &mut Ctx, a: IngestArgs) -> Result<Outcome, CliError> {
    let s = &mut ctx.settings.ingest;
    if a.fps.is_some() {
        s.fps = a.fps;
    }
    if a.duration.is_some() {
        s.duration_s = a.duration;
    }
    if let Some(x) = a.stride {
        s.stride_s = x;
    }
    if !a.starts.is_empty() {
        s.starts = a.starts;
    }
    if a.decoder.is_some() {
        s.decoder = a.decoder;
    }
    if let Some(r) = a.resize {
        s.resize = r;
    }
    let s = s.clone();
    let fps = s.fps.ok_or_else(|| CliError::usage("--fps is required (or ingest.fps in the config file)"))?;
    let sources: Vec<SourceSpec> = a
        .sources
        .iter()
        .map(|p| SourceSpec {
            kind: if p.is_dir() { SourceKind::ImageSequenceDir } else { SourceKind::VideoFile },
            path: p.clone(),
            fps,
            duration_s: s.duration_s,
        })
        .collect();
    for src in &sources {
        src.validate()?;
    }
    let starts = if s.starts.is_empty() {
        StartSelection::Stride { stride_s: s.stride_s }
    } else {
        StartSelection::Explicit { starts: s.starts.clone() }
    };
    let mut ex = Extractor::new(ctx.root());
    ex.resize = if s.resize.eq_ignore_ascii_case("none") {
        None
    } else {
        Some(s.resize.parse::<ResizeTarget>().map_err(|e| CliError::usage(format!("--resize: {e}")))?)
    };
    ex.decoder = s.decoder.clone().map(|command| DecoderConfig { command });
    let labels = a.labels.as_deref().map(read_label_csv).transpose()?.unwrap_or_default();

    let fresh = ingest_sources(&sources, &starts, &ex)?;
    let added = fresh.len();
    let (mut observations, seed) = if ctx.layout.manifest().exists() {
        let m = ctx.manifest()?;
        (m.observations, m.seed)
    } else {
        (Vec::new(), ctx.settings.seed)
    };
    // re-ingesting a source replaces its observations
    observations.retain(|o| !fresh.iter().any(|f| f.id == o.id));
    observations.extend(fresh);
    observations.sort_by(|x, y| x.id.cmp(&y.id));
    for (id, label) in &labels {
        let o = observations
            .iter_mut()
            .find(|o| &o.id == id)
            .ok_or_else(|| CliError::usage(format!("label for unknown observation {id:?}")))?;
        if o.ground_truth != Some(*label) {
            o.ground_truth = Some(*label);
            o.split = None;
        }
    }
    let m = build_manifest(observations, seed)?;
    m.write(&ctx.layout.manifest())?;
    let (_, hash) = ctx.hash("ingest");
    let unlabeled = m.observations.iter().filter(|o| o.ground_truth.is_none()).count();
    let json = json!({
        "command": "ingest",
        "sources": sources.len(),
        "added": added,
        "labels_applied": labels.len(),
        "observations": m.observations.len(),
        "unlabeled": unlabeled,
        "manifest": ctx.layout.manifest(),
        "manifest_hash": m.content_hash()?,
        "config_hash": hash,
    });
    let text = format!(
        "ingested {added} observations from {} source(s); manifest holds {} ({unlabeled} unlabeled)\n",
        sources.len(),
        m.observations.len()
    );
    Ok(Outcome { text, json })
}

fn split(ctx: &mut Ctx, a: SplitArgs) -> Result<Outcome, CliError> {
    let s = &mut ctx.settings.split;
    if let Some(n) = a.train {
        s.train = n;
    }
    if let Some(n) = a.val {
        s.val = n;
    }
    if let Some(n) = a.test {
        s.test = n;
    }
    let counts = SplitCounts { train: s.train, val: s.val, test: s.test };
    let m = assign_splits(&ctx.manifest()?, counts, ctx.settings.seed)?;
    m.write(&ctx.layout.manifest())?;
    let (_, hash) = ctx.hash("split");
    let json = json!({
        "command": "split",
        "seed": ctx.settings.seed,
        "requested": counts,
        "split_counts": split_counts_json(&m),
        "manifest_hash": m.content_hash()?,
        "config_hash": hash,
    });
    let mut text = String::new();
    for sp in crate::model::Split::ALL {
        let c = m.split_counts.get(&sp).cloned().unwrap_or_default();
        let _ = writeln!(
            text,
            "{sp:>5}: {} conflict, {} no conflict",
            c.get(ConflictLabel::Conflict),
            c.get(ConflictLabel::NoConflict)
        );
    }
    Ok(Outcome { text, json })
}

/// Explanation and recommendation per observation, from the stored scenarios
/// of synthetic observations. Empty when there are none.
fn rationales(ctx: &Ctx, m: &DatasetManifest) -> Result<BTreeMap<String, (String, String)>, CliError> {
    let path = ctx.layout.scenarios();
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let scenarios: BTreeMap<String, sim::Scenario> =
        sim::read_scenarios(&path)?.into_iter().map(|s| (s.id.clone(), s)).collect();
    let mut out = BTreeMap::new();
    for o in &m.observations {
        if let Some(s) = o.scenario_ref.as_ref().and_then(|r| scenarios.get(r)) {
            out.insert(o.id.clone(), scenario_rationale(s)?);
        }
    }
    Ok(out)
}

fn mode_slug(mode: crate::gateway::ResponseMode) -> &'static str {
    match mode {
        crate::gateway::ResponseMode::VerdictOnly => "verdict-only",
        crate::gateway::ResponseMode::VerdictWithRationale => "rationale",
    }
}

fn export(ctx: &mut Ctx, a: ExportArgs) -> Result<Outcome, CliError> {
    let s = &mut ctx.settings.export;
    if let Some(x) = a.split {
        s.split = x;
    }
    if let Some(x) = a.prompt {
        s.prompt = x;
    }
    if let Some(x) = a.mode {
        s.mode = x;
    }
    let s = s.clone();
    let m = ctx.manifest()?;
    let out = match a.out {
        Some(p) if p.is_absolute() => p,
        Some(p) => ctx.root().join(p),
        None => ctx.layout.exports_dir().join(format!("{}-{}-{}.jsonl", s.split, s.prompt.to_string().to_lowercase(), mode_slug(s.mode))),
    };
    let rationales = if s.mode == crate::gateway::ResponseMode::VerdictWithRationale { rationales(ctx, &m)? } else { BTreeMap::new() };
    let summary = export_chat_jsonl(&m, s.split, &PromptTemplate::get(s.prompt), s.mode, ctx.root(), &rationales, &out)?;
    let validation = validate_export(&out)?;
    if !validation.is_clean() {
        let first = &validation.schema_violations[0];
        return Err(CliError::store(format!(
            "export {} failed validation with {} violation(s); line {}: {}",
            out.display(),
            validation.schema_violations.len(),
            first.line,
            first.reason
        )));
    }
    let (_, hash) = ctx.hash("export-finetune");
    let json = json!({
        "command": "export-finetune",
        "path": summary.path,
        "records": summary.records,
        "bytes": summary.bytes,
        "class_counts": summary.class_counts,
        "validation": validation,
        "config_hash": hash,
    });
    let text = format!(
        "wrote {} records ({} bytes) to {}; validation clean\n",
        summary.records,
        summary.bytes,
        out.display()
    );
    Ok(Outcome { text, json })
}

/// Apply backend flags to the settings and build the configured backend.
fn backend(ctx: &mut Ctx, a: BackendArgs, m: &DatasetManifest) -> Result<(Box<dyn Backend>, String), CliError> {
    let e = &mut ctx.settings.eval;
    if let Some(x) = a.backend {
        e.backend = x;
    }
    if let Some(x) = a.prompt {
        e.prompt = x;
    }
    if let Some(x) = a.split {
        e.split = x;
    }
    if let Some(x) = a.mode {
        e.mode = x;
    }
    if a.matrix.is_some() {
        e.matrix = a.matrix;
    }
    if a.budget.is_some() {
        e.budget = a.budget;
    }
    if let Some(x) = a.model {
        ctx.settings.remote.model_id = x;
    }
    if let Some(x) = a.endpoint {
        ctx.settings.remote.endpoint = x;
    }
    let e = ctx.settings.eval.clone();
    let mock: Box<dyn Backend> = match e.backend {
        BackendKind::Oracle => Box::new(OracleBackend::from_manifest(m).with_rationales(rationales(ctx, m)?)),
        BackendKind::Scripted => {
            let matrix = e.matrix.ok_or_else(|| CliError::usage("the scripted backend needs --matrix tp,fp,fn,tn"))?;
            Box::new(ScriptedConfusionBackend::new(m, e.split, matrix)?.with_rationales(rationales(ctx, m)?))
        }
        BackendKind::Remote => {
            let mut cfg = ctx.settings.remote.clone();
            cfg.request_budget = e.budget.or(cfg.request_budget);
            let b = RemoteBackend::new(cfg)?;
            let model = ctx.settings.remote.model_id.clone();
            return Ok((Box::new(b), model));
        }
    };
    let model = mock.id().to_string();
    Ok(match e.budget {
        Some(budget) => (Box::new(Budgeted::new(mock, budget)), model),
        None => (mock, model),
    })
}

fn params(ctx: &Ctx) -> RequestParams {
    RequestParams { temperature: ctx.settings.eval.temperature, max_answer_tokens: ctx.settings.eval.max_answer_tokens }
}

fn infer(ctx: &mut Ctx, a: InferArgs) -> Result<Outcome, CliError> {
    let m = ctx.manifest()?;
    let o = m
        .get(&a.observation)
        .ok_or_else(|| CliError::usage(format!("unknown observation {:?}", a.observation)))?
        .clone();
    let (b, model) = backend(ctx, a.backend, &m)?;
    let e = &ctx.settings.eval;
    let req = build_request(&PromptTemplate::get(e.prompt), &o, e.mode, &model, &params(ctx), ctx.root())?;
    let v = query(&*b, &req)?;
    let (_, hash) = ctx.hash("infer");
    let json = merge(to_json(&v), json!({"command": "infer", "ground_truth": o.ground_truth, "config_hash": hash}));
    let mut text = format!("{}: {}\n", v.observation_id, v.label);
    for (name, t) in [("explanation", &v.explanation), ("recommendation", &v.recommendation)] {
        if let Some(t) = t {
            let _ = writeln!(text, "{name}: {t}");
        }
    }
    Ok(Outcome { text, json })
}

fn evaluate(ctx: &mut Ctx, a: EvalArgs, interrupt: Option<&AtomicBool>) -> Result<Outcome, CliError> {
    let m = ctx.manifest()?;
    if a.workers.is_some() {
        ctx.settings.eval.workers = a.workers;
    }
    let (b, model) = backend(ctx, a.backend, &m)?;
    let e = ctx.settings.eval.clone();
    let (view, hash) = ctx.hash("eval");
    let manifest_hash = m.content_hash()?;
    let run_id = a.run_id.unwrap_or_else(|| derive_run_id(b.id(), e.prompt, e.split, e.mode, &manifest_hash, &hash));
    if !is_safe_id(&run_id) {
        return Err(CliError::usage(format!("run id {run_id:?} may only use letters, digits, '-', '_' and '.'")));
    }
    let spec = EvalSpec {
        manifest: &m,
        split: e.split,
        prompt: e.prompt,
        mode: e.mode,
        model_id: model,
        params: params(ctx),
        root: ctx.root().to_path_buf(),
        run_dir: ctx.layout.run_dir(&run_id),
        run_id: run_id.clone(),
        config_hash: hash.clone(),
        config: view,
        workers: e.workers,
        interrupt,
    };
    let record = run_eval(&*b, &spec).map_err(|err| {
        let resumable = matches!(err, eval::EvalError::BudgetExceeded { .. } | eval::EvalError::Interrupted { .. });
        let cli = CliError::from(err).context(format!("run {run_id}"));
        if resumable {
            CliError { message: format!("{}; repeat the command to resume", cli.message), ..cli }
        } else {
            cli
        }
    })?;
    let files = eval::write_reports(&record, &spec.run_dir)?;
    let report = Report::new(&record)?;
    let json = merge(to_json(&report), json!({"command": "eval", "files": files}));
    let text = eval::emit_report(&record, ReportFormat::Markdown)?;
    Ok(Outcome { text, json })
}

fn load_run(ctx: &Ctx, id: &str) -> Result<RunRecord, CliError> {
    let dir = ctx.layout.run_dir(id);
    if !is_safe_id(id) || !dir.join(eval::RUN_FILE).exists() {
        return Err(CliError::usage(format!("unknown run {id:?}")));
    }
    Ok(RunRecord::load(&dir)?)
}

fn report(ctx: &Ctx, a: ReportArgs) -> Result<Outcome, CliError> {
    let r = load_run(ctx, &a.run)?;
    let files = eval::write_reports(&r, &ctx.layout.run_dir(&a.run))?;
    let json = merge(to_json(&Report::new(&r)?), json!({"command": "report", "files": files}));
    Ok(Outcome { text: eval::emit_report(&r, a.format)?, json })
}

fn compare(ctx: &Ctx, a: CompareArgs) -> Result<Outcome, CliError> {
    let runs = a.runs.iter().map(|id| load_run(ctx, id.trim())).collect::<Result<Vec<_>, _>>()?;
    let c = eval::compare_runs(&runs)?;
    let json = merge(to_json(&c), json!({"command": "compare"}));
    Ok(Outcome { text: eval::render_comparison(&c, a.format)?, json })
}

fn serve(ctx: &mut Ctx, a: ServeArgs) -> Result<Outcome, CliError> {
    let s = &mut ctx.settings.serve;
    if let Some(x) = a.bind {
        s.bind = x;
    }
    if a.ui_dir.is_some() {
        s.ui_dir = a.ui_dir;
    }
    if a.cors_origin.is_some() {
        s.cors_origin = a.cors_origin;
    }
    let s = s.clone();
    let addr: std::net::SocketAddr =
        s.bind.parse().map_err(|e| CliError::usage(format!("--bind {:?}: {e}", s.bind)))?;
    let store = Arc::new(ReviewStore::open(&ctx.layout.review_dir())?);
    let state = AppState { store, catalog: Arc::new(WorkspaceCatalog::new(ctx.layout.clone())) };
    let opts = ServeOptions { ui_dir: s.ui_dir.clone(), cors_origin: s.cors_origin.clone() };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    eprintln!("review service listening on http://{addr}");
    rt.block_on(crate::review::http::serve(addr, state, opts))?;
    let (_, hash) = ctx.hash("serve");
    Ok(Outcome {
        text: "review service stopped\n".into(),
        json: json!({"command": "serve", "bind": addr.to_string(), "stopped": true, "config_hash": hash}),
    })
}

fn labels_resolve(ctx: &Ctx, a: LabelsResolveArgs) -> Result<Outcome, CliError> {
    let m = ctx.manifest()?;
    let store = ReviewStore::open(&ctx.layout.review_dir())?;
    let state = store.state();
    let (resolved, res) = resolve_labels(&m, state.labels())?;
    if !a.dry_run {
        resolved.write(&ctx.layout.manifest())?;
    }
    let json = merge(
        to_json(&res),
        json!({"command": "labels-resolve", "dry_run": a.dry_run, "manifest_hash": resolved.content_hash()?}),
    );
    let text = format!(
        "{} resolved ({} changed), {} tied and left unlabeled ({} removed from their split){}\n",
        res.resolved.len(),
        res.changed.len(),
        res.ties.len(),
        res.removed_from_split.len(),
        if a.dry_run { "; dry run, manifest untouched" } else { "" }
    );
    Ok(Outcome { text, json })
}
