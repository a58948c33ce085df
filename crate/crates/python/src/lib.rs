//! Python module `tcd`: metrics, workspace pipeline commands and the review
//! store. Workspace operations go through the same code paths as the `tcd`
//! binary and return its JSON documents as Python objects.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde_json::Value;

use tcd_core::model::{self, DatasetManifest};
use tcd_core::review::{ReviewScore, ReviewStore, ReviewTarget, WorkspaceCatalog};
use tcd_core::workspace::Layout;

create_exception!(tcd, TcdError, PyException, "A harness command failed; args are (message, exit_code).");

fn to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    let json = py.import("json")?;
    Ok(json.call_method1("loads", (v.to_string(),))?.unbind())
}

fn err(message: impl std::fmt::Display, code: i32) -> PyErr {
    TcdError::new_err((message.to_string(), code))
}

/// Run the CLI in-process. Returns the exit code and everything written to stdout.
fn invoke(args: &[String]) -> (i32, String) {
    let mut out = Vec::new();
    let argv = std::iter::once("tcd".to_string()).chain(args.iter().cloned());
    let code = tcd_core::cli::run(argv, &mut out, None);
    (code, String::from_utf8_lossy(&out).into_owned())
}

#[pyclass(frozen, module = "tcd")]
struct ConfusionMatrix {
    inner: model::ConfusionMatrix,
}

#[pymethods]
impl ConfusionMatrix {
    #[new]
    #[pyo3(signature = (tp, fp, r#fn, tn))]
    fn new(tp: u64, fp: u64, r#fn: u64, tn: u64) -> Self {
        ConfusionMatrix { inner: model::ConfusionMatrix::new(tp, fp, r#fn, tn) }
    }

    #[getter]
    fn tp(&self) -> u64 {
        self.inner.tp
    }

    #[getter]
    fn fp(&self) -> u64 {
        self.inner.fp
    }

    #[getter(r#fn)]
    fn fn_(&self) -> u64 {
        self.inner.fn_
    }

    #[getter]
    fn tn(&self) -> u64 {
        self.inner.tn
    }

    fn total(&self) -> u64 {
        self.inner.total()
    }

    /// Accuracy, macro precision/recall/F1 and per-class metrics, as a dict.
    fn metrics(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let r = model::compute_metrics(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))?;
        to_py(py, &serde_json::to_value(r).expect("metrics serialize"))
    }

    fn __repr__(&self) -> String {
        let m = &self.inner;
        format!("ConfusionMatrix(tp={}, fp={}, fn={}, tn={})", m.tp, m.fp, m.fn_, m.tn)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

/// Metrics for a binary confusion matrix; shorthand for `ConfusionMatrix(...).metrics()`.
#[pyfunction]
#[pyo3(signature = (tp, fp, r#fn, tn))]
fn compute_metrics(py: Python<'_>, tp: u64, fp: u64, r#fn: u64, tn: u64) -> PyResult<Py<PyAny>> {
    ConfusionMatrix::new(tp, fp, r#fn, tn).metrics(py)
}

/// Source frame indices of a triplet starting at `start` seconds.
#[pyfunction]
#[pyo3(signature = (fps, start, interval = 0.5))]
fn triplet_indices(fps: f64, start: f64, interval: f64) -> [u64; 3] {
    tcd_core::ingest::triplet_indices(fps, start, interval)
}

/// Run `tcd` with `args` (without the program name). Returns `(exit_code, stdout)`.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> (i32, String) {
    py.detach(|| invoke(&args))
}

/// A harness workspace directory.
#[pyclass(frozen, module = "tcd")]
struct Workspace {
    root: PathBuf,
}

impl Workspace {
    fn command(&self, py: Python<'_>, args: Vec<String>) -> PyResult<Py<PyAny>> {
        let mut full = vec!["--workspace".to_string(), self.root.display().to_string(), "--output".into(), "json".into()];
        full.extend(args);
        let (code, out) = py.detach(|| invoke(&full));
        let v: Value = serde_json::from_str(&out).unwrap_or(Value::Null);
        if code != 0 {
            let message = v["message"].as_str().map(str::to_string).unwrap_or_else(|| format!("tcd exited with {code}"));
            return Err(err(message, code));
        }
        to_py(py, &v)
    }

    fn text(&self, py: Python<'_>, args: Vec<String>) -> PyResult<String> {
        let mut full = vec!["--workspace".to_string(), self.root.display().to_string()];
        full.extend(args);
        let (code, out) = py.detach(|| invoke(&full));
        if code != 0 {
            return Err(err(format!("tcd exited with {code}"), code));
        }
        Ok(out)
    }

    fn store(&self) -> PyResult<ReviewStore> {
        ReviewStore::open(&Layout::new(&self.root).review_dir()).map_err(|e| err(e, 3))
    }
}

fn flag(name: &str, v: impl ToString) -> [String; 2] {
    [format!("--{name}"), v.to_string()]
}

#[pymethods]
impl Workspace {
    #[new]
    fn new(path: PathBuf) -> Self {
        Workspace { root: path }
    }

    #[getter]
    fn path(&self) -> PathBuf {
        self.root.clone()
    }

    /// Run any subcommand against this workspace and return its JSON result.
    fn run(&self, py: Python<'_>, args: Vec<String>) -> PyResult<Py<PyAny>> {
        self.command(py, args)
    }

    #[pyo3(signature = (n = 140, seed = 42, balance = 0.5, width = 512, height = 512))]
    fn simulate(&self, py: Python<'_>, n: usize, seed: u64, balance: f64, width: u32, height: u32) -> PyResult<Py<PyAny>> {
        let mut args = vec!["simulate".to_string()];
        for pair in [flag("n", n), flag("seed", seed), flag("balance", balance), flag("width", width), flag("height", height)] {
            args.extend(pair);
        }
        self.command(py, args)
    }

    #[pyo3(signature = (train = 504, val = 56, test = 140, seed = 42))]
    fn split(&self, py: Python<'_>, train: usize, val: usize, test: usize, seed: u64) -> PyResult<Py<PyAny>> {
        let mut args = vec!["split".to_string()];
        for pair in [flag("train", train), flag("val", val), flag("test", test), flag("seed", seed)] {
            args.extend(pair);
        }
        self.command(py, args)
    }

    #[pyo3(signature = (split = "train", prompt = "P2", mode = "verdict-only"))]
    fn export_finetune(&self, py: Python<'_>, split: &str, prompt: &str, mode: &str) -> PyResult<Py<PyAny>> {
        let mut args = vec!["export-finetune".to_string()];
        for pair in [flag("split", split), flag("prompt", prompt), flag("mode", mode)] {
            args.extend(pair);
        }
        self.command(py, args)
    }

    /// Evaluate a backend (`oracle`, `scripted` or `remote`); `matrix` is
    /// `(tp, fp, fn, tn)` for the scripted backend. Returns the report.
    #[pyo3(signature = (backend = "oracle", matrix = None, prompt = "P2", split = "test", mode = "verdict-only", budget = None, run_id = None))]
    #[allow(clippy::too_many_arguments)]
    fn eval(
        &self,
        py: Python<'_>,
        backend: &str,
        matrix: Option<(u64, u64, u64, u64)>,
        prompt: &str,
        split: &str,
        mode: &str,
        budget: Option<u64>,
        run_id: Option<String>,
    ) -> PyResult<Py<PyAny>> {
        let mut args = vec!["eval".to_string()];
        for pair in [flag("backend", backend), flag("prompt", prompt), flag("split", split), flag("mode", mode)] {
            args.extend(pair);
        }
        if let Some((tp, fp, fn_, tn)) = matrix {
            args.extend(flag("matrix", format!("{tp},{fp},{fn_},{tn}")));
        }
        if let Some(b) = budget {
            args.extend(flag("budget", b));
        }
        if let Some(id) = run_id {
            args.extend(flag("run-id", id));
        }
        self.command(py, args)
    }

    /// The report of a stored run as text (`md`, `csv` or `json`).
    #[pyo3(signature = (run_id, format = "md"))]
    fn report(&self, py: Python<'_>, run_id: &str, format: &str) -> PyResult<String> {
        self.text(py, vec!["report".into(), "--run".into(), run_id.into(), "--format".into(), format.into()])
    }

    #[pyo3(signature = (run_ids, format = "md"))]
    fn compare(&self, py: Python<'_>, run_ids: Vec<String>, format: &str) -> PyResult<String> {
        self.text(py, vec!["compare".into(), "--runs".into(), run_ids.join(","), "--format".into(), format.into()])
    }

    #[pyo3(signature = (dry_run = false))]
    fn labels_resolve(&self, py: Python<'_>, dry_run: bool) -> PyResult<Py<PyAny>> {
        let mut args = vec!["labels-resolve".to_string()];
        if dry_run {
            args.push("--dry-run".into());
        }
        self.command(py, args)
    }

    /// Every observation in the manifest, as dicts.
    fn observations(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let m = DatasetManifest::read(&Layout::new(&self.root).manifest()).map_err(|e| err(e, 3))?;
        to_py(py, &serde_json::to_value(&m.observations).expect("observations serialize"))
    }

    /// Record one review score; returns the acknowledgement `{seq, replayed}`.
    #[pyo3(signature = (reviewer_id, run_id, observation_id, target, clarity, accuracy, practical_relevance, idempotency_key = None))]
    #[allow(clippy::too_many_arguments)]
    fn record_score(
        &self,
        py: Python<'_>,
        reviewer_id: String,
        run_id: String,
        observation_id: String,
        target: &str,
        clarity: i64,
        accuracy: i64,
        practical_relevance: i64,
        idempotency_key: Option<String>,
    ) -> PyResult<Py<PyAny>> {
        let target: ReviewTarget = target.parse().map_err(|e: String| PyValueError::new_err(e))?;
        let score = ReviewScore {
            reviewer_id,
            run_id,
            observation_id,
            target,
            clarity,
            accuracy,
            practical_relevance,
            submitted_at: String::new(),
        };
        let catalog = WorkspaceCatalog::new(Layout::new(&self.root));
        let ack = self.store()?.record_score(score, idempotency_key, &catalog).map_err(|e| err(e, 1))?;
        to_py(py, &serde_json::to_value(ack).expect("ack serializes"))
    }

    /// Mean review score of a run's explanations or recommendations.
    fn aggregate(&self, py: Python<'_>, run_id: &str, target: &str) -> PyResult<Py<PyAny>> {
        let target: ReviewTarget = target.parse().map_err(|e: String| PyValueError::new_err(e))?;
        let a = self.store()?.aggregate(run_id, target).map_err(|e| err(e, 1))?;
        to_py(py, &serde_json::to_value(a).expect("aggregate serializes"))
    }

    fn __repr__(&self) -> String {
        format!("Workspace({:?})", self.root)
    }
}

#[pymodule]
fn tcd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TcdError", m.py().get_type::<TcdError>())?;
    m.add_class::<ConfusionMatrix>()?;
    m.add_class::<Workspace>()?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_indices, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
