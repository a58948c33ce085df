use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EvalError, Excluded, RunRecord};
use crate::gateway::{PromptId, ResponseMode};
use crate::model::{compute_metrics, ConflictLabel, ConfusionMatrix, MetricsReport, Split};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conformance {
    pub verdicts: u64,
    pub conformant: u64,
    /// Conformant share of verdicts; 0 when there are none.
    pub rate: f64,
    pub excluded: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tabulation {
    pub matrix: ConfusionMatrix,
    pub metrics: MetricsReport,
    pub conformance: Conformance,
}

/// Matrix, metrics and conformance over the run's non-excluded verdicts.
pub fn tabulate(r: &RunRecord) -> Result<Tabulation, EvalError> {
    let mut matrix = ConfusionMatrix::default();
    let mut conformant = 0;
    for v in &r.verdicts {
        let truth = r.ground_truth.get(&v.observation_id).ok_or_else(|| {
            EvalError::SplitMismatch(format!("verdict for {} outside the split", v.observation_id))
        })?;
        matrix.record(*truth, v.label);
        conformant += v.conformant as u64;
    }
    if matrix.total() == 0 {
        return Err(EvalError::EmptyRun);
    }
    let metrics = compute_metrics(&matrix)?;
    let verdicts = r.verdicts.len() as u64;
    Ok(Tabulation {
        matrix,
        metrics,
        conformance: Conformance {
            verdicts,
            conformant,
            rate: conformant as f64 / verdicts as f64,
            excluded: r.excluded.len() as u64,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            _ => Err(format!("unknown report format {s:?}")),
        }
    }
}

/// Everything a report shows. Carries no timestamps, so re-tabulating a
/// stored run reproduces it byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run_id: String,
    pub backend_id: String,
    pub prompt_id: PromptId,
    pub split: Split,
    pub mode: ResponseMode,
    pub split_size: usize,
    #[serde(flatten)]
    pub tabulation: Tabulation,
    pub excluded: Vec<Excluded>,
    pub config_hash: String,
}

impl Report {
    pub fn new(r: &RunRecord) -> Result<Report, EvalError> {
        Ok(Report {
            run_id: r.run_id.clone(),
            backend_id: r.backend_id.clone(),
            prompt_id: r.prompt_id,
            split: r.split,
            mode: r.mode,
            split_size: r.ground_truth.len(),
            tabulation: tabulate(r)?,
            excluded: r.excluded.clone(),
            config_hash: r.config_hash.clone(),
        })
    }
}

/// Column order of CSV reports. One data row follows.
pub const CSV_HEADER: &str = "run_id,backend_id,prompt_id,split,mode,n,tp,fp,fn,tn,accuracy,\
macro_precision,macro_recall,macro_f1,precision_conflict,recall_conflict,f1_conflict,\
precision_no_conflict,recall_no_conflict,f1_no_conflict,conformance_rate,excluded,config_hash";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn mode_name(m: ResponseMode) -> &'static str {
    match m {
        ResponseMode::VerdictOnly => "verdict_only",
        ResponseMode::VerdictWithRationale => "verdict_with_rationale",
    }
}

fn csv(rep: &Report) -> String {
    let t = &rep.tabulation;
    let m = &t.metrics;
    let c = m.class(ConflictLabel::Conflict);
    let n = m.class(ConflictLabel::NoConflict);
    let row = [
        csv_field(&rep.run_id),
        csv_field(&rep.backend_id),
        rep.prompt_id.to_string(),
        rep.split.to_string(),
        mode_name(rep.mode).to_string(),
        m.n.to_string(),
        t.matrix.tp.to_string(),
        t.matrix.fp.to_string(),
        t.matrix.fn_.to_string(),
        t.matrix.tn.to_string(),
        m.accuracy.to_string(),
        m.macro_precision.to_string(),
        m.macro_recall.to_string(),
        m.macro_f1.to_string(),
        c.precision.to_string(),
        c.recall.to_string(),
        c.f1.to_string(),
        n.precision.to_string(),
        n.recall.to_string(),
        n.f1.to_string(),
        t.conformance.rate.to_string(),
        rep.excluded.len().to_string(),
        csv_field(&rep.config_hash),
    ];
    format!("{CSV_HEADER}\n{}\n", row.join(","))
}

fn markdown(rep: &Report) -> String {
    let t = &rep.tabulation;
    let m = &t.metrics;
    let mut s = String::new();
    let _ = writeln!(s, "# Run {}\n", rep.run_id);
    let _ = writeln!(
        s,
        "Backend `{}`, prompt {}, split {}, {} mode, {} of {} observations tabulated.\n",
        rep.backend_id,
        rep.prompt_id,
        rep.split,
        mode_name(rep.mode).replace('_', " "),
        m.n,
        rep.split_size
    );
    let _ = writeln!(s, "## Confusion matrix\n");
    let _ = writeln!(s, "| | Predicted conflict | Predicted no conflict |");
    let _ = writeln!(s, "|---|---:|---:|");
    let _ = writeln!(s, "| **Actual conflict** | {} | {} |", t.matrix.tp, t.matrix.fn_);
    let _ = writeln!(s, "| **Actual no conflict** | {} | {} |", t.matrix.fp, t.matrix.tn);
    let _ = writeln!(s, "\n## Metrics\n");
    let _ = writeln!(s, "| | Precision | Recall | F1 | Support |");
    let _ = writeln!(s, "|---|---:|---:|---:|---:|");
    for (name, label) in [("Conflict", ConflictLabel::Conflict), ("No conflict", ConflictLabel::NoConflict)] {
        let c = m.class(label);
        let _ = writeln!(s, "| {name} | {:.4} | {:.4} | {:.4} | {} |", c.precision, c.recall, c.f1, c.support);
    }
    let _ = writeln!(
        s,
        "| Macro average | {:.4} | {:.4} | {:.4} | {} |",
        m.macro_precision, m.macro_recall, m.macro_f1, m.n
    );
    let _ = writeln!(s, "\nAccuracy: **{:.4}**\n", m.accuracy);
    for c in ConflictLabel::ALL {
        for u in &m.class(c).undefined {
            let _ = writeln!(s, "Note: {c} {u:?} is undefined (zero denominator), reported as 0.\n");
        }
    }
    let _ = writeln!(s, "## Conformance\n");
    let _ = writeln!(
        s,
        "{} of {} verdicts were an exact lowercase yes/no (rate {:.4}); {} observations excluded.\n",
        t.conformance.conformant, t.conformance.verdicts, t.conformance.rate, t.conformance.excluded
    );
    if !rep.excluded.is_empty() {
        let _ = writeln!(s, "| Excluded observation | Reason |");
        let _ = writeln!(s, "|---|---|");
        for e in &rep.excluded {
            let _ = writeln!(s, "| {} | {} |", e.observation_id, e.reason.replace('|', "\\|"));
        }
        s.push('\n');
    }
    let _ = writeln!(s, "Config hash: `{}`", rep.config_hash);
    s
}

pub fn emit_report(r: &RunRecord, format: ReportFormat) -> Result<String, EvalError> {
    let rep = Report::new(r)?;
    Ok(match format {
        ReportFormat::Json => serde_json::to_string_pretty(&rep)? + "\n",
        ReportFormat::Csv => csv(&rep),
        ReportFormat::Markdown => markdown(&rep),
    })
}

/// Write `report.{json,csv,md}` into `dir`.
pub fn write_reports(r: &RunRecord, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for f in ReportFormat::ALL {
        let p = dir.join(format!("report.{}", f.extension()));
        std::fs::write(&p, emit_report(r, f)?)?;
        paths.push(p);
    }
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run_id: String,
    pub backend_id: String,
    pub prompt_id: PromptId,
    pub n: u64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub conformance_rate: f64,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub split: Split,
    /// Best accuracy first; ties broken by run id.
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_runs(runs: &[RunRecord]) -> Result<Comparison, EvalError> {
    if runs.len() < 2 {
        return Err(EvalError::SplitMismatch(format!("need at least 2 runs, got {}", runs.len())));
    }
    let split = runs[0].split;
    if let Some(r) = runs.iter().find(|r| r.split != split || r.ground_truth != runs[0].ground_truth) {
        return Err(EvalError::SplitMismatch(format!(
            "run {} covers a different split than {}",
            r.run_id, runs[0].run_id
        )));
    }
    let mut rows = Vec::with_capacity(runs.len());
    for r in runs {
        let t = tabulate(r)?;
        rows.push(ComparisonRow {
            run_id: r.run_id.clone(),
            backend_id: r.backend_id.clone(),
            prompt_id: r.prompt_id,
            n: t.metrics.n,
            accuracy: t.metrics.accuracy,
            macro_precision: t.metrics.macro_precision,
            macro_recall: t.metrics.macro_recall,
            macro_f1: t.metrics.macro_f1,
            conformance_rate: t.conformance.rate,
            best: false,
        });
    }
    rows.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy).then_with(|| a.run_id.cmp(&b.run_id)));
    rows[0].best = true;
    Ok(Comparison { split, rows })
}

pub fn render_comparison(c: &Comparison, format: ReportFormat) -> Result<String, EvalError> {
    Ok(match format {
        ReportFormat::Json => serde_json::to_string_pretty(c)? + "\n",
        ReportFormat::Csv => {
            let mut s = String::from(
                "run_id,backend_id,prompt_id,n,accuracy,macro_precision,macro_recall,macro_f1,conformance_rate,best\n",
            );
            for r in &c.rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{}",
                    csv_field(&r.run_id),
                    csv_field(&r.backend_id),
                    r.prompt_id,
                    r.n,
                    r.accuracy,
                    r.macro_precision,
                    r.macro_recall,
                    r.macro_f1,
                    r.conformance_rate,
                    r.best
                );
            }
            s
        }
        ReportFormat::Markdown => {
            let mut s = format!("# Run comparison ({} split)\n\n", c.split);
            s.push_str("| Run | Backend | Prompt | n | Accuracy | Macro P | Macro R | Macro F1 |\n");
            s.push_str("|---|---|---|---:|---:|---:|---:|---:|\n");
            for r in &c.rows {
                let mark = if r.best { " (best)" } else { "" };
                let _ = writeln!(
                    s,
                    "| {}{mark} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} |",
                    r.run_id, r.backend_id, r.prompt_id, r.n, r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1
                );
            }
            s
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::tests::{labeled_split, spec};
    use crate::eval::{run_eval, EvalSpec};
    use crate::gateway::ScriptedConfusionBackend;

    fn scripted_run(dir: &Path, target: ConfusionMatrix, prompt: PromptId, run_id: &str) -> RunRecord {
        let m = labeled_split(dir, 70);
        let b = ScriptedConfusionBackend::new(&m, Split::Test, target).unwrap();
        let s = EvalSpec { prompt, run_id: run_id.into(), run_dir: dir.join("runs").join(run_id), ..spec(&m, dir, None) };
        run_eval(&b, &s).unwrap()
    }

    #[test]
    fn p2_style_matrix_report() {
        let dir = tempfile::tempdir().unwrap();
        let r = scripted_run(dir.path(), ConfusionMatrix::new(48, 10, 22, 60), PromptId::P2, "a");
        let t = tabulate(&r).unwrap();
        assert!((t.metrics.accuracy - 0.771429).abs() < 1e-6);

        let json = emit_report(&r, ReportFormat::Json).unwrap();
        let back: Report = serde_json::from_str(&json).unwrap();
        assert_eq!(back.tabulation, t);
        assert!(!json.contains(&r.started_at));

        let md = emit_report(&r, ReportFormat::Markdown).unwrap();
        assert!(md.contains("| **Actual conflict** | 48 | 22 |"));
        assert!(md.contains("| **Actual no conflict** | 10 | 60 |"));

        let csv = emit_report(&r, ReportFormat::Csv).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), CSV_HEADER.split(',').count());
        assert_eq!(&row[6..10], ["48", "10", "22", "60"]);
    }

    #[test]
    fn comparison_ranks_by_accuracy_then_id() {
        let dir = tempfile::tempdir().unwrap();
        let p2 = scripted_run(dir.path(), ConfusionMatrix::new(48, 10, 22, 60), PromptId::P2, "z-p2");
        let p1 = scripted_run(dir.path(), ConfusionMatrix::new(28, 4, 42, 66), PromptId::P1, "a-p1");
        let c = compare_runs(&[p1.clone(), p2.clone()]).unwrap();
        assert_eq!(c.rows[0].run_id, "z-p2");
        assert!(c.rows[0].best && !c.rows[1].best);
        assert!((c.rows[1].accuracy - 0.671429).abs() < 1e-6);

        let mut twin = p2.clone();
        twin.run_id = "b-twin".into();
        let c = compare_runs(&[p2.clone(), twin]).unwrap();
        assert_eq!(c.rows[0].run_id, "b-twin");

        assert!(matches!(compare_runs(std::slice::from_ref(&p2)), Err(EvalError::SplitMismatch(_))));
        let mut other = p1;
        other.split = Split::Val;
        assert!(matches!(compare_runs(&[p2, other]), Err(EvalError::SplitMismatch(_))));
    }

    #[test]
    fn all_excluded_run_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = scripted_run(dir.path(), ConfusionMatrix::new(70, 0, 0, 70), PromptId::P2, "e");
        r.verdicts.clear();
        assert!(matches!(tabulate(&r), Err(EvalError::EmptyRun)));
    }

    #[test]
    fn csv_header_is_stable() {
        assert_eq!(
            CSV_HEADER,
            "run_id,backend_id,prompt_id,split,mode,n,tp,fp,fn,tn,accuracy,macro_precision,macro_recall,macro_f1,\
             precision_conflict,recall_conflict,f1_conflict,precision_no_conflict,recall_no_conflict,f1_no_conflict,\
             conformance_rate,excluded,config_hash"
        );
    }
}
