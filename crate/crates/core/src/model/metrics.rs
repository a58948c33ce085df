//! Binary confusion matrix and macro-averaged classification metrics.
//!
//! `Conflict` is the positive class. Per-class ratios with a zero denominator
//! are reported as 0 and listed in [`ClassMetrics::undefined`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ConflictLabel, ModelError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionMatrix { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, truth: ConflictLabel, pred: ConflictLabel) {
        use ConflictLabel::*;
        match (truth, pred) {
            (Conflict, Conflict) => self.tp += 1,
            (Conflict, NoConflict) => self.fn_ += 1,
            (NoConflict, Conflict) => self.fp += 1,
            (NoConflict, NoConflict) => self.tn += 1,
        }
    }

    /// The same matrix with `NoConflict` taken as the positive class.
    pub fn swapped(&self) -> Self {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    /// Count of observations whose truth is `label`.
    pub fn support(&self, label: ConflictLabel) -> u64 {
        match label {
            ConflictLabel::Conflict => self.tp + self.fn_,
            ConflictLabel::NoConflict => self.tn + self.fp,
        }
    }
}

/// Tabulate `(truth, prediction)` pairs.
pub fn confusion_from_pairs(
    pairs: &[(ConflictLabel, ConflictLabel)],
) -> Result<ConfusionMatrix, ModelError> {
    if pairs.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let mut cm = ConfusionMatrix::default();
    for &(truth, pred) in pairs {
        cm.record(truth, pred);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UndefinedRatio {
    Precision,
    Recall,
    F1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<UndefinedRatio>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragedMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: u64,
    pub accuracy: f64,
    pub per_class: BTreeMap<ConflictLabel, ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Support-weighted averages. Informational; macro is canonical.
    pub weighted: AveragedMetrics,
    /// Pooled (micro) averages. For single-label binary tasks these all equal accuracy.
    pub micro: AveragedMetrics,
}

impl MetricsReport {
    pub fn class(&self, label: ConflictLabel) -> &ClassMetrics {
        &self.per_class[&label]
    }

    pub fn is_degenerate(&self) -> bool {
        self.per_class.values().any(|c| !c.undefined.is_empty())
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn class_metrics(tp: u64, fp: u64, fn_: u64) -> ClassMetrics {
    let mut undefined = Vec::new();
    let precision = ratio(tp, tp + fp).unwrap_or_else(|| {
        undefined.push(UndefinedRatio::Precision);
        0.0
    });
    let recall = ratio(tp, tp + fn_).unwrap_or_else(|| {
        undefined.push(UndefinedRatio::Recall);
        0.0
    });
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        undefined.push(UndefinedRatio::F1);
        0.0
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        support: tp + fn_,
        undefined,
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, ModelError> {
    let n = cm.total();
    if n == 0 {
        return Err(ModelError::EmptyMatrix);
    }
    let accuracy = (cm.tp + cm.tn) as f64 / n as f64;

    let conflict = class_metrics(cm.tp, cm.fp, cm.fn_);
    let no_conflict = class_metrics(cm.tn, cm.fn_, cm.fp);

    let mean = |f: fn(&ClassMetrics) -> f64| (f(&conflict) + f(&no_conflict)) / 2.0;
    let weighted_mean = |f: fn(&ClassMetrics) -> f64| {
        (f(&conflict) * conflict.support as f64 + f(&no_conflict) * no_conflict.support as f64)
            / n as f64
    };

    let macro_precision = mean(|c| c.precision);
    let macro_recall = mean(|c| c.recall);
    let macro_f1 = mean(|c| c.f1);
    let weighted = AveragedMetrics {
        precision: weighted_mean(|c| c.precision),
        recall: weighted_mean(|c| c.recall),
        f1: weighted_mean(|c| c.f1),
    };
    let micro = AveragedMetrics {
        precision: accuracy,
        recall: accuracy,
        f1: accuracy,
    };

    let mut per_class = BTreeMap::new();
    per_class.insert(ConflictLabel::Conflict, conflict);
    per_class.insert(ConflictLabel::NoConflict, no_conflict);

    Ok(MetricsReport {
        n,
        accuracy,
        per_class,
        macro_precision,
        macro_recall,
        macro_f1,
        weighted,
        micro,
    })
}
