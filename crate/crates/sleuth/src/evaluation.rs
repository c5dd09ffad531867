//! Classification metrics over the three-valued label scale: confusion
//! matrices, per-class precision/recall/F1, and macro / support-weighted
//! aggregates, rendered as text tables, JSON, or CSV.
//!
//! Zero denominators follow the 0-convention throughout: a class that is
//! never predicted has precision 0, a class with no support has recall 0,
//! and F1 is 0 whenever precision + recall is 0. No metric is ever NaN.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("label sequences differ in length ({truth} vs {predicted})")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("cannot score an empty prediction set")]
    Empty,
}

/// 3x3 confusion counts; rows are true labels, columns predictions, both in
/// class order (0, 0.5, 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[usize; 3]; 3]) -> ConfusionMatrix {
        ConfusionMatrix { counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> usize {
        (0..3).map(|r| self.counts[r][class]).sum()
    }

    /// CSV grid with a header row/column of class codes, for external
    /// plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred,0,0.5,1\n");
        for (i, label) in Label::ALL.iter().enumerate() {
            out.push_str(label.as_str());
            for j in 0..3 {
                out.push(',');
                out.push_str(&self.counts[i][j].to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Tallies true/predicted label pairs into a confusion matrix.
pub fn confusion(y_true: &[Label], y_pred: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: y_true.len(),
            predicted: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut counts = [[0usize; 3]; 3];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        counts[t.index()][p.index()] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Precision, recall, F1 and support for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Unweighted or support-weighted average of the per-class metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class and aggregate metrics, mirroring the published table layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub schema_version: u32,
    pub per_class: [ClassMetrics; 3],
    pub accuracy: f64,
    pub macro_avg: AverageMetrics,
    pub weighted_avg: AverageMetrics,
    pub total: usize,
    pub matrix: ConfusionMatrix,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn ratio_or_zero(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Computes the full metric suite from a confusion matrix.
pub fn report(matrix: &ConfusionMatrix) -> ClassificationReport {
    let total = matrix.total();
    let mut per_class = [ClassMetrics {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        support: 0,
    }; 3];
    for c in 0..3 {
        let diag = matrix.counts[c][c];
        let precision = ratio_or_zero(diag, matrix.col_sum(c));
        let recall = ratio_or_zero(diag, matrix.row_sum(c));
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class[c] = ClassMetrics {
            precision,
            recall,
            f1,
            support: matrix.row_sum(c),
        };
    }
    let macro_avg = AverageMetrics {
        precision: per_class.iter().map(|m| m.precision).sum::<f64>() / 3.0,
        recall: per_class.iter().map(|m| m.recall).sum::<f64>() / 3.0,
        f1: per_class.iter().map(|m| m.f1).sum::<f64>() / 3.0,
    };
    let weight = |f: fn(&ClassMetrics) -> f64| -> f64 {
        per_class
            .iter()
            .map(|m| m.support as f64 * f(m))
            .sum::<f64>()
            / total as f64
    };
    let weighted_avg = AverageMetrics {
        precision: weight(|m| m.precision),
        recall: weight(|m| m.recall),
        f1: weight(|m| m.f1),
    };
    ClassificationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        per_class,
        accuracy: matrix.trace() as f64 / total as f64,
        macro_avg,
        weighted_avg,
        total,
        matrix: *matrix,
    }
}

/// Convenience: confusion + report in one step.
pub fn score(y_true: &[Label], y_pred: &[Label]) -> Result<ClassificationReport, EvalError> {
    Ok(report(&confusion(y_true, y_pred)?))
}

/// Output formats for [`render_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TextTable,
    Json,
    Csv,
}

/// Rounds to two decimals with ties to even, as used in the text tables.
fn round2(x: f64) -> f64 {
    (x * 100.0).round_ties_even() / 100.0
}

fn fmt2(x: f64) -> String {
    format!("{:.2}", round2(x))
}

/// Renders a report. The text table mirrors the published layout
/// (per-class rows, then Accuracy, Macro avg., Weighted avg.); numbers are
/// rounded to two decimals in text and CSV, and kept at full precision in
/// JSON.
pub fn render_report(report: &ClassificationReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(report).expect("report serializes")
        }
        ReportFormat::TextTable => {
            let mut out = String::new();
            out.push_str(&format!(
                "{:<20} {:>9} {:>7} {:>9} {:>8}\n",
                "Label", "Precision", "Recall", "F1 Score", "Support"
            ));
            for (label, m) in Label::ALL.iter().zip(&report.per_class) {
                out.push_str(&format!(
                    "{:<20} {:>9} {:>7} {:>9} {:>8}\n",
                    label.display_name(),
                    fmt2(m.precision),
                    fmt2(m.recall),
                    fmt2(m.f1),
                    m.support
                ));
            }
            out.push_str(&format!(
                "{:<20} {:>9} {:>7} {:>9} {:>8}\n",
                "Accuracy",
                "",
                "",
                fmt2(report.accuracy),
                report.total
            ));
            out.push_str(&format!(
                "{:<20} {:>9} {:>7} {:>9} {:>8}\n",
                "Macro avg.",
                fmt2(report.macro_avg.precision),
                fmt2(report.macro_avg.recall),
                fmt2(report.macro_avg.f1),
                report.total
            ));
            out.push_str(&format!(
                "{:<20} {:>9} {:>7} {:>9} {:>8}\n",
                "Weighted avg.",
                fmt2(report.weighted_avg.precision),
                fmt2(report.weighted_avg.recall),
                fmt2(report.weighted_avg.f1),
                report.total
            ));
            out
        }
        ReportFormat::Csv => {
            let mut out = String::from("row,precision,recall,f1,support\n");
            for (label, m) in Label::ALL.iter().zip(&report.per_class) {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    label.as_str(),
                    fmt2(m.precision),
                    fmt2(m.recall),
                    fmt2(m.f1),
                    m.support
                ));
            }
            out.push_str(&format!(
                "accuracy,,,{},{}\n",
                fmt2(report.accuracy),
                report.total
            ));
            out.push_str(&format!(
                "macro_avg,{},{},{},{}\n",
                fmt2(report.macro_avg.precision),
                fmt2(report.macro_avg.recall),
                fmt2(report.macro_avg.f1),
                report.total
            ));
            out.push_str(&format!(
                "weighted_avg,{},{},{},{}\n",
                fmt2(report.weighted_avg.precision),
                fmt2(report.weighted_avg.recall),
                fmt2(report.weighted_avg.f1),
                report.total
            ));
            out
        }
    }
}
