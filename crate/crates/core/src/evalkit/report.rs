use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

use super::metrics::{metrics, ConfusionMatrix, Metrics};
use super::Prediction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectPrediction {
    pub subject_id: String,
    pub label: usize,
    pub prediction: usize,
    pub probabilities: Vec<f64>,
}

/// Metrics, confusion matrix and per-subject predictions of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    /// Features per subject the method uses.
    pub k: usize,
    pub classes: usize,
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<SubjectPrediction>,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl EvalReport {
    pub fn from_predictions(
        method: impl Into<String>,
        k: usize,
        classes: usize,
        subjects: &[(String, usize, Prediction)],
    ) -> Result<Self> {
        ensure!(!subjects.is_empty(), "an evaluation report needs at least one subject");
        let labels: Vec<usize> = subjects.iter().map(|s| s.1).collect();
        let preds: Vec<usize> = subjects.iter().map(|s| s.2.class).collect();
        let probs: Vec<Vec<f64>> = subjects.iter().map(|s| s.2.probabilities.clone()).collect();
        let (metrics, confusion) = metrics(&labels, &preds, &probs, classes)?;
        let mut flags = Vec::new();
        if !metrics.auc_excluded_classes.is_empty() {
            flags.push(format!("auc_undefined_for_classes={:?}", metrics.auc_excluded_classes));
        }
        Ok(Self {
            method: method.into(),
            k,
            classes,
            metrics,
            confusion,
            predictions: subjects
                .iter()
                .map(|(id, y, p)| SubjectPrediction {
                    subject_id: id.clone(),
                    label: *y,
                    prediction: p.class,
                    probabilities: p.probabilities.clone(),
                })
                .collect(),
            flags,
        })
    }

    /// One aligned line per metric.
    pub fn summary_table(&self) -> String {
        let m = &self.metrics;
        let auc = m.auc_macro_ovr.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"));
        format!(
            "{:<12} k={:<5} Acc {:.4}  MacroF1 {:.4}  BAcc {:.4}  AUC {:>6}  QWK {:.4}",
            self.method, self.k, m.accuracy, m.macro_f1, m.balanced_accuracy, auc, m.qwk
        )
    }
}

pub fn write_eval_report<W: Write>(w: W, report: &EvalReport) -> Result<()> {
    serde_json::to_writer_pretty(w, report)?;
    Ok(())
}

pub fn read_eval_report<R: Read>(r: R) -> Result<EvalReport> {
    Ok(serde_json::from_reader(r)?)
}

/// Header `true\pred,0,1,…` then one row per true class.
pub fn write_confusion_csv<W: Write>(mut w: W, cm: &ConfusionMatrix) -> Result<()> {
    let header: Vec<String> = (0..cm.classes).map(|c| c.to_string()).collect();
    writeln!(w, "true\\pred,{}", header.join(","))?;
    for (c, row) in cm.counts.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        writeln!(w, "{c},{}", cells.join(","))?;
    }
    Ok(())
}

fn parse_cell<T: std::str::FromStr>(cell: Option<&str>, what: &str) -> Result<T> {
    cell.and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("bad {what} cell {cell:?}")))
}

pub fn read_confusion_csv<R: Read>(r: R) -> Result<ConfusionMatrix> {
    let mut reader = csv::Reader::from_reader(r);
    let classes = reader.headers()?.len().saturating_sub(1);
    let mut counts = Vec::new();
    for row in reader.records() {
        let row = row?;
        ensure!(
            row.len() == classes + 1,
            "confusion row has {} cells, expected {}",
            row.len(),
            classes + 1
        );
        counts.push(
            (1..=classes)
                .map(|c| parse_cell(row.get(c), "count"))
                .collect::<Result<Vec<u64>>>()?,
        );
    }
    ensure!(counts.len() == classes, "confusion matrix is not square");
    Ok(ConfusionMatrix { classes, counts })
}

/// `subject_id,label,pred,prob_0..prob_{C−1}`.
pub fn write_predictions_csv<W: Write>(mut w: W, report: &EvalReport) -> Result<()> {
    let probs: Vec<String> = (0..report.classes).map(|c| format!("prob_{c}")).collect();
    writeln!(w, "subject_id,label,pred,{}", probs.join(","))?;
    for p in &report.predictions {
        let cells: Vec<String> = p.probabilities.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{},{},{},{}", p.subject_id, p.label, p.prediction, cells.join(","))?;
    }
    Ok(())
}

pub fn read_predictions_csv<R: Read>(r: R) -> Result<Vec<SubjectPrediction>> {
    let mut reader = csv::Reader::from_reader(r);
    let classes = reader.headers()?.len().saturating_sub(3);
    reader
        .records()
        .map(|row| {
            let row = row?;
            ensure!(row.len() == classes + 3, "prediction row has {} cells", row.len());
            Ok(SubjectPrediction {
                subject_id: row[0].to_string(),
                label: parse_cell(row.get(1), "label")?,
                prediction: parse_cell(row.get(2), "pred")?,
                probabilities: (3..3 + classes)
                    .map(|c| parse_cell(row.get(c), "probability"))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}
