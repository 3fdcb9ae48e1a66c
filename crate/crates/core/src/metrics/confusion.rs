use serde::{Deserialize, Serialize};

use crate::corpus::Task;
use crate::error::{Error, Result};

use super::records::{PatientPrediction, PredictionRecord};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: Vec<String>) -> Self {
        let k = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = classes.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Shape(format!("confusion counts must be {k}x{k}")));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    /// From `(true, predicted)` index pairs.
    pub fn from_pairs(classes: Vec<String>, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut m = ConfusionMatrix::zeros(classes);
        let k = m.classes.len();
        for (t, p) in pairs {
            if t >= k || p >= k {
                return Err(Error::Label(format!("class index outside 0..{k}")));
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn column_total(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

pub fn confusion_images(records: &[PredictionRecord], task: Task) -> Result<ConfusionMatrix> {
    let pairs = records
        .iter()
        .map(|r| {
            r.validate(task)?;
            Ok((r.true_index(task)?, r.predicted()))
        })
        .collect::<Result<Vec<_>>>()?;
    ConfusionMatrix::from_pairs(class_names(task), pairs)
}

pub fn confusion_patients(patients: &[PatientPrediction], task: Task) -> Result<ConfusionMatrix> {
    let pairs = patients
        .iter()
        .map(|p| Ok((task.class_index(&p.true_label)?, p.predicted)))
        .collect::<Result<Vec<_>>>()?;
    ConfusionMatrix::from_pairs(class_names(task), pairs)
}

fn class_names(task: Task) -> Vec<String> {
    task.class_names().into_iter().map(String::from).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Macro,
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// A zero denominator forced at least one of the values to 0.
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub averaging: Averaging,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Classes whose precision, recall or F1 had a zero denominator.
    pub flagged_classes: Vec<String>,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn per_class_metrics(m: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..m.classes.len())
        .map(|i| {
            let tp = m.counts[i][i];
            let (precision, p_undef) = ratio(tp, m.column_total(i));
            let (recall, r_undef) = ratio(tp, m.row_total(i));
            let (f1, f_undef) = if precision + recall > 0.0 {
                (2.0 * precision * recall / (precision + recall), false)
            } else {
                (0.0, true)
            };
            ClassMetrics {
                class: m.classes[i].clone(),
                support: m.row_total(i),
                precision,
                recall,
                f1,
                undefined: p_undef || r_undef || f_undef,
            }
        })
        .collect()
}

/// Accuracy is `trace / total`. Macro averages the per-class values
/// (F1 is the mean of per-class F1). Micro pools all decisions, which for
/// single-label data makes precision, recall and F1 equal to accuracy.
pub fn summary_metrics(m: &ConfusionMatrix, averaging: Averaging) -> Result<SummaryMetrics> {
    let total = m.total();
    if total == 0 {
        return Err(Error::UndefinedMetric("confusion matrix is empty".into()));
    }
    let accuracy = m.trace() as f64 / total as f64;
    let per_class = per_class_metrics(m);
    let flagged_classes = per_class
        .iter()
        .filter(|c| c.undefined)
        .map(|c| c.class.clone())
        .collect();
    let (precision, recall, f1) = match averaging {
        Averaging::Macro => {
            let k = per_class.len() as f64;
            (
                per_class.iter().map(|c| c.precision).sum::<f64>() / k,
                per_class.iter().map(|c| c.recall).sum::<f64>() / k,
                per_class.iter().map(|c| c.f1).sum::<f64>() / k,
            )
        }
        Averaging::Micro => (accuracy, accuracy, accuracy),
    };
    Ok(SummaryMetrics {
        averaging,
        accuracy,
        precision,
        recall,
        f1,
        per_class,
        flagged_classes,
    })
}
