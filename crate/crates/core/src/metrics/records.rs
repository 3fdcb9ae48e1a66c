use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnomalyLabel, Task};
use crate::error::{Error, Result};
use crate::ingest::{read_jsonl, write_jsonl, SampleRecord};

/// Per-image class probabilities with the keys used for aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub patient_id: String,
    pub fold_id: usize,
    /// Class name within the task (`Abnormal` or `Normal` for binary).
    pub true_label: String,
    pub probabilities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gestational_age_days: Option<u32>,
}

impl PredictionRecord {
    pub fn new(sample: &SampleRecord, fold_id: usize, task: Task, probabilities: Vec<f64>) -> Result<Self> {
        let target = task.target_of(sample.label)?;
        Ok(PredictionRecord {
            sample_id: sample.sample_id.clone(),
            patient_id: sample.patient_id.clone(),
            fold_id,
            true_label: task.class_names()[target].to_string(),
            probabilities,
            gestational_age_days: sample.gestational_age_days,
        })
    }

    pub fn true_index(&self, task: Task) -> Result<usize> {
        task.class_index(&self.true_label)
    }

    pub fn predicted(&self) -> usize {
        argmax(&self.probabilities)
    }

    pub fn validate(&self, task: Task) -> Result<()> {
        self.true_index(task)?;
        check_probabilities(&self.probabilities, task.num_classes())
            .map_err(|e| Error::Validation(format!("{}: {e}", self.sample_id)))
    }
}

fn check_probabilities(p: &[f64], k: usize) -> std::result::Result<(), String> {
    if p.len() != k {
        return Err(format!("{} probabilities for {k} classes", p.len()));
    }
    if p.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err("probabilities must be finite and non-negative".into());
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(format!("probabilities sum to {sum}"));
    }
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    read_jsonl(path)
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Arithmetic mean of equally long vectors. Each component is summed in
/// sorted order, so the result does not depend on the order of `vectors`.
pub fn mean_probabilities(vectors: &[Vec<f64>]) -> Vec<f64> {
    let k = vectors.first().map_or(0, Vec::len);
    (0..k)
        .map(|c| {
            let mut col: Vec<f64> = vectors.iter().map(|v| v[c]).collect();
            col.sort_by(f64::total_cmp);
            col.iter().sum::<f64>() / vectors.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientPrediction {
    pub patient_id: String,
    pub true_label: String,
    pub probabilities: Vec<f64>,
    pub predicted: usize,
    pub image_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gestational_age_days: Option<u32>,
}

/// Mean of one patient's image probabilities, argmax with lowest-index ties.
pub fn aggregate_patient(records: &[PredictionRecord]) -> Result<PatientPrediction> {
    let first = records
        .first()
        .ok_or_else(|| Error::Aggregation("no records to aggregate".into()))?;
    if let Some(r) = records.iter().find(|r| r.patient_id != first.patient_id) {
        return Err(Error::Aggregation(format!(
            "records mix patients {} and {}",
            first.patient_id, r.patient_id
        )));
    }
    if let Some(r) = records.iter().find(|r| r.true_label != first.true_label) {
        return Err(Error::Aggregation(format!(
            "patient {} has images labelled {} and {}",
            first.patient_id, first.true_label, r.true_label
        )));
    }
    if let Some(r) = records
        .iter()
        .find(|r| r.probabilities.len() != first.probabilities.len())
    {
        return Err(Error::Aggregation(format!(
            "{} has a different class count",
            r.sample_id
        )));
    }
    let vectors: Vec<Vec<f64>> = records.iter().map(|r| r.probabilities.clone()).collect();
    let probabilities = mean_probabilities(&vectors);
    Ok(PatientPrediction {
        patient_id: first.patient_id.clone(),
        true_label: first.true_label.clone(),
        predicted: argmax(&probabilities),
        probabilities,
        image_count: records.len(),
        gestational_age_days: records.iter().filter_map(|r| r.gestational_age_days).min(),
    })
}

/// One aggregate per patient, in patient-id order.
pub fn aggregate_patients(records: &[PredictionRecord]) -> Result<Vec<PatientPrediction>> {
    let mut groups: BTreeMap<&str, Vec<PredictionRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.patient_id).or_default().push(r.clone());
    }
    groups.values().map(|g| aggregate_patient(g)).collect()
}

/// Maps five-class records onto `Abnormal` / `Normal`; the abnormal
/// probability is the sum of the four anomaly probabilities.
pub fn binary_collapse(records: &[PredictionRecord]) -> Result<Vec<PredictionRecord>> {
    records
        .iter()
        .map(|r| {
            r.validate(Task::FiveClass)?;
            let label: AnomalyLabel = r.true_label.parse()?;
            let normal = r.probabilities[AnomalyLabel::Normal.index()];
            let abnormal: f64 = r.probabilities[..4].iter().sum();
            Ok(PredictionRecord {
                true_label: if label.is_anomaly() { "Abnormal" } else { "Normal" }.into(),
                probabilities: vec![abnormal, normal],
                ..r.clone()
            })
        })
        .collect()
}
