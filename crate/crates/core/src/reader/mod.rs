//! Reader study: radiologists diagnose cases with or without the model's
//! scores, and the study compares their per-class recognition rates with the
//! model's.
//!
//! State lives in two files. The case index (`cases.jsonl`) is static; the
//! response log (`responses.jsonl` in the data directory) is append-only, and
//! the summary is always recomputed from it, so replaying the log reproduces
//! the same summary. Registered readers are listed in `readers.json` in the
//! data directory as a JSON array of ids.

mod http;
mod store;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::AnomalyLabel;
use crate::error::{Error, Result};
use crate::metrics::argmax;

pub use http::{router, serve, spawn_server, ServerHandle};
pub use store::{read_cases, read_responses, write_cases, ReaderStudy, StudyPaths};

/// One image shown to readers. `true_label` never leaves the server except
/// through the admin summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: String,
    pub sample_id: String,
    /// PNG path, relative to the case file's directory unless absolute.
    pub image: String,
    pub true_label: AnomalyLabel,
    /// Per-class scores in label order; four entries for a model without
    /// the `Normal` class.
    pub model_probabilities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlay: Option<String>,
}

impl Case {
    pub fn validate(&self) -> Result<()> {
        let n = self.model_probabilities.len();
        if n != 4 && n != 5 {
            return Err(Error::Validation(format!(
                "case {}: expected 4 or 5 model probabilities, got {n}",
                self.case_id
            )));
        }
        if self.model_probabilities.iter().any(|p| !p.is_finite()) {
            return Err(Error::Validation(format!(
                "case {}: non-finite probability",
                self.case_id
            )));
        }
        Ok(())
    }

    /// Argmax of the stored scores, lowest index on ties.
    pub fn model_prediction(&self) -> AnomalyLabel {
        AnomalyLabel::ALL[argmax(&self.model_probabilities)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadingMode {
    Blind,
    Assisted,
}

impl std::str::FromStr for ReadingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blind" => Ok(ReadingMode::Blind),
            "assisted" => Ok(ReadingMode::Assisted),
            _ => Err(Error::Validation(format!(
                "unknown mode {s:?}; valid modes are blind, assisted"
            ))),
        }
    }
}

/// One accepted diagnosis, as stored in the response log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderResponse {
    pub reader_id: String,
    pub case_id: String,
    pub chosen_label: AnomalyLabel,
    pub mode: ReadingMode,
    pub elapsed_ms: u64,
    pub submitted_at: chrono::DateTime<chrono::Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: AnomalyLabel,
    pub probability: f64,
}

/// What a reader sees of a case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseView {
    pub case_id: String,
    pub sample_id: String,
    pub mode: ReadingMode,
    pub image_url: String,
    /// 1-based position in this reader's order.
    pub position: usize,
    pub total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_probabilities: Option<Vec<LabelScore>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlay_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRate {
    pub label: AnomalyLabel,
    pub correct: usize,
    pub total: usize,
    /// `correct / total`, or `None` when the participant saw no case of
    /// this class.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParticipantKind {
    Reader,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantSummary {
    pub participant: String,
    pub kind: ParticipantKind,
    pub answered: usize,
    pub correct: usize,
    pub per_class: Vec<ClassRate>,
    /// Responses per reading mode; empty for the model.
    pub by_mode: BTreeMap<ReadingMode, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub case_count: usize,
    pub response_count: usize,
    pub readers: Vec<ParticipantSummary>,
    pub model: ParticipantSummary,
}

fn participant(
    name: &str,
    kind: ParticipantKind,
    answers: impl Iterator<Item = (AnomalyLabel, AnomalyLabel)>,
    by_mode: BTreeMap<ReadingMode, usize>,
) -> ParticipantSummary {
    let mut correct = [0usize; 5];
    let mut total = [0usize; 5];
    for (truth, chosen) in answers {
        total[truth.index()] += 1;
        if truth == chosen {
            correct[truth.index()] += 1;
        }
    }
    let per_class = AnomalyLabel::ALL
        .iter()
        .map(|&label| {
            let (c, t) = (correct[label.index()], total[label.index()]);
            ClassRate {
                label,
                correct: c,
                total: t,
                rate: (t > 0).then(|| c as f64 / t as f64),
            }
        })
        .collect();
    ParticipantSummary {
        participant: name.to_string(),
        kind,
        answered: total.iter().sum(),
        correct: correct.iter().sum(),
        per_class,
        by_mode,
    }
}

/// Recomputes the study summary from the case index and the response log.
/// Every registered reader is listed, including those with no responses.
pub fn summarize<'a>(
    cases: &[Case],
    readers: impl IntoIterator<Item = &'a str>,
    responses: &[ReaderResponse],
) -> Result<StudySummary> {
    let truth: BTreeMap<&str, AnomalyLabel> = cases.iter().map(|c| (c.case_id.as_str(), c.true_label)).collect();
    let mut per_reader: BTreeMap<&str, Vec<&ReaderResponse>> = readers.into_iter().map(|r| (r, Vec::new())).collect();
    for r in responses {
        if !truth.contains_key(r.case_id.as_str()) {
            return Err(Error::NotFound(format!(
                "response refers to unknown case {}",
                r.case_id
            )));
        }
        per_reader.entry(r.reader_id.as_str()).or_default().push(r);
    }
    let readers = per_reader
        .into_iter()
        .map(|(name, rs)| {
            let mut by_mode = BTreeMap::new();
            for r in &rs {
                *by_mode.entry(r.mode).or_insert(0) += 1;
            }
            participant(
                name,
                ParticipantKind::Reader,
                rs.iter().map(|r| (truth[r.case_id.as_str()], r.chosen_label)),
                by_mode,
            )
        })
        .collect();
    let model = participant(
        "model",
        ParticipantKind::Model,
        cases.iter().map(|c| (c.true_label, c.model_prediction())),
        BTreeMap::new(),
    );
    Ok(StudySummary {
        case_count: cases.len(),
        response_count: responses.len(),
        readers,
        model,
    })
}
