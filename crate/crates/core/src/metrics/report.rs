//! Full evaluation of a prediction file: image- and patient-level confusion
//! matrices, macro/micro summaries, ROC and PR curves, and the optional
//! gestational-age subgroup test.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Task;
use crate::error::{Error, Result};

use super::confusion::{
    confusion_images, confusion_patients, summary_metrics, Averaging, ConfusionMatrix, SummaryMetrics,
};
use super::curves::{macro_roc, micro_roc, pr_auc, score_matrix, RocCurve};
use super::plot::{line_chart, radar_chart, Series};
use super::records::{aggregate_patients, binary_collapse, PatientPrediction, PredictionRecord};
use super::stats::{subgroup_compare, SubgroupReport, SubgroupTest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAuc {
    pub class: String,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub units: usize,
    pub confusion: ConfusionMatrix,
    pub macro_average: SummaryMetrics,
    pub micro_average: SummaryMetrics,
    pub per_class_auc: Vec<ClassAuc>,
    pub micro_roc_auc: Option<f64>,
    pub macro_roc_auc: Option<f64>,
    /// Curves that could not be computed and why.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub task: Task,
    pub image_level: LevelReport,
    pub patient_level: LevelReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subgroup: Option<SubgroupReport>,
}

/// A curve for CSV/SVG output.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveDump {
    pub level: &'static str,
    /// `roc` or `pr`.
    pub kind: &'static str,
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub auc: f64,
}

impl CurveDump {
    pub fn file_stem(&self) -> String {
        format!("{}_{}_{}", self.kind, self.level, self.name.to_lowercase())
    }

    pub fn csv(&self) -> String {
        let header = if self.kind == "roc" {
            "fpr,tpr"
        } else {
            "recall,precision"
        };
        let mut s = format!("{header}\n");
        for (x, y) in self.x.iter().zip(&self.y) {
            writeln!(s, "{x},{y}").expect("string write");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub curves: Vec<CurveDump>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluateOptions {
    pub task: Task,
    pub subgroup_cutoff_days: Option<u32>,
    pub subgroup_test: SubgroupTest,
}

fn patient_scores(patients: &[PatientPrediction], task: Task) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let labels = patients
        .iter()
        .map(|p| task.class_index(&p.true_label))
        .collect::<Result<_>>()?;
    Ok((patients.iter().map(|p| p.probabilities.clone()).collect(), labels))
}

fn level(
    name: &'static str,
    task: Task,
    confusion: ConfusionMatrix,
    scores: &[Vec<f64>],
    labels: &[usize],
    curves: &mut Vec<CurveDump>,
) -> Result<LevelReport> {
    let classes = task.class_names();
    let mut warnings = Vec::new();
    let mut per_class_auc = Vec::new();
    let mut roc_curves: Vec<RocCurve> = Vec::new();
    let mut all_classes = true;
    for (c, class) in classes.iter().enumerate() {
        let s: Vec<f64> = scores.iter().map(|v| v[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        let roc = match roc_auc_or_warn(&s, &pos, class, &mut warnings) {
            Some(r) => {
                curves.push(CurveDump {
                    level: name,
                    kind: "roc",
                    name: class.to_string(),
                    x: r.fpr.clone(),
                    y: r.tpr.clone(),
                    auc: r.auc,
                });
                let auc = r.auc;
                roc_curves.push(r);
                Some(auc)
            }
            None => {
                all_classes = false;
                None
            }
        };
        let pr = match pr_auc(&s, &pos) {
            Ok(p) => {
                curves.push(CurveDump {
                    level: name,
                    kind: "pr",
                    name: class.to_string(),
                    x: p.recall,
                    y: p.precision,
                    auc: p.auc,
                });
                Some(p.auc)
            }
            Err(_) => None,
        };
        per_class_auc.push(ClassAuc {
            class: class.to_string(),
            roc_auc: roc,
            pr_auc: pr,
        });
    }
    let micro_roc_auc = match micro_roc(scores, labels) {
        Ok(r) => {
            curves.push(CurveDump {
                level: name,
                kind: "roc",
                name: "micro".into(),
                x: r.fpr,
                y: r.tpr,
                auc: r.auc,
            });
            Some(r.auc)
        }
        Err(e) => {
            warnings.push(format!("micro ROC: {e}"));
            None
        }
    };
    let macro_roc_auc = if all_classes {
        let m = macro_roc(&roc_curves)?;
        curves.push(CurveDump {
            level: name,
            kind: "roc",
            name: "macro".into(),
            x: m.fpr,
            y: m.tpr,
            auc: m.auc,
        });
        Some(m.auc)
    } else {
        warnings.push("macro ROC needs every class present".into());
        None
    };
    Ok(LevelReport {
        units: labels.len(),
        macro_average: summary_metrics(&confusion, Averaging::Macro)?,
        micro_average: summary_metrics(&confusion, Averaging::Micro)?,
        confusion,
        per_class_auc,
        micro_roc_auc,
        macro_roc_auc,
        warnings,
    })
}

fn roc_auc_or_warn(s: &[f64], pos: &[bool], class: &str, warnings: &mut Vec<String>) -> Option<RocCurve> {
    match super::curves::roc_auc(s, pos) {
        Ok(r) => Some(r),
        Err(e) => {
            warnings.push(format!("ROC for {class}: {e}"));
            None
        }
    }
}

/// Five-class records evaluated under the binary task are collapsed first.
pub fn evaluate(records: &[PredictionRecord], options: &EvaluateOptions) -> Result<Evaluation> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no prediction records".into()));
    }
    let task = options.task;
    let collapsed;
    let records = if task == Task::Binary && records[0].probabilities.len() == Task::FiveClass.num_classes() {
        collapsed = binary_collapse(records)?;
        &collapsed[..]
    } else {
        records
    };
    let mut curves = Vec::new();
    let (scores, labels) = score_matrix(records, task)?;
    let image_level = level(
        "image",
        task,
        confusion_images(records, task)?,
        &scores,
        &labels,
        &mut curves,
    )?;
    let patients = aggregate_patients(records)?;
    let (pscores, plabels) = patient_scores(&patients, task)?;
    let patient_level = level(
        "patient",
        task,
        confusion_patients(&patients, task)?,
        &pscores,
        &plabels,
        &mut curves,
    )?;
    let subgroup = options
        .subgroup_cutoff_days
        .map(|d| subgroup_compare(records, task, d, options.subgroup_test))
        .transpose()?;
    Ok(Evaluation {
        report: EvaluationReport {
            task,
            image_level,
            patient_level,
            subgroup,
        },
        curves,
    })
}

/// Writes `report.json`, one CSV per curve under `curves/`, and SVG plots.
pub fn write_evaluation(eval: &Evaluation, dir: &Path) -> Result<()> {
    let curves_dir = dir.join("curves");
    std::fs::create_dir_all(&curves_dir).map_err(|e| Error::io(&curves_dir, e))?;
    let write = |path: &Path, text: &str| std::fs::write(path, text).map_err(|e| Error::io(path, e));
    write(&dir.join("report.json"), &serde_json::to_string_pretty(&eval.report)?)?;
    for c in &eval.curves {
        write(&curves_dir.join(format!("{}.csv", c.file_stem())), &c.csv())?;
    }
    for lvl in ["image", "patient"] {
        for (kind, x_label, y_label) in [
            ("roc", "False positive rate", "True positive rate"),
            ("pr", "Recall", "Precision"),
        ] {
            let series: Vec<Series> = eval
                .curves
                .iter()
                .filter(|c| c.level == lvl && c.kind == kind)
                .map(|c| Series {
                    label: format!("{} ({:.3})", c.name, c.auc),
                    x: &c.x,
                    y: &c.y,
                })
                .collect();
            if series.is_empty() {
                continue;
            }
            let title = format!("{} {lvl}-level", kind.to_uppercase());
            let svg = line_chart(&title, x_label, y_label, &series, kind == "roc");
            write(&dir.join(format!("{kind}_{lvl}.svg")), &svg)?;
        }
    }
    let pl = &eval.report.patient_level;
    let axes: Vec<String> = pl.confusion.classes.clone();
    let recalls: Vec<f64> = pl.macro_average.per_class.iter().map(|c| c.recall).collect();
    write(
        &dir.join("radar_patient.svg"),
        &radar_chart("Per-class recall (patient level)", &axes, &[("model".into(), recalls)]),
    )?;
    Ok(())
}
