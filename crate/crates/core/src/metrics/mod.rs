//! Image- and patient-level evaluation.

mod confusion;
pub mod curves;
pub mod plot;
mod records;
mod report;
pub mod stats;

pub use confusion::{
    confusion_images, confusion_patients, per_class_metrics, summary_metrics, Averaging, ClassMetrics, ConfusionMatrix,
    SummaryMetrics,
};
pub use curves::{
    macro_roc, micro_roc, multiclass_roc, per_class_roc, pr_auc, roc_auc, NamedCurve, PrCurve, RocCurve, RocMode,
};
pub use records::{
    aggregate_patient, aggregate_patients, argmax, binary_collapse, mean_probabilities, read_predictions,
    write_predictions, PatientPrediction, PredictionRecord,
};
pub use report::{
    evaluate, write_evaluation, ClassAuc, CurveDump, EvaluateOptions, Evaluation, EvaluationReport, LevelReport,
};
pub use stats::{mann_whitney, subgroup_compare, welch_t, SubgroupReport, SubgroupTest, TestResult};
