//! Labels, patient-grouped split plans and image preprocessing.

mod labels;
pub mod preprocess;
pub mod split;

pub use labels::{AnomalyLabel, PlaneKind, Task};
pub use preprocess::{eval_transform, train_transform, NormalizedImage, PreprocessConfig};
pub use split::{
    check_roster, grouped_kfold, loocv_splits, verify_no_leakage, verify_no_leakage_with, Fold, LeakageReport,
    SplitPlan, SplitScheme, Violation,
};
