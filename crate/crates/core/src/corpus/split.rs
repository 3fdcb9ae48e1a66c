//! Patient-grouped cross-validation plans.
//!
//! The unit of splitting is the patient: every image of a patient lands on
//! the same side of every fold.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Manifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitScheme {
    Loocv,
    GroupedKfold { k: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub fold_id: usize,
    pub train_patient_ids: Vec<String>,
    pub test_patient_ids: Vec<String>,
}

impl Fold {
    pub fn train_set(&self) -> BTreeSet<String> {
        self.train_patient_ids.iter().cloned().collect()
    }

    pub fn test_set(&self) -> BTreeSet<String> {
        self.test_patient_ids.iter().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub scheme: SplitScheme,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    pub fn fold(&self, fold_id: usize) -> Result<&Fold> {
        self.folds
            .iter()
            .find(|f| f.fold_id == fold_id)
            .ok_or_else(|| Error::Config(format!("fold {fold_id} not in split plan")))
    }

    pub fn read(path: &Path) -> Result<SplitPlan> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Fails if any patient on the roster has no images in the manifest.
pub fn check_roster(manifest: &Manifest, roster: &[String]) -> Result<()> {
    let empty: Vec<&str> = roster
        .iter()
        .filter(|p| !manifest.patient_counts().contains_key(p.as_str()))
        .map(|p| p.as_str())
        .collect();
    if empty.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "patients without images: {}",
            empty.join(", ")
        )))
    }
}

/// One fold per patient; that patient's images form the whole test set.
pub fn loocv_splits(manifest: &Manifest) -> Result<SplitPlan> {
    let patients = manifest.patients();
    if patients.len() < 2 {
        return Err(Error::Config(format!(
            "leave-one-patient-out needs at least 2 patients, got {}",
            patients.len()
        )));
    }
    let folds = patients
        .iter()
        .enumerate()
        .map(|(i, held_out)| Fold {
            fold_id: i,
            train_patient_ids: patients.iter().filter(|p| *p != held_out).cloned().collect(),
            test_patient_ids: vec![held_out.clone()],
        })
        .collect();
    Ok(SplitPlan {
        scheme: SplitScheme::Loocv,
        seed: 0,
        folds,
    })
}

/// Seeded shuffle of patients into `k` groups whose sizes differ by at most
/// one; the first `n % k` groups take the extra patient.
pub fn grouped_kfold(manifest: &Manifest, k: usize, seed: u64) -> Result<SplitPlan> {
    let mut patients = manifest.patients();
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if patients.len() < k {
        return Err(Error::Config(format!(
            "k = {k} exceeds patient count {}",
            patients.len()
        )));
    }
    patients.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n = patients.len();
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for fold_id in 0..k {
        let size = n / k + usize::from(fold_id < n % k);
        let mut test: Vec<String> = patients[start..start + size].to_vec();
        test.sort();
        let mut train: Vec<String> = patients[..start]
            .iter()
            .chain(&patients[start + size..])
            .cloned()
            .collect();
        train.sort();
        folds.push(Fold {
            fold_id,
            train_patient_ids: train,
            test_patient_ids: test,
        });
        start += size;
    }
    Ok(SplitPlan {
        scheme: SplitScheme::GroupedKfold { k },
        seed,
        folds,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Patient is in both the train and test set of a fold.
    Overlap { fold_id: usize, patient_id: String },
    /// Patient never appears in a test set.
    Uncovered { patient_id: String },
    /// Patient is tested in more than one fold.
    RepeatedTest { patient_id: String, fold_ids: Vec<usize> },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub violations: Vec<Violation>,
}

impl LeakageReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn verify_no_leakage(plan: &SplitPlan) -> LeakageReport {
    verify_no_leakage_with(plan, &[])
}

/// As [`verify_no_leakage`], additionally requiring every patient in
/// `expected_patients` to be covered.
pub fn verify_no_leakage_with(plan: &SplitPlan, expected_patients: &[String]) -> LeakageReport {
    let mut violations = Vec::new();
    let mut universe: BTreeSet<&str> = expected_patients.iter().map(|s| s.as_str()).collect();
    let mut tested_in: BTreeMap<&str, Vec<usize>> = BTreeMap::new();

    for fold in &plan.folds {
        let train: BTreeSet<&str> = fold.train_patient_ids.iter().map(|s| s.as_str()).collect();
        let test: BTreeSet<&str> = fold.test_patient_ids.iter().map(|s| s.as_str()).collect();
        for p in train.intersection(&test) {
            violations.push(Violation::Overlap {
                fold_id: fold.fold_id,
                patient_id: p.to_string(),
            });
        }
        for p in &test {
            tested_in.entry(p).or_default().push(fold.fold_id);
        }
        universe.extend(train);
        universe.extend(test);
    }

    for p in universe {
        match tested_in.get(p) {
            None => violations.push(Violation::Uncovered {
                patient_id: p.to_string(),
            }),
            Some(folds) if folds.len() > 1 => violations.push(Violation::RepeatedTest {
                patient_id: p.to_string(),
                fold_ids: folds.clone(),
            }),
            Some(_) => {}
        }
    }
    LeakageReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AnomalyLabel;
    use crate::ingest::{build_manifest, SampleRecord, SampleSource};
    use proptest::prelude::*;

    pub(crate) fn manifest_with(patients: usize, images_each: usize) -> Manifest {
        let mut records = Vec::new();
        for p in 0..patients {
            for i in 0..images_each {
                records.push(SampleRecord {
                    sample_id: format!("p{p:03}_{i:03}"),
                    patient_id: format!("p{p:03}"),
                    path: format!("images/p{p:03}_{i:03}.png"),
                    label: AnomalyLabel::ALL[p % 5],
                    plane: None,
                    gestational_age_days: None,
                    source: SampleSource::Still,
                    video_id: None,
                    frame_index: None,
                    site: "A".into(),
                    extra: Default::default(),
                });
            }
        }
        build_manifest(records).unwrap()
    }

    #[test]
    fn loocv_examples() {
        let plan = loocv_splits(&manifest_with(5, 3)).unwrap();
        assert_eq!(plan.folds.len(), 5);
        assert!(plan
            .folds
            .iter()
            .all(|f| f.test_patient_ids.len() == 1 && f.train_patient_ids.len() == 4));
        assert!(verify_no_leakage(&plan).is_clean());

        assert_eq!(loocv_splits(&manifest_with(37, 1)).unwrap().folds.len(), 37);
        assert!(matches!(loocv_splits(&manifest_with(1, 4)), Err(Error::Config(_))));
    }

    #[test]
    fn roster_with_imageless_patient_is_rejected() {
        let m = manifest_with(3, 2);
        let mut roster = m.patients();
        check_roster(&m, &roster).unwrap();
        roster.push("ghost".into());
        let err = check_roster(&m, &roster).unwrap_err();
        assert!(matches!(&err, Error::Validation(s) if s.contains("ghost")));
    }

    #[test]
    fn kfold_examples() {
        let plan = grouped_kfold(&manifest_with(10, 2), 5, 1).unwrap();
        assert!(plan.folds.iter().all(|f| f.test_patient_ids.len() == 2));

        let plan = grouped_kfold(&manifest_with(11, 2), 5, 1).unwrap();
        let sizes: Vec<_> = plan.folds.iter().map(|f| f.test_patient_ids.len()).collect();
        assert_eq!(sizes, vec![3, 2, 2, 2, 2]);

        let m = manifest_with(23, 1);
        assert_eq!(grouped_kfold(&m, 4, 99).unwrap(), grouped_kfold(&m, 4, 99).unwrap());
        assert_ne!(grouped_kfold(&m, 4, 99).unwrap(), grouped_kfold(&m, 4, 100).unwrap());

        assert!(matches!(
            grouped_kfold(&manifest_with(4, 1), 5, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            grouped_kfold(&manifest_with(4, 1), 1, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn constructed_violations_are_reported() {
        let mut plan = loocv_splits(&manifest_with(4, 1)).unwrap();
        let p = plan.folds[0].test_patient_ids[0].clone();
        plan.folds[0].train_patient_ids.push(p.clone());
        let report = verify_no_leakage(&plan);
        assert_eq!(
            report.violations,
            vec![Violation::Overlap {
                fold_id: 0,
                patient_id: p
            }]
        );

        let mut plan = loocv_splits(&manifest_with(4, 1)).unwrap();
        let q = plan.folds.pop().unwrap().test_patient_ids[0].clone();
        let report = verify_no_leakage(&plan);
        assert_eq!(report.violations, vec![Violation::Uncovered { patient_id: q }]);
    }

    #[test]
    fn expected_roster_catches_missing_patient() {
        let plan = loocv_splits(&manifest_with(3, 1)).unwrap();
        let mut roster: Vec<String> = (0..3).map(|p| format!("p{p:03}")).collect();
        assert!(verify_no_leakage_with(&plan, &roster).is_clean());
        roster.push("p999".into());
        assert_eq!(verify_no_leakage_with(&plan, &roster).violations.len(), 1);
    }

    #[test]
    fn plan_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let plan = grouped_kfold(&manifest_with(7, 1), 3, 5).unwrap();
        let path = dir.path().join("split.json");
        plan.write(&path).unwrap();
        assert_eq!(SplitPlan::read(&path).unwrap(), plan);
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["scheme"]["kind"], "grouped_kfold");
        assert!(v["folds"][0]["test_patient_ids"][0].is_string());
    }

    proptest! {
        #[test]
        fn generated_plans_never_leak(patients in 2usize..40, k in 2usize..8, seed: u64) {
            let m = manifest_with(patients, 1);
            prop_assert!(verify_no_leakage(&loocv_splits(&m).unwrap()).is_clean());
            if k <= patients {
                let plan = grouped_kfold(&m, k, seed).unwrap();
                prop_assert!(verify_no_leakage(&plan).is_clean());
                let sizes: Vec<_> = plan.folds.iter().map(|f| f.test_patient_ids.len()).collect();
                prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            }
        }
    }
}
