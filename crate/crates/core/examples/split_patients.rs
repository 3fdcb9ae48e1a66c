//! Patient-grouped splits: leave-one-patient-out and grouped k-fold over a
//! synthetic manifest, the leakage check on each, and what the check
//! reports when a patient is copied into a training set.

use fetalcns::corpus::{grouped_kfold, loocv_splits, verify_no_leakage};
use fetalcns::synth::{generate, SynthConfig};

fn main() -> fetalcns::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = generate(
        &SynthConfig {
            patients: 12,
            images_per_patient: 4,
            width: 32,
            height: 32,
            ..SynthConfig::default()
        },
        dir.path(),
    )?;
    println!("{} images from {} patients", manifest.len(), manifest.patient_count());
    for (label, n) in manifest.label_counts() {
        println!("  {label:<18} {n}");
    }

    let loocv = loocv_splits(&manifest)?;
    println!(
        "\nLOOCV: {} folds, clean = {}",
        loocv.folds.len(),
        verify_no_leakage(&loocv).is_clean()
    );

    let kfold = grouped_kfold(&manifest, 4, 11)?;
    println!(
        "grouped 4-fold (seed 11): clean = {}",
        verify_no_leakage(&kfold).is_clean()
    );
    for f in &kfold.folds {
        println!(
            "  fold {}: {} train / {} test patients: {:?}",
            f.fold_id,
            f.train_patient_ids.len(),
            f.test_patient_ids.len(),
            f.test_patient_ids
        );
    }

    let mut leaky = kfold.clone();
    let moved = leaky.folds[0].test_patient_ids[0].clone();
    leaky.folds[0].train_patient_ids.push(moved.clone());
    let report = verify_no_leakage(&leaky);
    println!("\nafter copying {moved} into fold 0's training set:");
    for v in &report.violations {
        println!("  {v:?}");
    }
    Ok(())
}
