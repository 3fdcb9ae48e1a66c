//! Evaluates a predictions file at image and patient level and writes the
//! report, curve CSVs and SVG plots.
//!
//! ```text
//! cargo run --example evaluate_predictions -- [predictions.jsonl] [report_dir]
//! ```
//!
//! Without arguments it uses the bundled four-class fixture, 36 patients
//! with three images each.

use std::path::PathBuf;

use fetalcns::corpus::Task;
use fetalcns::metrics::{read_predictions, SubgroupTest};
use fetalcns::pipeline::{evaluate, EvaluateCommand};

fn main() -> fetalcns::Result<()> {
    let mut args = std::env::args().skip(1);
    let predictions = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/four_class_patients.jsonl"));
    let report = PathBuf::from(args.next().unwrap_or_else(|| "target/evaluate-demo".into()));
    let records = read_predictions(&predictions)?;
    let task = if records[0].probabilities.len() == 5 {
        Task::FiveClass
    } else {
        Task::FourClass
    };

    let eval = evaluate(&EvaluateCommand {
        predictions: predictions.clone(),
        task,
        subgroup_cutoff_days: Some(140),
        subgroup_test: SubgroupTest::MannWhitney,
        report: report.clone(),
    })?;

    for (name, level) in [
        ("image", &eval.report.image_level),
        ("patient", &eval.report.patient_level),
    ] {
        println!("{name} level ({} units)", level.units);
        println!("  classes   {:?}", level.confusion.classes);
        for row in &level.confusion.counts {
            println!("  {row:?}");
        }
        let m = &level.macro_average;
        println!(
            "  accuracy {:.4}  macro precision {:.4}  macro recall {:.4}  macro F1 {:.4}",
            m.accuracy, m.precision, m.recall, m.f1
        );
        println!(
            "  micro AUROC {:?}  macro AUROC {:?}",
            level.micro_roc_auc, level.macro_roc_auc
        );
        for w in &level.warnings {
            println!("  warning: {w}");
        }
    }
    if let Some(sg) = &eval.report.subgroup {
        println!(
            "true-class scores before {} days vs later: {} vs {} images, {} p = {:.4}",
            sg.cutoff_days,
            sg.group_a.len(),
            sg.group_b.len(),
            sg.test_name,
            sg.p_value
        );
    }
    println!("wrote {}", report.display());
    Ok(())
}
