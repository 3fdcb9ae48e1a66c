//! Leave-one-patient-out training on the synthetic corpus, end to end:
//! generate, split, train every fold, evaluate the pooled predictions.
//!
//! ```text
//! cargo run --release --example train_loocv -- [out_dir] [patients] [jobs]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use fetalcns::corpus::{PreprocessConfig, SplitScheme, Task};
use fetalcns::metrics::SubgroupTest;
use fetalcns::net::NetConfig;
use fetalcns::pipeline::{self, EvaluateCommand, FoldSelection, SplitOptions, TrainOptions};
use fetalcns::synth::SynthConfig;
use fetalcns::trainer::TrainConfig;

fn main() -> fetalcns::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/loocv-demo".into()));
    let patients: usize = args.next().map_or(20, |s| s.parse().expect("patients"));
    let jobs: usize = args.next().map_or(1, |s| s.parse().expect("jobs"));

    let started = Instant::now();
    let corpus = out.join("corpus");
    let manifest = pipeline::synth(
        &SynthConfig {
            patients,
            images_per_patient: 30,
            ..SynthConfig::default()
        },
        &corpus,
    )?;
    println!(
        "corpus: {} images, {} patients",
        manifest.len(),
        manifest.patient_count()
    );

    let split_path = out.join("split.json");
    let plan = pipeline::split(&SplitOptions {
        manifest: corpus.join("manifest.jsonl"),
        scheme: SplitScheme::Loocv,
        seed: 0,
        out: split_path.clone(),
    })?;
    println!("split: {} folds", plan.folds.len());

    // 80x80 sources, resized to 73 and cropped to 64.
    let preprocess = PreprocessConfig {
        target_size: 64,
        ..PreprocessConfig::default()
    };
    let train = TrainConfig {
        max_epochs: 12,
        early_stop_patience: 5,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let run = out.join("run");
    let summary = pipeline::train(&TrainOptions {
        manifest: corpus.join("manifest.jsonl"),
        split: split_path,
        folds: FoldSelection::All,
        net: NetConfig::desk(5).without_stem_pool(),
        train,
        preprocess,
        out: run.clone(),
        jobs,
        pretrained: None,
    })?;
    for r in &summary.results {
        println!(
            "fold {:>2}: best held-out accuracy {:.3} at epoch {} of {}",
            r.fold_id,
            r.best_val_accuracy,
            r.epoch_of_best,
            r.epochs.len()
        );
    }

    let eval = pipeline::evaluate(&EvaluateCommand {
        predictions: run.join("predictions.jsonl"),
        task: Task::FiveClass,
        subgroup_cutoff_days: Some(140),
        subgroup_test: SubgroupTest::MannWhitney,
        report: out.join("report"),
    })?;
    let img = &eval.report.image_level;
    let pat = &eval.report.patient_level;
    println!("image accuracy   {:.4}", img.macro_average.accuracy);
    println!("patient accuracy {:.4}", pat.macro_average.accuracy);
    println!("micro AUROC      {:?}", img.micro_roc_auc);
    println!("macro AUROC      {:?}", img.macro_roc_auc);
    println!("patient confusion {:?}", pat.confusion.counts);
    println!("elapsed {:.1?}", started.elapsed());
    Ok(())
}
