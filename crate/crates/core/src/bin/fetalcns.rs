use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fetalcns::corpus::{PreprocessConfig, SplitScheme, Task};
use fetalcns::explain::OverlayConfig;
use fetalcns::ingest::Manifest;
use fetalcns::metrics::SubgroupTest;
use fetalcns::pipeline::{self, FoldSelection};
use fetalcns::synth::SynthConfig;

#[derive(Parser)]
#[command(name = "fetalcns", version, about = "Fetal CNS anomaly classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Loocv,
    Kfold,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    #[value(name = "4class")]
    Four,
    #[value(name = "5class")]
    Five,
    Binary,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestArg {
    Mwu,
    Welch,
}

#[derive(Subcommand)]
enum Command {
    /// Sample frames from listed videos, crop them and write a manifest.
    Ingest {
        /// JSON Lines list of videos (video_id, patient_id, label, path, ...).
        #[arg(long)]
        videos: PathBuf,
        #[arg(long, default_value_t = 80)]
        stride: usize,
        /// JSON Lines crop sidecar keyed by sample_id.
        #[arg(long)]
        crops: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a patient-grouped split plan.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        scheme: Scheme,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output JSON file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one fold or all folds of a split plan.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// `all` or a fold number.
        #[arg(long, default_value = "all")]
        fold: FoldSelection,
        /// JSON file, or one of `desk`, `desk-nopool`, `resnet34`.
        #[arg(long)]
        net_config: Option<String>,
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        preprocess_config: Option<PathBuf>,
        /// Checkpoint whose backbone initialises every fold.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute metrics, curves and plots from a predictions file.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        /// Gestational-age split point; 0 disables the subgroup test.
        #[arg(long, default_value_t = 140)]
        subgroup_cutoff_days: u32,
        #[arg(long, value_enum, default_value = "mwu")]
        subgroup_test: TestArg,
        /// Output directory.
        #[arg(long)]
        report: PathBuf,
    },
    /// Grad-CAM heatmap and overlay for one image.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Class index to explain; defaults to the predicted class.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, default_value_t = 0.35)]
        alpha: f64,
        #[arg(long)]
        preprocess_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the reader-study HTTP service.
    Serve {
        #[arg(long, env = "PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "DATA_DIR")]
        data_dir: PathBuf,
        #[arg(long)]
        cases: PathBuf,
        #[arg(long, env = "ADMIN_TOKEN", hide_env_values = true)]
        admin_token: Option<String>,
    },
    /// Generate the synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 20)]
        patients: usize,
        #[arg(long, default_value_t = 30)]
        images_per_patient: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 80)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> fetalcns::Result<()> {
    match cli.command {
        Command::Ingest {
            videos,
            stride,
            crops,
            out,
        } => {
            let m = pipeline::ingest(&pipeline::IngestOptions {
                videos,
                stride,
                crops,
                out,
            })?;
            log::info!("{} samples from {} patients", m.len(), m.patient_count());
        }
        Command::Split {
            manifest,
            scheme,
            k,
            seed,
            out,
        } => {
            let scheme = match scheme {
                Scheme::Loocv => SplitScheme::Loocv,
                Scheme::Kfold => SplitScheme::GroupedKfold { k },
            };
            let plan = pipeline::split(&pipeline::SplitOptions {
                manifest,
                scheme,
                seed,
                out,
            })?;
            log::info!("{} folds", plan.folds.len());
        }
        Command::Train {
            manifest,
            split,
            fold,
            net_config,
            train_config,
            preprocess_config,
            pretrained,
            jobs,
            out,
        } => {
            let classes = pipeline::classes_in(&Manifest::read(&manifest)?);
            let opts = pipeline::TrainOptions {
                manifest,
                split,
                folds: fold,
                net: pipeline::resolve_net_config(net_config.as_deref(), classes)?,
                train: pipeline::load_train_config(train_config.as_deref())?,
                preprocess: PreprocessConfig::load(preprocess_config.as_deref())?,
                out,
                jobs,
                pretrained,
            };
            let summary = pipeline::train(&opts)?;
            for r in &summary.results {
                log::info!(
                    "fold {}: best val accuracy {:.4} at epoch {}",
                    r.fold_id,
                    r.best_val_accuracy,
                    r.epoch_of_best
                );
            }
        }
        Command::Evaluate {
            predictions,
            task,
            subgroup_cutoff_days,
            subgroup_test,
            report,
        } => {
            let eval = pipeline::evaluate(&pipeline::EvaluateCommand {
                predictions,
                task: match task {
                    TaskArg::Four => Task::FourClass,
                    TaskArg::Five => Task::FiveClass,
                    TaskArg::Binary => Task::Binary,
                },
                subgroup_cutoff_days: (subgroup_cutoff_days > 0).then_some(subgroup_cutoff_days),
                subgroup_test: match subgroup_test {
                    TestArg::Mwu => SubgroupTest::MannWhitney,
                    TestArg::Welch => SubgroupTest::WelchT,
                },
                report,
            })?;
            let p = &eval.report.patient_level;
            log::info!(
                "patient accuracy {:.4}, macro recall {:.4}",
                p.macro_average.accuracy,
                p.macro_average.recall
            );
        }
        Command::Explain {
            checkpoint,
            image,
            class,
            alpha,
            preprocess_config,
            out,
        } => {
            pipeline::explain(&pipeline::ExplainOptions {
                checkpoint,
                image,
                class,
                overlay: OverlayConfig {
                    alpha,
                    ..OverlayConfig::default()
                },
                preprocess: PreprocessConfig::load(preprocess_config.as_deref())?,
                out,
            })?;
        }
        Command::Serve {
            port,
            data_dir,
            cases,
            admin_token,
        } => pipeline::serve(&pipeline::ServeOptions {
            port,
            data_dir,
            cases,
            admin_token,
        })?,
        Command::Synth {
            patients,
            images_per_patient,
            seed,
            size,
            out,
        } => {
            let m = pipeline::synth(
                &SynthConfig {
                    patients,
                    images_per_patient,
                    seed,
                    width: size,
                    height: size,
                },
                &out,
            )?;
            log::info!("wrote {} images for {} patients", m.len(), m.patient_count());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
