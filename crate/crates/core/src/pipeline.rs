//! Whole-command entry points shared by the `fetalcns` binary and the
//! examples. Each command writes its outputs plus a `run_manifest.json`
//! recording the configuration, seed and SHA-256 of every input file.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    eval_transform, grouped_kfold, loocv_splits, verify_no_leakage, AnomalyLabel, PlaneKind, PreprocessConfig,
    SplitPlan, SplitScheme, Task,
};
use crate::error::{Error, Result};
use crate::explain::{explain as explain_image, write_triptych, Explanation, OverlayConfig};
use crate::imaging::Frame;
use crate::ingest::{
    build_manifest, crop_roi, decode_video, extract_frames, parse_gestational_age, read_crop_sidecar, read_jsonl,
    CropRect, FrameDirectory, FrameExtractionSpec, FrameSource, Manifest, SampleRecord, SampleSource,
};
use crate::metrics::{argmax, evaluate as evaluate_records, read_predictions, write_evaluation, write_predictions};
use crate::metrics::{EvaluateOptions, Evaluation, PredictionRecord, SubgroupTest};
use crate::net::{forward, load_checkpoint, NetConfig, ParameterSet, Tensor};
use crate::reader::{spawn_server, ReaderStudy, StudyPaths};
use crate::synth::{generate, SynthConfig};
use crate::trainer::{train_fold, FoldJob, FoldResult, ImageStore, TrainConfig};

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Input path to hex SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub version: String,
    pub started_at: chrono::DateTime<chrono::Utc>,
    pub finished_at: Option<chrono::DateTime<chrono::Utc>>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn begin(command: &str, config: &impl Serialize, seed: Option<u64>) -> Result<RunManifest> {
        Ok(RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            inputs: BTreeMap::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: chrono::Utc::now(),
            finished_at: None,
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn finish(mut self, out_dir: &Path) -> Result<RunManifest> {
        self.finished_at = Some(chrono::Utc::now());
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let path = out_dir.join(RUN_MANIFEST);
        std::fs::write(&path, serde_json::to_string_pretty(&self)?).map_err(|e| Error::io(&path, e))?;
        Ok(self)
    }
}

/// Directory that relative manifest paths are resolved against.
pub fn manifest_root(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// One line of the video list consumed by [`ingest`]. `path` is either a
/// video file (decoded with `ffmpeg`) or a decoded frame directory, and is
/// resolved relative to the list file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub patient_id: String,
    pub label: AnomalyLabel,
    pub path: String,
    /// Like `"29w2d"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gestational_age: Option<String>,
    #[serde(default = "unknown_site")]
    pub site: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plane: Option<PlaneKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_frame: Option<usize>,
    /// Inclusive; defaults to the last frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_frame: Option<usize>,
}

fn unknown_site() -> String {
    "unknown".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestOptions {
    pub videos: PathBuf,
    pub stride: usize,
    pub crops: Option<PathBuf>,
    pub out: PathBuf,
}

/// Sample id of an extracted frame.
pub fn frame_sample_id(video_id: &str, frame_index: usize) -> String {
    format!("{video_id}_f{frame_index:06}")
}

/// Samples every `stride`-th frame of each listed video, crops it with the
/// sidecar rectangle (whole frame if none), and writes
/// `<out>/images/<sample_id>.png` plus `<out>/manifest.jsonl`.
pub fn ingest(opts: &IngestOptions) -> Result<Manifest> {
    let mut run = RunManifest::begin("ingest", opts, None)?;
    run.add_input(&opts.videos)?;
    let entries: Vec<VideoEntry> = read_jsonl(&opts.videos)?;
    let crops: HashMap<String, CropRect> = match &opts.crops {
        Some(p) => {
            run.add_input(p)?;
            read_crop_sidecar(p)?
        }
        None => HashMap::new(),
    };
    let list_root = manifest_root(&opts.videos);
    let images = opts.out.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut records = Vec::new();
    for v in &entries {
        let src = list_root.join(&v.path);
        let frames = if src.is_dir() {
            FrameDirectory::open(&src)?
        } else {
            decode_video(&src, &opts.out.join("frames").join(&v.video_id))?
        };
        let count = frames.frame_count();
        if count == 0 {
            return Err(Error::EmptyInput(format!("{} has no frames", src.display())));
        }
        let spec = FrameExtractionSpec::new(
            opts.stride,
            v.start_frame.unwrap_or(0),
            v.end_frame.unwrap_or(count - 1),
        )?;
        let ga = v.gestational_age.as_deref().map(parse_gestational_age).transpose()?;
        for (index, frame) in extract_frames(&frames, &spec)? {
            let sample_id = frame_sample_id(&v.video_id, index);
            let rect = crops.get(&sample_id).copied().unwrap_or_else(|| CropRect::full(&frame));
            let cropped = crop_roi(&frame, &rect)?;
            let rel = format!("images/{sample_id}.png");
            cropped.write_png(&opts.out.join(&rel))?;
            records.push(SampleRecord {
                sample_id,
                patient_id: v.patient_id.clone(),
                path: rel,
                label: v.label,
                plane: v.plane,
                gestational_age_days: ga,
                source: SampleSource::VideoFrame,
                video_id: Some(v.video_id.clone()),
                frame_index: Some(index),
                site: v.site.clone(),
                extra: Default::default(),
            });
        }
    }
    let manifest = build_manifest(records)?;
    manifest.write(&opts.out.join("manifest.jsonl"))?;
    run.finish(&opts.out)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitOptions {
    pub manifest: PathBuf,
    pub scheme: SplitScheme,
    pub seed: u64,
    pub out: PathBuf,
}

/// Builds a split plan, checks it for leakage and writes it as JSON to
/// `out` (a file path); the run manifest goes next to it.
pub fn split(opts: &SplitOptions) -> Result<SplitPlan> {
    let mut run = RunManifest::begin("split", opts, Some(opts.seed))?;
    run.add_input(&opts.manifest)?;
    let manifest = Manifest::read(&opts.manifest)?;
    let plan = match opts.scheme {
        SplitScheme::Loocv => loocv_splits(&manifest)?,
        SplitScheme::GroupedKfold { k } => grouped_kfold(&manifest, k, opts.seed)?,
    };
    let report = verify_no_leakage(&plan);
    if !report.is_clean() {
        return Err(Error::Grouping(format!(
            "split plan leaks patients: {:?}",
            report.violations
        )));
    }
    plan.write(&opts.out)?;
    run.finish(&manifest_root(&opts.out))?;
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldSelection {
    All,
    One(usize),
}

impl std::str::FromStr for FoldSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(FoldSelection::All);
        }
        s.parse()
            .map(FoldSelection::One)
            .map_err(|_| Error::Parse(format!("fold must be `all` or a fold number, got {s:?}")))
    }
}

/// Everything `train` needs once config files have been read.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub manifest: PathBuf,
    pub split: PathBuf,
    pub folds: FoldSelection,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    pub out: PathBuf,
    /// Folds trained concurrently.
    pub jobs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<PathBuf>,
}

/// Reads a network config file, or builds a named profile (`desk`,
/// `desk-nopool`, `resnet34`) for `num_classes` classes.
pub fn resolve_net_config(spec: Option<&str>, num_classes: usize) -> Result<NetConfig> {
    let cfg = match spec {
        None | Some("desk") => NetConfig::desk(num_classes),
        Some("desk-nopool") => NetConfig::desk(num_classes).without_stem_pool(),
        Some("resnet34") => NetConfig::resnet34(num_classes),
        Some(path) => read_json(Path::new(path))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    let cfg = match path {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Five classes if the manifest has `Normal` images, otherwise four.
pub fn classes_in(manifest: &Manifest) -> usize {
    if manifest.label_counts().contains_key(&AnomalyLabel::Normal) {
        5
    } else {
        4
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub results: Vec<FoldResult>,
    pub predictions: Vec<PredictionRecord>,
}

/// Trains the selected folds (up to `jobs` at once) and writes
/// `fold_NNN/{best.ckpt,epochs.csv,result.json}` plus the pooled held-out
/// `predictions.jsonl`.
pub fn train(opts: &TrainOptions) -> Result<TrainSummary> {
    let mut run = RunManifest::begin("train", opts, Some(opts.train.seed))?;
    run.add_input(&opts.manifest)?;
    run.add_input(&opts.split)?;
    let manifest = Manifest::read(&opts.manifest)?;
    let plan = SplitPlan::read(&opts.split)?;
    let report = verify_no_leakage(&plan);
    if !report.is_clean() {
        return Err(Error::Grouping(format!(
            "split plan leaks patients: {:?}",
            report.violations
        )));
    }
    let pretrained = match &opts.pretrained {
        Some(p) => {
            run.add_input(p)?;
            Some(load_checkpoint(p)?.0)
        }
        None => None,
    };
    let folds = match opts.folds {
        FoldSelection::All => plan.folds.iter().collect::<Vec<_>>(),
        FoldSelection::One(i) => vec![plan.fold(i)?],
    };
    let images = ImageStore::load(&manifest, &manifest_root(&opts.manifest), &opts.preprocess)?;
    log::info!("loaded {} images, training {} folds", images.len(), folds.len());
    let job = |fold| {
        train_fold(&FoldJob {
            fold,
            manifest: &manifest,
            images: &images,
            net: &opts.net,
            train: &opts.train,
            preprocess: &opts.preprocess,
            out_dir: &opts.out,
            pretrained: pretrained.as_ref(),
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes = pool.install(|| folds.par_iter().map(|f| job(f)).collect::<Result<Vec<_>>>())?;
    let mut results = Vec::new();
    let mut predictions = Vec::new();
    for o in outcomes {
        results.push(o.result);
        predictions.extend(o.predictions);
    }
    write_predictions(&opts.out.join("predictions.jsonl"), &predictions)?;
    run.finish(&opts.out)?;
    Ok(TrainSummary { results, predictions })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateCommand {
    pub predictions: PathBuf,
    pub task: Task,
    pub subgroup_cutoff_days: Option<u32>,
    pub subgroup_test: SubgroupTest,
    pub report: PathBuf,
}

pub fn evaluate(cmd: &EvaluateCommand) -> Result<Evaluation> {
    let mut run = RunManifest::begin("evaluate", cmd, None)?;
    run.add_input(&cmd.predictions)?;
    let records = read_predictions(&cmd.predictions)?;
    let eval = evaluate_records(
        &records,
        &EvaluateOptions {
            task: cmd.task,
            subgroup_cutoff_days: cmd.subgroup_cutoff_days,
            subgroup_test: cmd.subgroup_test,
        },
    )?;
    write_evaluation(&eval, &cmd.report)?;
    run.finish(&cmd.report)?;
    Ok(eval)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainOptions {
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    /// Explained class; the predicted class when absent.
    pub class: Option<usize>,
    pub overlay: OverlayConfig,
    pub preprocess: PreprocessConfig,
    pub out: PathBuf,
}

/// Predicted class index of one preprocessed image.
pub fn predict_class(params: &ParameterSet, image: &crate::corpus::NormalizedImage) -> Result<usize> {
    let x = Tensor::new(vec![1, 3, image.height, image.width], image.data.clone())?;
    let logits = forward(params, &x)?;
    let row: Vec<f64> = logits.row(0).iter().map(|&v| v as f64).collect();
    Ok(argmax(&row))
}

/// Writes `<stem>.orig.png`, `<stem>.cam.png` and `<stem>.overlay.png`
/// for the image's file stem.
pub fn explain(opts: &ExplainOptions) -> Result<Explanation> {
    let mut run = RunManifest::begin("explain", opts, None)?;
    run.add_input(&opts.checkpoint)?;
    run.add_input(&opts.image)?;
    let (params, _) = load_checkpoint(&opts.checkpoint)?;
    let frame = Frame::read_png(&opts.image)?;
    let image = eval_transform(&frame, &opts.preprocess)?;
    let class = match opts.class {
        Some(c) => c,
        None => predict_class(&params, &image)?,
    };
    let e = explain_image(&params, &image, &opts.preprocess, class, &opts.overlay)?;
    let stem = opts
        .image
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("{} has no usable file name", opts.image.display())))?;
    write_triptych(&opts.out, stem, &e)?;
    run.finish(&opts.out)?;
    Ok(e)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServeOptions {
    pub port: u16,
    pub data_dir: PathBuf,
    pub cases: PathBuf,
    /// Never written to the run manifest.
    #[serde(skip)]
    pub admin_token: Option<String>,
}

/// Runs the reader-study server until interrupted.
pub fn serve(opts: &ServeOptions) -> Result<()> {
    let mut run = RunManifest::begin("serve", opts, None)?;
    run.add_input(&opts.cases)?;
    run.finish(&opts.data_dir)?;
    let study = Arc::new(ReaderStudy::open(
        StudyPaths {
            cases: opts.cases.clone(),
            data_dir: opts.data_dir.clone(),
        },
        opts.admin_token.clone(),
    )?);
    if opts.admin_token.is_none() {
        log::warn!("ADMIN_TOKEN is not set; /api/summary is disabled");
    }
    let addr = std::net::SocketAddr::from(([0, 0, 0, 0], opts.port));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::External(format!("runtime: {e}")))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::External(format!("bind {addr}: {e}")))?;
        log::info!("reader study listening on {addr}");
        crate::reader::serve(study, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })
}

/// Starts the server on a background thread; used by tests and examples.
pub fn serve_in_background(opts: &ServeOptions) -> Result<crate::reader::ServerHandle> {
    let study = Arc::new(ReaderStudy::open(
        StudyPaths {
            cases: opts.cases.clone(),
            data_dir: opts.data_dir.clone(),
        },
        opts.admin_token.clone(),
    )?);
    spawn_server(study, std::net::SocketAddr::from(([127, 0, 0, 1], opts.port)))
}

pub fn synth(cfg: &SynthConfig, out: &Path) -> Result<Manifest> {
    let run = RunManifest::begin("synth", cfg, Some(cfg.seed))?;
    let manifest = generate(cfg, out)?;
    run.finish(out)?;
    Ok(manifest)
}
