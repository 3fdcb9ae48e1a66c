//! Training one cross-validation fold.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::preprocess::{resize_short_side, ResizedImage};
use crate::corpus::{Fold, NormalizedImage, PreprocessConfig, Task};
use crate::error::{Error, Result};
use crate::imaging::Frame;
use crate::ingest::{Manifest, SampleRecord};
use crate::metrics::PredictionRecord;
use crate::net::{
    apply_running_stats, build_model, forward, gradients, save_checkpoint, softmax, transfer_weights, NetConfig,
    ParameterSet, Tensor,
};

use super::loss::{class_weights, WeightedCrossEntropy};
use super::optim::{adamw_step, AdamState};
use super::schedule::{lr_at, TrainConfig};

/// The class set a network with `num_classes` outputs is trained on.
pub fn task_for_classes(num_classes: usize) -> Result<Task> {
    match num_classes {
        2 => Ok(Task::Binary),
        4 => Ok(Task::FourClass),
        5 => Ok(Task::FiveClass),
        n => Err(Error::Config(format!("no labelling task has {n} classes"))),
    }
}

/// Short-side-resized images keyed by sample id, decoded once and shared by
/// every fold.
#[derive(Debug, Clone, Default)]
pub struct ImageStore {
    images: BTreeMap<String, ResizedImage>,
}

impl ImageStore {
    /// Loads every manifest image; relative paths resolve against `root`.
    pub fn load(manifest: &Manifest, root: &Path, config: &PreprocessConfig) -> Result<Self> {
        let mut images = BTreeMap::new();
        for r in manifest.records() {
            let frame = Frame::read_png(&resolve(root, &r.path))?;
            images.insert(r.sample_id.clone(), resize_short_side(&frame, config)?);
        }
        Ok(ImageStore { images })
    }

    pub fn insert(&mut self, sample_id: impl Into<String>, frame: &Frame, config: &PreprocessConfig) -> Result<()> {
        self.images.insert(sample_id.into(), resize_short_side(frame, config)?);
        Ok(())
    }

    pub fn get(&self, sample_id: &str) -> Result<&ResizedImage> {
        self.images
            .get(sample_id)
            .ok_or_else(|| Error::NotFound(format!("no image loaded for sample {sample_id}")))
    }

    pub fn eval_image(&self, sample_id: &str, config: &PreprocessConfig) -> Result<NormalizedImage> {
        let img = self.get(sample_id)?;
        img.apply(img.center(config)?, config)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

pub fn resolve(root: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

/// Stacks equally sized images into an `N x 3 x H x W` batch.
pub fn batch_tensor(images: &[NormalizedImage]) -> Result<Tensor<f32>> {
    let first = images.first().ok_or_else(|| Error::EmptyInput("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if (img.height, img.width) != (h, w) {
            return Err(Error::Shape("images in a batch differ in size".into()));
        }
        data.extend_from_slice(&img.data);
    }
    Tensor::new(vec![images.len(), 3, h, w], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

/// Patience counter over per-epoch validation accuracy. Only a strict
/// improvement resets the counter.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(f64, usize)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, accuracy: f64) -> Observation {
        let improved = self.best.is_none_or(|(b, _)| accuracy > b);
        if improved {
            self.best = Some((accuracy, epoch));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Observation {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    /// `(accuracy, epoch)` of the best epoch so far.
    pub fn best(&self) -> Option<(f64, usize)> {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    /// Rate used by the last step of the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_id: usize,
    pub best_checkpoint: PathBuf,
    pub best_val_accuracy: f64,
    pub epoch_of_best: usize,
    pub epochs: Vec<EpochLog>,
}

impl FoldResult {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<FoldResult> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn epochs_csv(epochs: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,val_accuracy,lr\n");
    for e in epochs {
        writeln!(s, "{},{},{},{}", e.epoch, e.train_loss, e.val_accuracy, e.lr).expect("string write");
    }
    s
}

/// Everything one fold needs. In leave-one-patient-out use the held-out
/// patients double as the early-stopping validation set, which makes the
/// selected checkpoint optimistic for those patients.
#[derive(Debug, Clone, Copy)]
pub struct FoldJob<'a> {
    pub fold: &'a Fold,
    pub manifest: &'a Manifest,
    pub images: &'a ImageStore,
    pub net: &'a NetConfig,
    pub train: &'a TrainConfig,
    pub preprocess: &'a PreprocessConfig,
    pub out_dir: &'a Path,
    /// Weights to start from; tensors whose name and shape match are copied,
    /// the rest keep their seeded initialisation.
    pub pretrained: Option<&'a ParameterSet>,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub result: FoldResult,
    pub best_params: ParameterSet,
    /// Held-out predictions of the best checkpoint.
    pub predictions: Vec<PredictionRecord>,
}

pub fn fold_dir(out_dir: &Path, fold_id: usize) -> PathBuf {
    out_dir.join(format!("fold_{fold_id:03}"))
}

fn fold_seed(seed: u64, fold_id: usize) -> u64 {
    seed ^ (fold_id as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn labelled<'a>(manifest: &'a Manifest, patients: &'a BTreeSet<String>, task: Task) -> Vec<(&'a SampleRecord, usize)> {
    manifest
        .for_patients(patients)
        .filter_map(|r| task.target_of(r.label).ok().map(|y| (r, y)))
        .collect()
}

pub fn train_fold(job: &FoldJob) -> Result<FoldOutcome> {
    job.train.validate()?;
    job.preprocess.validate()?;
    let task = task_for_classes(job.net.num_classes)?;
    let fold = job.fold;
    let (train_ids, val_ids) = (fold.train_set(), fold.test_set());
    let train = labelled(job.manifest, &train_ids, task);
    let val = labelled(job.manifest, &val_ids, task);
    if train.is_empty() {
        return Err(Error::Config(format!("fold {} has no training images", fold.fold_id)));
    }
    if val.is_empty() {
        return Err(Error::Config(format!("fold {} has no held-out images", fold.fold_id)));
    }

    let mut counts = vec![0u64; job.net.num_classes];
    for &(_, y) in &train {
        counts[y] += 1;
    }
    let loss = WeightedCrossEntropy::new(&class_weights(&counts)?);

    let seed = fold_seed(job.train.seed, fold.fold_id);
    let mut params = match job.pretrained {
        Some(p) => transfer_weights(p, job.net, seed)?.0,
        None => build_model(job.net, seed)?,
    };
    let mut state = AdamState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let dir = fold_dir(job.out_dir, fold.fold_id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let ckpt = dir.join("best.ckpt");

    let val_images: Vec<NormalizedImage> = val
        .iter()
        .map(|(r, _)| job.images.eval_image(&r.sample_id, job.preprocess))
        .collect::<Result<_>>()?;

    let bs = job.train.batch_size;
    let steps_per_epoch = train.len().div_ceil(bs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopper = EarlyStopping::new(job.train.early_stop_patience);
    let mut epochs = Vec::new();
    let mut best_params = params.clone();
    let mut step = 0;

    for epoch in 0..job.train.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(bs) {
            let mut imgs = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (r, y) = train[i];
                let img = job.images.get(&r.sample_id)?;
                let aug = img.draw(job.preprocess, &mut rng)?;
                imgs.push(img.apply(aug, job.preprocess)?);
                labels.push(y);
            }
            let batch = batch_tensor(&imgs)?;
            let out = gradients(&params, &batch, &labels, &loss)?;
            loss_sum += out.loss * chunk.len() as f64;
            apply_running_stats(&mut params, &out.batch_stats);
            lr = lr_at(step, steps_per_epoch, job.train);
            adamw_step(&mut params, &out.grads, &mut state, lr, job.train)?;
            step += 1;
        }
        let probs = predict_probabilities(&params, &val_images, bs)?;
        let correct = probs
            .iter()
            .zip(&val)
            .filter(|(p, (_, y))| crate::metrics::argmax(p) == *y)
            .count();
        let val_accuracy = correct as f64 / val.len() as f64;
        let train_loss = loss_sum / train.len() as f64;
        log::info!(
            "fold {} epoch {epoch}: loss {train_loss:.4} val_acc {val_accuracy:.4} lr {lr:.3e}",
            fold.fold_id
        );
        epochs.push(EpochLog {
            epoch,
            train_loss,
            val_accuracy,
            lr,
        });
        let obs = stopper.observe(epoch, val_accuracy);
        if obs.improved {
            save_checkpoint(&params, &ckpt)?;
            best_params = params.clone();
        }
        if obs.stop {
            break;
        }
    }

    let (best_val_accuracy, epoch_of_best) = stopper.best().expect("at least one epoch ran");
    let result = FoldResult {
        fold_id: fold.fold_id,
        best_checkpoint: ckpt,
        best_val_accuracy,
        epoch_of_best,
        epochs,
    };
    let csv_path = dir.join("epochs.csv");
    std::fs::write(&csv_path, epochs_csv(&result.epochs)).map_err(|e| Error::io(&csv_path, e))?;
    result.write(&dir.join("result.json"))?;

    let probs = predict_probabilities(&best_params, &val_images, bs)?;
    let predictions = val
        .iter()
        .zip(probs)
        .map(|((r, _), p)| PredictionRecord::new(r, fold.fold_id, task, p))
        .collect::<Result<_>>()?;
    Ok(FoldOutcome {
        result,
        best_params,
        predictions,
    })
}

/// Softmax probabilities of each image, evaluated in chunks of `batch_size`.
pub fn predict_probabilities(
    params: &ParameterSet,
    images: &[NormalizedImage],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let logits = forward(params, &batch_tensor(chunk)?)?;
        for i in 0..chunk.len() {
            let row: Vec<f64> = logits.row(i).iter().map(|&v| v as f64).collect();
            out.push(softmax(&row));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_arithmetic() {
        let mut s = EarlyStopping::new(3);
        let stops: Vec<bool> = [0.5, 0.6, 0.6, 0.6, 0.6]
            .iter()
            .enumerate()
            .map(|(e, &a)| s.observe(e, a).stop)
            .collect();
        assert_eq!(stops, [false, false, false, false, true]);
        assert_eq!(s.best(), Some((0.6, 1)));
    }

    #[test]
    fn monotone_run_never_stops() {
        let mut s = EarlyStopping::new(1);
        for e in 0..10 {
            let o = s.observe(e, e as f64 / 10.0);
            assert!(o.improved && !o.stop);
        }
        assert_eq!(s.best(), Some((0.9, 9)));
    }

    #[test]
    fn first_epoch_always_counts_as_improvement() {
        let mut s = EarlyStopping::new(2);
        assert!(s.observe(0, 0.0).improved);
    }

    #[test]
    fn csv_layout() {
        let csv = epochs_csv(&[EpochLog {
            epoch: 0,
            train_loss: 1.5,
            val_accuracy: 0.25,
            lr: 5e-4,
        }]);
        assert_eq!(csv, "epoch,train_loss,val_accuracy,lr\n0,1.5,0.25,0.0005\n");
    }
}
