//! Synthetic ultrasound-like corpus with geometric class signatures.
//!
//! Each image is a speckled dark background with one bright blob placed at
//! a random position. Blobs have roughly equal bright area and differ only
//! in their internal structure, so the class evidence lies inside the blob
//! and horizontal flips keep the label valid.
//!
//! | class             | radii (x, y) as image fractions | dark ring | bright core |
//! |-------------------|---------------------------------|-----------|-------------|
//! | Anencephaly       | 0.12, 0.12                      |           |             |
//! | Encephalocele     | 0.16, 0.16                      | 0 - 0.6   |             |
//! | Holoprosencephaly | 0.20, 0.07                      |           |             |
//! | Rachischisis      | 0.07, 0.20                      |           |             |
//! | Normal            | 0.16, 0.16                      | 0.3 - 0.6 | 0 - 0.3     |
//!
//! Ring and core radii are fractions of the blob radius.
//! Patients are assigned classes round-robin in label order. Gain,
//! background level and noise strength are drawn per image around a
//! patient-specific centre, so image style identifies neither the patient
//! nor the class.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::preprocess::short_side_dims;
use crate::corpus::{AnomalyLabel, PlaneKind, PreprocessConfig};
use crate::error::{Error, Result};
use crate::imaging::Frame;
use crate::ingest::{build_manifest, Manifest, SampleRecord, SampleSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub patients: usize,
    pub images_per_patient: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            patients: 20,
            images_per_patient: 30,
            seed: 7,
            width: 80,
            height: 80,
        }
    }
}

/// Blob ellipse in source-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Blob {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }

    /// Blob membership of each pixel of the evaluation crop of a
    /// `width x height` source image, row-major `target x target`.
    pub fn eval_mask(&self, width: usize, height: usize, config: &PreprocessConfig) -> Vec<bool> {
        let (rw, rh) = short_side_dims(width, height, config.resize_size());
        let t = config.target_size;
        let (ox, oy) = ((rw.saturating_sub(t)) / 2, (rh.saturating_sub(t)) / 2);
        let (sx, sy) = (width as f64 / rw as f64, height as f64 / rh as f64);
        let mut mask = Vec::with_capacity(t * t);
        for y in 0..t {
            for x in 0..t {
                let src_x = ((x + ox) as f64 + 0.5) * sx - 0.5;
                let src_y = ((y + oy) as f64 + 0.5) * sy - 0.5;
                mask.push(self.contains(src_x, src_y));
            }
        }
        mask
    }

    pub fn from_record(record: &SampleRecord) -> Result<Blob> {
        let v = record
            .extra
            .get("blob")
            .ok_or_else(|| Error::NotFound(format!("{} has no blob annotation", record.sample_id)))?;
        Ok(serde_json::from_value(v.clone())?)
    }
}

/// Blob geometry of a class; see the module table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobShape {
    pub rx: f64,
    pub ry: f64,
    /// Outer radius of the dark centre relative to the blob; 0 when solid.
    pub hole: f64,
    /// Radius of a bright dot inside the dark centre; 0 when absent.
    pub core: f64,
}

pub fn class_shape(label: AnomalyLabel) -> BlobShape {
    let (rx, ry, hole, core) = match label {
        AnomalyLabel::Anencephaly => (0.12, 0.12, 0.0, 0.0),
        AnomalyLabel::Encephalocele => (0.16, 0.16, 0.6, 0.0),
        AnomalyLabel::Holoprosencephaly => (0.20, 0.07, 0.0, 0.0),
        AnomalyLabel::Rachischisis => (0.07, 0.20, 0.0, 0.0),
        AnomalyLabel::Normal => (0.16, 0.16, 0.6, 0.3),
    };
    BlobShape { rx, ry, hole, core }
}

struct PatientStyle {
    background: f64,
    gain: f64,
    noise: f64,
}

impl PatientStyle {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        PatientStyle {
            background: rng.random_range(40.0..50.0),
            gain: rng.random_range(125.0..145.0),
            noise: rng.random_range(0.25..0.3),
        }
    }

    /// Per-image variation around the patient's centre.
    fn jitter(&self, rng: &mut ChaCha8Rng) -> Self {
        PatientStyle {
            background: self.background + rng.random_range(-10.0..10.0),
            gain: self.gain + rng.random_range(-20.0..20.0),
            noise: self.noise + rng.random_range(-0.05..0.05),
        }
    }
}

fn render(label: AnomalyLabel, style: &PatientStyle, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Frame, Blob) {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let shape = class_shape(label);
    let scale = rng.random_range(0.85..1.15);
    let blob = Blob {
        cx: rng.random_range(0.3..0.7) * w,
        cy: rng.random_range(0.3..0.7) * h,
        rx: shape.rx * scale * w,
        ry: shape.ry * scale * h,
    };
    let speckle = Normal::new(1.0, style.noise).expect("positive std");
    let mut data = Vec::with_capacity(cfg.width * cfg.height);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let dx = (x as f64 - blob.cx) / blob.rx;
            let dy = (y as f64 - blob.cy) / blob.ry;
            let d = (dx * dx + dy * dy).sqrt();
            // smooth edges 20% of the radius wide
            let mut inside = ((1.1 - d) / 0.2).clamp(0.0, 1.0);
            if shape.hole > 0.0 {
                inside *= ((d - shape.hole + 0.1) / 0.2).clamp(0.0, 1.0);
            }
            if shape.core > 0.0 {
                inside = inside.max(((shape.core + 0.1 - d) / 0.2).clamp(0.0, 1.0));
            }
            let level = style.background + inside * style.gain;
            let v = level * speckle.sample(rng).max(0.0);
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    (Frame::new(cfg.width, cfg.height, 1, data).expect("sized buffer"), blob)
}

/// Writes `images/<sample_id>.png` and `manifest.jsonl` under `out`.
pub fn generate(cfg: &SynthConfig, out: &Path) -> Result<Manifest> {
    if cfg.patients == 0 || cfg.images_per_patient == 0 {
        return Err(Error::Config(
            "need at least one patient and one image per patient".into(),
        ));
    }
    if cfg.width < 16 || cfg.height < 16 {
        return Err(Error::Config("synthetic images must be at least 16x16".into()));
    }
    let images = out.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::new();
    for p in 0..cfg.patients {
        let mut rng = ChaCha8Rng::seed_from_u64(master.random());
        let label = AnomalyLabel::ALL[p % AnomalyLabel::ALL.len()];
        let style = PatientStyle::draw(&mut rng);
        let patient_id = format!("P{p:03}");
        let ga: u32 = rng.random_range(98..280);
        for i in 0..cfg.images_per_patient {
            let image_style = style.jitter(&mut rng);
            let (frame, blob) = render(label, &image_style, cfg, &mut rng);
            let sample_id = format!("{patient_id}_{i:03}");
            let rel = format!("images/{sample_id}.png");
            frame.write_png(&out.join(&rel))?;
            let mut extra = serde_json::Map::new();
            extra.insert("blob".into(), serde_json::to_value(blob)?);
            records.push(SampleRecord {
                sample_id,
                patient_id: patient_id.clone(),
                path: rel,
                label,
                plane: (label == AnomalyLabel::Normal).then_some(PlaneKind::ThalamicTransverse),
                gestational_age_days: Some(ga),
                source: SampleSource::Still,
                video_id: None,
                frame_index: None,
                site: "synthetic".into(),
                extra,
            });
        }
    }
    let manifest = build_manifest(records)?;
    manifest.write(&out.join("manifest.jsonl"))?;
    Ok(manifest)
}
