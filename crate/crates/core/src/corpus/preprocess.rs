//! Train and evaluation image pipelines.
//!
//! Both pipelines resize the short side to `round_half_up(target_size *
//! val_resize_factor)` (256 for the defaults) with the resampler in
//! [`crate::imaging`], then cut a `target_size` square: a uniformly random
//! window (plus optional horizontal flip) for training, the centered window
//! for evaluation. The centered window starts at `floor((len - target) / 2)`.
//! Channels are normalized as `(v / 255 - mean[c]) / std[c]`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, round_half_up, Frame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub target_size: usize,
    pub val_resize_factor: f64,
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub hflip_probability: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_size: 224,
            val_resize_factor: 1.143,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
            hflip_probability: 0.5,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_size == 0 {
            return Err(Error::Config("target_size must be at least 1".into()));
        }
        if self.std.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(Error::Config("std components must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.hflip_probability) {
            return Err(Error::Config("hflip_probability must lie in [0, 1]".into()));
        }
        if self.val_resize_factor <= 0.0 || !self.val_resize_factor.is_finite() {
            return Err(Error::Config("val_resize_factor must be positive".into()));
        }
        Ok(())
    }

    /// Short-side length before cropping.
    pub fn resize_size(&self) -> usize {
        round_half_up(self.target_size as f64 * self.val_resize_factor)
    }

    /// Reads a config file; a missing path yields the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => PreprocessConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text)?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn normalize(&self, channel: usize, raw: f32) -> f32 {
        ((raw as f64 / 255.0 - self.mean[channel]) / self.std[channel]) as f32
    }

    pub fn denormalize(&self, channel: usize, value: f32) -> f32 {
        ((value as f64 * self.std[channel] + self.mean[channel]) * 255.0) as f32
    }
}

/// A 3-channel CHW float image.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl NormalizedImage {
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// An RGB image whose short side has been resized, still in raw 0..=255 units.
#[derive(Debug, Clone)]
pub struct ResizedImage {
    pub width: usize,
    pub height: usize,
    planes: [Vec<f32>; 3],
}

/// Crop window and flip for one training draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augmentation {
    pub crop_x: usize,
    pub crop_y: usize,
    pub flip: bool,
}

/// Output size of the short-side resize for a `w x h` input.
pub fn short_side_dims(width: usize, height: usize, short: usize) -> (usize, usize) {
    if width <= height {
        (short, round_half_up(height as f64 * short as f64 / width as f64))
    } else {
        (round_half_up(width as f64 * short as f64 / height as f64), short)
    }
}

pub fn resize_short_side(frame: &Frame, config: &PreprocessConfig) -> Result<ResizedImage> {
    if frame.width() == 0 || frame.height() == 0 {
        return Err(Error::Preprocess("image is empty".into()));
    }
    let rgb = frame.to_rgb();
    let (w, h) = short_side_dims(frame.width(), frame.height(), config.resize_size());
    let plane = |c| resize_bilinear(&rgb.plane(c), rgb.width(), rgb.height(), w, h);
    Ok(ResizedImage {
        width: w,
        height: h,
        planes: [plane(0), plane(1), plane(2)],
    })
}

impl ResizedImage {
    fn check_fits(&self, target: usize) -> Result<()> {
        if self.width < target || self.height < target {
            return Err(Error::Preprocess(format!(
                "resized image {}x{} is smaller than the {target}x{target} crop",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn center(&self, config: &PreprocessConfig) -> Result<Augmentation> {
        let t = config.target_size;
        self.check_fits(t)?;
        Ok(Augmentation {
            crop_x: (self.width - t) / 2,
            crop_y: (self.height - t) / 2,
            flip: false,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, config: &PreprocessConfig, rng: &mut R) -> Result<Augmentation> {
        let t = config.target_size;
        self.check_fits(t)?;
        let crop_x = rng.random_range(0..=self.width - t);
        let crop_y = rng.random_range(0..=self.height - t);
        let flip = rng.random::<f64>() < config.hflip_probability;
        Ok(Augmentation { crop_x, crop_y, flip })
    }

    pub fn apply(&self, aug: Augmentation, config: &PreprocessConfig) -> Result<NormalizedImage> {
        let t = config.target_size;
        self.check_fits(t)?;
        if aug.crop_x + t > self.width || aug.crop_y + t > self.height {
            return Err(Error::Preprocess("crop window outside the resized image".into()));
        }
        let mut data = Vec::with_capacity(3 * t * t);
        for (c, plane) in self.planes.iter().enumerate() {
            for y in 0..t {
                let row = &plane[(aug.crop_y + y) * self.width..][..self.width];
                for x in 0..t {
                    let sx = if aug.flip {
                        aug.crop_x + t - 1 - x
                    } else {
                        aug.crop_x + x
                    };
                    data.push(config.normalize(c, row[sx]));
                }
            }
        }
        Ok(NormalizedImage {
            height: t,
            width: t,
            data,
        })
    }
}

pub fn train_transform<R: Rng + ?Sized>(
    frame: &Frame,
    config: &PreprocessConfig,
    rng: &mut R,
) -> Result<NormalizedImage> {
    let resized = resize_short_side(frame, config)?;
    let aug = resized.draw(config, rng)?;
    resized.apply(aug, config)
}

pub fn eval_transform(frame: &Frame, config: &PreprocessConfig) -> Result<NormalizedImage> {
    let resized = resize_short_side(frame, config)?;
    let aug = resized.center(config)?;
    resized.apply(aug, config)
}
