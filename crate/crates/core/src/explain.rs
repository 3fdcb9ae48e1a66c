//! Grad-CAM heatmaps and their colour overlays.
//!
//! For class `c` with last-stage activations `A` (`K x h x w`), channel
//! weights are `alpha_k = mean_{i,j} d logit_c / d A_k[i,j]` and the raw map
//! is `relu(sum_k alpha_k A_k)`. It is upsampled bilinearly to the input
//! size and min-max normalised; a constant map becomes all zeros.
//!
//! The jet colormap is piecewise linear through the knots
//! `0: (0,0,255)`, `0.25: (0,255,255)`, `0.5: (0,255,0)`,
//! `0.75: (255,255,0)`, `1: (255,0,0)`; each channel is
//! `round(255 * c)` with halves rounded away from zero. Overlays are
//! `round((1 - alpha) * original + alpha * colour)` per channel.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{NormalizedImage, PreprocessConfig};
use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, Frame};
use crate::net::{forward_with_capture, ParameterSet, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    /// Row-major values in [0, 1].
    pub values: Vec<f64>,
    /// Spatial size of the activations the map was computed from.
    pub source_width: usize,
    pub source_height: usize,
    pub class_index: usize,
}

impl Heatmap {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn is_degenerate(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    #[default]
    Jet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlayConfig {
    pub alpha: f64,
    #[serde(default)]
    pub colormap: Colormap,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        OverlayConfig {
            alpha: 0.35,
            colormap: Colormap::Jet,
        }
    }
}

/// Heatmap from activations and their gradients (both `K x h x w`),
/// upsampled to `out_w x out_h`.
pub fn cam_from_gradients(
    activations: &Tensor<f32>,
    gradients: &Tensor<f32>,
    out_w: usize,
    out_h: usize,
    class_index: usize,
) -> Result<Heatmap> {
    let s = activations.shape();
    if s.len() != 3 || gradients.shape() != s {
        return Err(Error::Shape(format!(
            "activations {:?} and gradients {:?} must both be K x h x w",
            s,
            gradients.shape()
        )));
    }
    let (k, h, w) = (s[0], s[1], s[2]);
    let hw = h * w;
    let mut raw = vec![0.0f64; hw];
    for c in 0..k {
        let g = &gradients.data()[c * hw..(c + 1) * hw];
        let alpha = g.iter().map(|&v| v as f64).sum::<f64>() / hw as f64;
        let a = &activations.data()[c * hw..(c + 1) * hw];
        for (r, &v) in raw.iter_mut().zip(a) {
            *r += alpha * v as f64;
        }
    }
    let rect: Vec<f32> = raw.iter().map(|&v| v.max(0.0) as f32).collect();
    let up = resize_bilinear(&rect, w, h, out_w, out_h);
    let (min, max) = up.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v as f64), hi.max(v as f64))
    });
    let values = if max > min {
        up.iter().map(|&v| (v as f64 - min) / (max - min)).collect()
    } else {
        vec![0.0; out_w * out_h]
    };
    Ok(Heatmap {
        width: out_w,
        height: out_h,
        values,
        source_width: w,
        source_height: h,
        class_index,
    })
}

pub fn grad_cam(params: &ParameterSet, image: &NormalizedImage, class_index: usize) -> Result<Heatmap> {
    let k = params.config().num_classes;
    if class_index >= k {
        return Err(Error::Label(format!("class {class_index} outside 0..{k}")));
    }
    let x = Tensor::new(vec![3, image.height, image.width], image.data.clone())?;
    let cap = forward_with_capture(params, &x)?;
    let grads = cap.class_gradient(params, class_index)?;
    cam_from_gradients(
        &cap.last_conv_activations,
        &grads,
        image.width,
        image.height,
        class_index,
    )
}

const JET: [(f64, [f64; 3]); 5] = [
    (0.0, [0.0, 0.0, 1.0]),
    (0.25, [0.0, 1.0, 1.0]),
    (0.5, [0.0, 1.0, 0.0]),
    (0.75, [1.0, 1.0, 0.0]),
    (1.0, [1.0, 0.0, 0.0]),
];

pub fn jet(value: f64) -> Result<[u8; 3]> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::Range(format!("heatmap value {value} outside [0, 1]")));
    }
    let i = JET
        .iter()
        .rposition(|(t, _)| *t <= value)
        .expect("value >= 0")
        .min(JET.len() - 2);
    let (t0, c0) = JET[i];
    let (t1, c1) = JET[i + 1];
    let f = (value - t0) / (t1 - t0);
    let mut out = [0u8; 3];
    for ch in 0..3 {
        out[ch] = (255.0 * (c0[ch] + (c1[ch] - c0[ch]) * f)).round() as u8;
    }
    Ok(out)
}

pub fn colorize(heatmap: &Heatmap, config: &OverlayConfig) -> Result<Frame> {
    let Colormap::Jet = config.colormap;
    let mut data = Vec::with_capacity(heatmap.values.len() * 3);
    for &v in &heatmap.values {
        data.extend_from_slice(&jet(v)?);
    }
    Frame::new(heatmap.width, heatmap.height, 3, data)
}

pub fn overlay(original: &Frame, colorized: &Frame, alpha: f64) -> Result<Frame> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Range(format!("alpha {alpha} outside [0, 1]")));
    }
    if (original.width(), original.height()) != (colorized.width(), colorized.height()) {
        return Err(Error::Shape(format!(
            "original is {}x{}, heatmap {}x{}",
            original.width(),
            original.height(),
            colorized.width(),
            colorized.height()
        )));
    }
    let (o, c) = (original.to_rgb(), colorized.to_rgb());
    let data = o
        .as_bytes()
        .iter()
        .zip(c.as_bytes())
        .map(|(&a, &b)| ((1.0 - alpha) * a as f64 + alpha * b as f64).round() as u8)
        .collect();
    Frame::new(o.width(), o.height(), 3, data)
}

/// Undoes normalisation, rounding and clamping to 8-bit RGB.
pub fn denormalized_frame(image: &NormalizedImage, config: &PreprocessConfig) -> Result<Frame> {
    let n = image.width * image.height;
    let mut data = vec![0u8; 3 * n];
    for c in 0..3 {
        for (i, &v) in image.channel(c).iter().enumerate() {
            data[i * 3 + c] = config.denormalize(c, v).round().clamp(0.0, 255.0) as u8;
        }
    }
    Frame::new(image.width, image.height, 3, data)
}

#[derive(Debug, Clone)]
pub struct Explanation {
    pub heatmap: Heatmap,
    pub original: Frame,
    pub cam: Frame,
    pub overlay: Frame,
}

pub fn explain(
    params: &ParameterSet,
    image: &NormalizedImage,
    preprocess: &PreprocessConfig,
    class_index: usize,
    config: &OverlayConfig,
) -> Result<Explanation> {
    let heatmap = grad_cam(params, image, class_index)?;
    let original = denormalized_frame(image, preprocess)?;
    let cam = colorize(&heatmap, config)?;
    let overlay = overlay(&original, &cam, config.alpha)?;
    Ok(Explanation {
        heatmap,
        original,
        cam,
        overlay,
    })
}

/// Writes `<sample_id>.orig.png`, `<sample_id>.cam.png` and
/// `<sample_id>.overlay.png` into `dir`.
pub fn write_triptych(dir: &Path, sample_id: &str, e: &Explanation) -> Result<[PathBuf; 3]> {
    std::fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
    let paths = ["orig", "cam", "overlay"].map(|kind| dir.join(format!("{sample_id}.{kind}.png")));
    e.original.write_png(&paths[0])?;
    e.cam.write_png(&paths[1])?;
    e.overlay.write_png(&paths[2])?;
    Ok(paths)
}
