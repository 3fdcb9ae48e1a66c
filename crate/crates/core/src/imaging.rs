//! Pixel buffers, PNG I/O and the bilinear resampler shared by preprocessing
//! and heatmap upsampling.
//!
//! Resampling uses half-pixel centers without corner alignment and without
//! antialiasing. For an output coordinate `x` in `0..out_w`:
//!
//! ```text
//! sx = max((x + 0.5) * in_w / out_w - 0.5, 0)
//! x0 = floor(sx), x1 = min(x0 + 1, in_w - 1), fx = sx - x0
//! ```
//!
//! and likewise for `y`; the value is the usual two-step linear blend,
//! evaluated in `f64`, first along x then along y.

use std::path::Path;

use crate::error::{Error, Result};

/// An 8-bit image with 1 (gray) or 3 (RGB) interleaved channels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "buffer of {} bytes does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Frame {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Frame {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Gray frames are replicated into three identical channels.
    pub fn to_rgb(&self) -> Frame {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Frame {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Channel `c` as a row-major `f32` plane of raw 0..=255 values.
    pub fn plane(&self, c: usize) -> Vec<f32> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .map(|&v| v as f32)
            .collect()
    }

    pub fn read_png(path: &Path) -> Result<Frame> {
        let img = image::open(path)?;
        let frame = match img {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                Frame::new(w as usize, h as usize, 1, g.into_raw())?
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                Frame::new(w as usize, h as usize, 3, rgb.into_raw())?
            }
        };
        Ok(frame)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer(path, &self.data, self.width as u32, self.height as u32, color)?;
        Ok(())
    }
}

/// Bilinear resample of a single row-major plane (see module docs).
pub fn resize_bilinear(src: &[f32], in_w: usize, in_h: usize, out_w: usize, out_h: usize) -> Vec<f32> {
    assert_eq!(src.len(), in_w * in_h, "plane size mismatch");
    let xs = sample_positions(in_w, out_w);
    let ys = sample_positions(in_h, out_h);
    let mut out = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        let row0 = &src[y0 * in_w..(y0 + 1) * in_w];
        let row1 = &src[y1 * in_w..(y1 + 1) * in_w];
        for &(x0, x1, fx) in &xs {
            let top = row0[x0] as f64 * (1.0 - fx) + row0[x1] as f64 * fx;
            let bottom = row1[x0] as f64 * (1.0 - fx) + row1[x1] as f64 * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    out
}

fn sample_positions(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Round half up, the rounding used for every derived pixel size.
pub fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor().max(0.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize_is_exact() {
        let src: Vec<f32> = (0..12).map(|v| v as f32 * 3.5).collect();
        assert_eq!(resize_bilinear(&src, 4, 3, 4, 3), src);
    }

    #[test]
    fn upsample_matches_half_pixel_definition() {
        // 2 -> 4: positions -0.25(clamped 0), 0.25, 0.75, 1.25(clamped to last)
        let out = resize_bilinear(&[0.0, 10.0], 2, 1, 4, 1);
        assert_eq!(out, vec![0.0, 2.5, 7.5, 10.0]);
    }

    #[test]
    fn gray_replicates_to_rgb() {
        let f = Frame::new(2, 1, 1, vec![7, 9]).unwrap();
        assert_eq!(f.to_rgb().as_bytes(), &[7, 7, 7, 9, 9, 9]);
    }

    #[test]
    fn rounding() {
        assert_eq!(round_half_up(224.0 * 1.143), 256);
        assert_eq!(round_half_up(341.333), 341);
        assert_eq!(round_half_up(2.5), 3);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = Frame::from_fn(5, 4, 3, |x, y, c| (x * 40 + y * 7 + c) as u8);
        let p = dir.path().join("a/b.png");
        f.write_png(&p).unwrap();
        assert_eq!(Frame::read_png(&p).unwrap(), f);
        let g = Frame::from_fn(3, 3, 1, |x, y, _| (x + y * 3) as u8);
        g.write_png(&p).unwrap();
        assert_eq!(Frame::read_png(&p).unwrap(), g);
    }
}
