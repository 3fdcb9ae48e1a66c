//! Video frame sampling, ROI cropping and the sample manifest.
//!
//! Video decoding is delegated to `ffmpeg`; everything downstream consumes
//! decoded frame directories laid out as `frames/<video_id>/<index:06>.png`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnomalyLabel, PlaneKind};
use crate::error::{Error, Result};
use crate::imaging::Frame;

/// Which decoded frames of a video become samples. Bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameExtractionSpec {
    pub stride: usize,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl FrameExtractionSpec {
    pub const DEFAULT_STRIDE: usize = 80;

    pub fn new(stride: usize, start_frame: usize, end_frame: usize) -> Result<Self> {
        let spec = FrameExtractionSpec {
            stride,
            start_frame,
            end_frame,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Whole video at the default stride.
    pub fn whole(frame_count: usize) -> Result<Self> {
        if frame_count == 0 {
            return Err(Error::EmptyInput("video has no frames".into()));
        }
        Self::new(Self::DEFAULT_STRIDE, 0, frame_count - 1)
    }

    fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("frame stride must be at least 1".into()));
        }
        if self.end_frame < self.start_frame {
            return Err(Error::Range(format!(
                "end_frame {} precedes start_frame {}",
                self.end_frame, self.start_frame
            )));
        }
        Ok(())
    }

    /// `start, start + stride, ...` up to and including `end_frame`.
    pub fn indices(&self, frame_count: usize) -> Result<Vec<usize>> {
        self.validate()?;
        if frame_count == 0 {
            return Err(Error::EmptyInput("video has no frames".into()));
        }
        if self.end_frame >= frame_count {
            return Err(Error::Range(format!(
                "end_frame {} out of range for a {frame_count}-frame video",
                self.end_frame
            )));
        }
        Ok((self.start_frame..=self.end_frame).step_by(self.stride).collect())
    }
}

/// Random access to a decoded frame sequence.
pub trait FrameSource {
    fn frame_count(&self) -> usize;
    fn frame(&self, index: usize) -> Result<Frame>;
}

impl FrameSource for [Frame] {
    fn frame_count(&self) -> usize {
        self.len()
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        self.get(index)
            .cloned()
            .ok_or_else(|| Error::Range(format!("frame {index} out of range")))
    }
}

impl FrameSource for Vec<Frame> {
    fn frame_count(&self) -> usize {
        self.len()
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        self.as_slice().frame(index)
    }
}

/// A directory of `<index:06>.png` files with contiguous indices from 0.
#[derive(Debug, Clone)]
pub struct FrameDirectory {
    dir: PathBuf,
    count: usize,
}

impl FrameDirectory {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let mut count = 0;
        while Self::frame_path_in(&dir, count).is_file() {
            count += 1;
        }
        Ok(FrameDirectory { dir, count })
    }

    pub fn frame_path_in(dir: &Path, index: usize) -> PathBuf {
        dir.join(format!("{index:06}.png"))
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }
}

impl FrameSource for FrameDirectory {
    fn frame_count(&self) -> usize {
        self.count
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        if index >= self.count {
            return Err(Error::Range(format!("frame {index} out of range")));
        }
        Frame::read_png(&Self::frame_path_in(&self.dir, index))
    }
}

/// Decodes `video` into `out_dir` with `ffmpeg`, one PNG per decoded frame.
pub fn decode_video(video: &Path, out_dir: &Path) -> Result<FrameDirectory> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let status = Command::new("ffmpeg")
        .arg("-loglevel")
        .arg("error")
        .arg("-i")
        .arg(video)
        .args(["-vsync", "0", "-start_number", "0"])
        .arg(out_dir.join("%06d.png"))
        .status()
        .map_err(|e| Error::External(format!("could not run ffmpeg: {e}")))?;
    if !status.success() {
        return Err(Error::External(format!(
            "ffmpeg exited with {status} on {}",
            video.display()
        )));
    }
    FrameDirectory::open(out_dir)
}

pub fn extract_frames<S: FrameSource + ?Sized>(video: &S, spec: &FrameExtractionSpec) -> Result<Vec<(usize, Frame)>> {
    spec.indices(video.frame_count())?
        .into_iter()
        .map(|i| Ok((i, video.frame(i)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl CropRect {
    pub fn full(frame: &Frame) -> Self {
        CropRect {
            x: 0,
            y: 0,
            width: frame.width(),
            height: frame.height(),
        }
    }
}

pub fn crop_roi(frame: &Frame, rect: &CropRect) -> Result<Frame> {
    if rect.width == 0 || rect.height == 0 {
        return Err(Error::Range("crop rectangle must be at least 1x1".into()));
    }
    if rect.x + rect.width > frame.width() || rect.y + rect.height > frame.height() {
        return Err(Error::Range(format!(
            "crop ({}, {}, {}, {}) exceeds {}x{} image",
            rect.x,
            rect.y,
            rect.width,
            rect.height,
            frame.width(),
            frame.height()
        )));
    }
    Ok(Frame::from_fn(rect.width, rect.height, frame.channels(), |x, y, c| {
        frame.pixel(rect.x + x, rect.y + y, c)
    }))
}

/// One line of the crop sidecar file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropEntry {
    pub sample_id: String,
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl CropEntry {
    pub fn rect(&self) -> CropRect {
        CropRect {
            x: self.x,
            y: self.y,
            width: self.width,
            height: self.height,
        }
    }
}

pub fn read_crop_sidecar(path: &Path) -> Result<HashMap<String, CropRect>> {
    let entries: Vec<CropEntry> = read_jsonl(path)?;
    Ok(entries.into_iter().map(|e| (e.sample_id.clone(), e.rect())).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Still,
    VideoFrame,
}

/// One image of the corpus. Fields not listed here survive a read/write
/// round trip through `extra`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub patient_id: String,
    pub path: String,
    pub label: AnomalyLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plane: Option<PlaneKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gestational_age_days: Option<u32>,
    pub source: SampleSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<usize>,
    pub site: String,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// Validated records in canonical `sample_id` order, with counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    records: Vec<SampleRecord>,
    label_counts: BTreeMap<AnomalyLabel, usize>,
    patient_counts: BTreeMap<String, usize>,
}

impl Manifest {
    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn label_counts(&self) -> &BTreeMap<AnomalyLabel, usize> {
        &self.label_counts
    }

    /// Images per patient.
    pub fn patient_counts(&self) -> &BTreeMap<String, usize> {
        &self.patient_counts
    }

    pub fn patient_count(&self) -> usize {
        self.patient_counts.len()
    }

    pub fn patients(&self) -> Vec<String> {
        self.patient_counts.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.records
            .binary_search_by(|r| r.sample_id.as_str().cmp(sample_id))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn for_patients<'a>(&'a self, patients: &'a BTreeSet<String>) -> impl Iterator<Item = &'a SampleRecord> + 'a {
        self.records.iter().filter(move |r| patients.contains(&r.patient_id))
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        build_manifest(read_jsonl(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.records)
    }
}

pub fn build_manifest(mut records: Vec<SampleRecord>) -> Result<Manifest> {
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));

    let duplicates: BTreeSet<&str> = records
        .windows(2)
        .filter(|w| w[0].sample_id == w[1].sample_id)
        .map(|w| w[0].sample_id.as_str())
        .collect();
    if !duplicates.is_empty() {
        let list: Vec<_> = duplicates.into_iter().collect();
        return Err(Error::Validation(format!("duplicate sample_id: {}", list.join(", "))));
    }

    for r in &records {
        if r.source == SampleSource::VideoFrame && (r.video_id.is_none() || r.frame_index.is_none()) {
            return Err(Error::Validation(format!(
                "sample {} is a video frame but lacks video_id or frame_index",
                r.sample_id
            )));
        }
        if r.patient_id.is_empty() {
            return Err(Error::Validation(format!(
                "sample {} has an empty patient_id",
                r.sample_id
            )));
        }
    }

    let mut label_counts = BTreeMap::new();
    let mut patient_counts = BTreeMap::new();
    for r in &records {
        *label_counts.entry(r.label).or_insert(0) += 1;
        *patient_counts.entry(r.patient_id.clone()).or_insert(0) += 1;
    }
    Ok(Manifest {
        records,
        label_counts,
        patient_counts,
    })
}

/// Parses `"<weeks>w<days>d"` or `"<weeks>w"` into days.
pub fn parse_gestational_age(text: &str) -> Result<u32> {
    let malformed = || Error::Parse(format!("malformed gestational age {text:?}"));
    let t = text.trim();
    let (weeks, rest) = t.split_once('w').ok_or_else(malformed)?;
    let weeks: u32 = parse_digits(weeks).ok_or_else(malformed)?;
    let days = if rest.is_empty() {
        0
    } else {
        let d = rest.strip_suffix('d').ok_or_else(malformed)?;
        let d = parse_digits(d).ok_or_else(malformed)?;
        if d > 6 {
            return Err(Error::Parse(format!(
                "gestational age {text:?} has {d} days; expected 0-6"
            )));
        }
        d
    };
    Ok(weeks * 7 + days)
}

fn parse_digits(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item =
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for item in items {
        serde_json::to_writer(&mut file, item)?;
        file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    file.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
