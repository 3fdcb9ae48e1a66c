//! Frame sampling and ROI cropping on a decoded frame directory.
//!
//! Writes a 240-frame directory, samples it every 80 frames starting at
//! frame 10, crops one frame through the sidecar, and builds the manifest.
//! Real videos are listed the same way; `path` may also point at a video
//! file, which is decoded with `ffmpeg` first.

use fetalcns::imaging::Frame;
use fetalcns::ingest::{extract_frames, FrameDirectory, FrameExtractionSpec};
use fetalcns::pipeline::{ingest, IngestOptions};

fn main() -> fetalcns::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let frames = dir.path().join("frames/clip01");
    std::fs::create_dir_all(&frames).expect("frame dir");
    for i in 0..240 {
        let frame = Frame::from_fn(96, 72, 1, |x, y, _| ((x + y + i) % 256) as u8);
        frame.write_png(&FrameDirectory::frame_path_in(&frames, i))?;
    }

    let source = FrameDirectory::open(&frames)?;
    let spec = FrameExtractionSpec::new(80, 10, 200)?;
    let picked: Vec<usize> = extract_frames(&source, &spec)?.into_iter().map(|(i, _)| i).collect();
    println!("stride 80 from 10 to 200: {picked:?}");

    let list = dir.path().join("videos.jsonl");
    std::fs::write(
        &list,
        concat!(
            r#"{"video_id":"clip01","patient_id":"P01","label":"Encephalocele","#,
            r#""path":"frames/clip01","gestational_age":"22w3d","site":"demo","start_frame":10,"end_frame":200}"#,
            "\n"
        ),
    )
    .expect("video list");
    let crops = dir.path().join("crops.jsonl");
    std::fs::write(
        &crops,
        r#"{"sample_id":"clip01_f000090","x":8,"y":4,"width":64,"height":48}"#,
    )
    .expect("crops");

    let out = dir.path().join("corpus");
    let manifest = ingest(&IngestOptions {
        videos: list,
        stride: 80,
        crops: Some(crops),
        out: out.clone(),
    })?;
    for r in manifest.records() {
        let f = Frame::read_png(&out.join(&r.path))?;
        println!(
            "{} frame {:?}  {}x{}  GA {:?} days",
            r.sample_id,
            r.frame_index,
            f.width(),
            f.height(),
            r.gestational_age_days
        );
    }
    Ok(())
}
