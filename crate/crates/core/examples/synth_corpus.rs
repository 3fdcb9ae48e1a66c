//! Writes the synthetic corpus used by the end-to-end tests.
//!
//! ```text
//! cargo run --example synth_corpus -- [out_dir] [patients] [images_per_patient] [seed]
//! ```

use std::path::PathBuf;

use fetalcns::pipeline::synth;
use fetalcns::synth::{class_shape, SynthConfig};

fn main() -> fetalcns::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/synth-demo".into()));
    let mut cfg = SynthConfig::default();
    if let Some(p) = args.next() {
        cfg.patients = p.parse().expect("patients");
    }
    if let Some(n) = args.next() {
        cfg.images_per_patient = n.parse().expect("images per patient");
    }
    if let Some(s) = args.next() {
        cfg.seed = s.parse().expect("seed");
    }
    let manifest = synth(&cfg, &out)?;
    println!(
        "{} images, {} patients in {}",
        manifest.len(),
        manifest.patient_count(),
        out.display()
    );
    for (label, n) in manifest.label_counts() {
        let s = class_shape(*label);
        println!(
            "  {:<18} {n:>4} images  radii {:.2} x {:.2}, dark centre {:.1}, bright core {:.1}",
            label.name(),
            s.rx,
            s.ry,
            s.hole,
            s.core
        );
    }
    Ok(())
}
