//! Trains a small network on synthetic images, then renders Grad-CAM
//! heatmaps and overlays for held-out images and reports how much of the
//! heat lands on the class-defining blob.
//!
//! ```text
//! cargo run --release --example grad_cam -- [out_dir]
//! ```

use std::path::PathBuf;

use fetalcns::corpus::{Fold, PreprocessConfig};
use fetalcns::explain::{explain, write_triptych, OverlayConfig};
use fetalcns::net::NetConfig;
use fetalcns::synth::{generate, Blob, SynthConfig};
use fetalcns::trainer::{train_fold, FoldJob, ImageStore, TrainConfig};

fn main() -> fetalcns::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/grad-cam-demo".into()));
    let corpus = out.join("corpus");
    let manifest = generate(
        &SynthConfig {
            patients: 20,
            images_per_patient: 30,
            ..SynthConfig::default()
        },
        &corpus,
    )?;
    let preprocess = PreprocessConfig {
        target_size: 64,
        ..PreprocessConfig::default()
    };
    let patients = manifest.patients();
    // fifteen patients (three per class) train, the last five are held out
    let fold = Fold {
        fold_id: 0,
        train_patient_ids: patients[..15].to_vec(),
        test_patient_ids: patients[15..].to_vec(),
    };
    let images = ImageStore::load(&manifest, &corpus, &preprocess)?;
    let net = NetConfig::desk(5).without_stem_pool();
    let train = TrainConfig {
        max_epochs: 15,
        early_stop_patience: 5,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let outcome = train_fold(&FoldJob {
        fold: &fold,
        manifest: &manifest,
        images: &images,
        net: &net,
        train: &train,
        preprocess: &preprocess,
        out_dir: &out.join("run"),
        pretrained: None,
    })?;
    println!("held-out accuracy {:.3}", outcome.result.best_val_accuracy);

    let overlay = OverlayConfig::default();
    let (mut inside_sum, mut outside_sum, mut n) = (0.0, 0.0, 0);
    for record in manifest
        .records()
        .iter()
        .filter(|r| fold.test_set().contains(&r.patient_id))
    {
        let image = images.eval_image(&record.sample_id, &preprocess)?;
        let e = explain(
            &outcome.best_params,
            &image,
            &preprocess,
            record.label.index(),
            &overlay,
        )?;
        let blob = Blob::from_record(record)?;
        let mask = blob.eval_mask(80, 80, &preprocess);
        let (mut si, mut ni, mut so, mut no) = (0.0, 0, 0.0, 0);
        for (v, inside) in e.heatmap.values.iter().zip(&mask) {
            if *inside {
                si += v;
                ni += 1;
            } else {
                so += v;
                no += 1;
            }
        }
        inside_sum += si / ni as f64;
        outside_sum += so / no as f64;
        n += 1;
        if record.sample_id.ends_with("_000") {
            let paths = write_triptych(&out.join("cams"), &record.sample_id, &e)?;
            println!("{} ({}): {}", record.sample_id, record.label, paths[2].display());
        }
    }
    let (inside, outside) = (inside_sum / n as f64, outside_sum / n as f64);
    println!(
        "mean heat inside blob {inside:.3}, outside {outside:.3}, ratio {:.2}",
        inside / outside
    );
    Ok(())
}
