//! Builds a seeded network, saves it, reloads it and checks the round trip
//! is bit-exact, then runs one forward pass with the reloaded weights.

use fetalcns::net::{build_model, forward, load_checkpoint, save_checkpoint, NetConfig, Tensor};

fn main() -> fetalcns::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("desk.ckpt");
    let config = NetConfig::desk(5);
    let params = build_model(&config, 42)?;
    save_checkpoint(&params, &path)?;
    let size = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!(
        "saved {} tensors ({} trainable) in {size} bytes",
        params.len(),
        params.trainable_count()
    );

    let (loaded, loaded_config) = load_checkpoint(&path)?;
    assert_eq!(loaded_config, config);
    let identical = params.iter().zip(loaded.iter()).all(|((na, a), (nb, b))| {
        na == nb && a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    println!("bit-exact round trip: {identical}");

    let x = Tensor::new(
        vec![1, 3, 64, 64],
        (0..3 * 64 * 64).map(|i| ((i % 17) as f32 - 8.0) / 8.0).collect(),
    )?;
    let logits = forward(&loaded, &x)?;
    println!("logits {:?}", logits.row(0));
    Ok(())
}
