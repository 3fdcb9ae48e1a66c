//! Class weights for an imbalanced corpus, the warmup plus cosine learning
//! rate, and the effect of one weighted cross-entropy evaluation.

use fetalcns::trainer::{class_weights, lr_at, TrainConfig, WeightedCrossEntropy};

fn main() -> fetalcns::Result<()> {
    let counts = [100, 50, 25, 25];
    let w = class_weights(&counts)?;
    println!("counts {counts:?} -> weights {:?}", w.weights);

    let cfg = TrainConfig {
        max_epochs: 11,
        ..TrainConfig::default()
    };
    let steps_per_epoch = 100;
    println!("\nstep      lr");
    for step in [0, 49, 99, 100, 350, 600, 850, 1099] {
        println!("{step:>4}  {:.3e}", lr_at(step, steps_per_epoch, &cfg));
    }

    let loss = WeightedCrossEntropy::new(&w);
    let logits = [2.0, 0.5, 0.1, -1.0, 0.3, 1.5, 0.2, 0.0];
    for labels in [[0, 1], [3, 3]] {
        println!("\nlabels {labels:?}: weighted CE {:.4}", loss.loss(&logits, &labels)?);
    }
    Ok(())
}
