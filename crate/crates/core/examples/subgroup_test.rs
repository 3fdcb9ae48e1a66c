//! Two-sample tests used for the gestational-age subgroup comparison.
//!
//! Small samples get the exact Mann-Whitney distribution; larger ones fall
//! back to the tie-corrected normal approximation. Welch's t-test is the
//! alternative behind `--subgroup-test welch`.

use fetalcns::metrics::{mann_whitney, welch_t};

fn main() -> fetalcns::Result<()> {
    let early = [0.1, 0.2, 0.3];
    let late = [0.7, 0.8, 0.9];
    let r = mann_whitney(&early, &late)?;
    println!(
        "{early:?} vs {late:?}: {} U = {} p = {:.4}",
        r.test_name, r.statistic, r.p_value
    );

    let a = [0.91, 0.84, 0.97, 0.88, 0.79, 0.93, 0.95];
    let b = [0.86, 0.99, 0.92, 0.90, 0.96, 0.94];
    for r in [mann_whitney(&a, &b)?, welch_t(&a, &b)?] {
        println!("{:<20} statistic {:>8.4}  p {:.4}", r.test_name, r.statistic, r.p_value);
    }

    let big_a: Vec<f64> = (0..40).map(|i| 0.5 + 0.01 * i as f64).collect();
    let big_b: Vec<f64> = (0..35).map(|i| 0.6 + 0.01 * i as f64).collect();
    let r = mann_whitney(&big_a, &big_b)?;
    println!("40 vs 35 samples: {} p = {:.4}", r.test_name, r.p_value);
    Ok(())
}
