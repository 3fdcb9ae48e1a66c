//! Class-balanced weighted cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `weights[i] = total_samples / (num_classes * class_counts[i])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeightVector {
    pub total_samples: u64,
    pub num_classes: usize,
    pub class_counts: Vec<u64>,
    pub weights: Vec<f64>,
}

pub fn class_weights(class_counts: &[u64]) -> Result<ClassWeightVector> {
    if class_counts.is_empty() {
        return Err(Error::EmptyInput("no classes".into()));
    }
    if let Some(class) = class_counts.iter().position(|&c| c == 0) {
        return Err(Error::DegenerateClass { class });
    }
    let total: u64 = class_counts.iter().sum();
    let k = class_counts.len();
    let weights = class_counts
        .iter()
        .map(|&c| total as f64 / (k as f64 * c as f64))
        .collect();
    Ok(ClassWeightVector {
        total_samples: total,
        num_classes: k,
        class_counts: class_counts.to_vec(),
        weights,
    })
}

impl ClassWeightVector {
    /// Uniform weights of one; plain mean cross-entropy.
    pub fn uniform(num_classes: usize) -> Self {
        ClassWeightVector {
            total_samples: num_classes as u64,
            num_classes,
            class_counts: vec![1; num_classes],
            weights: vec![1.0; num_classes],
        }
    }

    /// Weight `i` as a reduced fraction `(numerator, denominator)`.
    pub fn exact_weight(&self, i: usize) -> (u128, u128) {
        let num = self.total_samples as u128;
        let den = self.num_classes as u128 * self.class_counts[i] as u128;
        let g = gcd(num, den);
        (num / g, den / g)
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Weighted mean of per-sample cross-entropy:
/// `sum_n w[y_n] * ce_n / sum_n w[y_n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCrossEntropy {
    weights: Vec<f64>,
}

impl WeightedCrossEntropy {
    pub fn new(weights: &ClassWeightVector) -> Self {
        WeightedCrossEntropy {
            weights: weights.weights.clone(),
        }
    }

    pub fn from_weights(weights: Vec<f64>) -> Self {
        WeightedCrossEntropy { weights }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    /// Loss and its gradient with respect to the `n x c` row-major logits.
    /// A batch whose weights sum to zero has loss zero and zero gradient.
    pub fn loss_and_grad(&self, logits: &[f64], labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        let c = self.weights.len();
        let n = labels.len();
        if logits.len() != n * c {
            return Err(Error::Shape(format!(
                "{} logits for {n} samples of {c} classes",
                logits.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Label(format!("label {bad} outside 0..{c}")));
        }
        let total_weight: f64 = labels.iter().map(|&y| self.weights[y]).sum();
        let mut grad = vec![0.0; n * c];
        if total_weight == 0.0 {
            return Ok((0.0, grad));
        }
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = &logits[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let log_z = max + sum_exp.ln();
            let w = self.weights[y] / total_weight;
            loss += w * (log_z - row[y]);
            for (j, g) in grad[i * c..(i + 1) * c].iter_mut().enumerate() {
                let p = (row[j] - log_z).exp();
                *g = w * (p - if j == y { 1.0 } else { 0.0 });
            }
        }
        Ok((loss, grad))
    }

    pub fn loss(&self, logits: &[f64], labels: &[usize]) -> Result<f64> {
        self.loss_and_grad(logits, labels).map(|(l, _)| l)
    }
}

pub fn weighted_cross_entropy(logits: &[f64], labels: &[usize], weights: &ClassWeightVector) -> Result<f64> {
    WeightedCrossEntropy::new(weights).loss(logits, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn weight_examples() {
        assert_eq!(class_weights(&[50, 50, 50, 50]).unwrap().weights, vec![1.0; 4]);
        assert_eq!(
            class_weights(&[100, 50, 25, 25]).unwrap().weights,
            vec![0.5, 1.0, 2.0, 2.0]
        );
        assert!(matches!(
            class_weights(&[10, 0, 10, 10]),
            Err(Error::DegenerateClass { class: 1 })
        ));
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let w = class_weights(&[3, 1, 7, 2]).unwrap();
        for y in 0..4 {
            let l = weighted_cross_entropy(&[0.3; 4], &[y], &w).unwrap();
            assert!((l - 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let w = ClassWeightVector::uniform(3);
        let l = weighted_cross_entropy(&[60.0, 0.0, 0.0], &[0], &w).unwrap();
        assert!(l < 1e-20);
    }

    #[test]
    fn weighted_mean_of_two_samples() {
        let wce = WeightedCrossEntropy::from_weights(vec![1.0, 3.0]);
        let l = wce.loss(&[0.0; 4], &[0, 1]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        // per-sample CE a (class 0) and b (class 1)
        let logits = [1.0, -0.5, 0.2, 0.9];
        let ce = |row: &[f64], y: usize| {
            let z: f64 = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            z - row[y]
        };
        let (a, b) = (ce(&logits[..2], 0), ce(&logits[2..], 1));
        let l = wce.loss(&logits, &[0, 1]).unwrap();
        assert!((l - (a + 3.0 * b) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_batch() {
        let wce = WeightedCrossEntropy::from_weights(vec![0.0, 1.0]);
        let (l, g) = wce.loss_and_grad(&[2.0, -1.0, 0.5, 0.5], &[0, 0]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_labels() {
        let wce = WeightedCrossEntropy::from_weights(vec![1.0, 1.0]);
        assert!(matches!(wce.loss(&[0.0, 0.0], &[2]), Err(Error::Label(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let wce = WeightedCrossEntropy::from_weights(vec![0.7, 1.9, 1.2]);
        let logits = vec![0.3, -1.2, 2.0, 0.1, 0.4, -0.3];
        let labels = [2, 1];
        let (_, g) = wce.loss_and_grad(&logits, &labels).unwrap();
        for i in 0..logits.len() {
            let mut p = logits.clone();
            p[i] += 1e-6;
            let mut m = logits.clone();
            m[i] -= 1e-6;
            let fd = (wce.loss(&p, &labels).unwrap() - wce.loss(&m, &labels).unwrap()) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn weights_times_counts_sum_to_total(counts in proptest::collection::vec(1u64..10_000, 1..12)) {
            let w = class_weights(&counts).unwrap();
            let total: u64 = counts.iter().sum();
            let float_sum: f64 = w.weights.iter().zip(&counts).map(|(w, &c)| w * c as f64).sum();
            prop_assert!((float_sum - total as f64).abs() <= 1e-12 * total as f64);
        }

        #[test]
        fn equal_weights_reduce_to_plain_mean(
            logits in proptest::collection::vec(-5.0f64..5.0, 12),
            labels in proptest::collection::vec(0usize..3, 4),
            w in 0.1f64..10.0,
        ) {
            let plain = WeightedCrossEntropy::from_weights(vec![1.0; 3]).loss(&logits, &labels).unwrap();
            let scaled = WeightedCrossEntropy::from_weights(vec![w; 3]).loss(&logits, &labels).unwrap();
            prop_assert!((plain - scaled).abs() < 1e-9);
        }
    }
}
