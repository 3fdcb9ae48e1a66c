use crate::corpus::NormalizedImage;
use crate::error::{Error, Result};
use crate::metrics::mean_probabilities;
use crate::net::ParameterSet;

use super::fold::predict_probabilities;

/// Mean of the per-model softmax vectors. Each class's contributions are
/// summed in sorted order, so the result does not depend on model order.
pub fn ensemble_predict(models: &[ParameterSet], image: &NormalizedImage) -> Result<Vec<f64>> {
    let first = models
        .first()
        .ok_or_else(|| Error::EmptyInput("ensemble needs at least one model".into()))?;
    let k = first.config().num_classes;
    if let Some(m) = models.iter().find(|m| m.config().num_classes != k) {
        return Err(Error::Config(format!(
            "ensemble members disagree on class count ({k} vs {})",
            m.config().num_classes
        )));
    }
    let per_model = models
        .iter()
        .map(|m| predict_probabilities(m, std::slice::from_ref(image), 1).map(|mut v| v.remove(0)))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_probabilities(&per_model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_model, softmax, NetConfig};

    fn image() -> NormalizedImage {
        NormalizedImage {
            height: 32,
            width: 32,
            data: (0..3 * 32 * 32).map(|i| ((i * 37) % 101) as f32 / 50.0 - 1.0).collect(),
        }
    }

    #[test]
    fn hand_means() {
        assert_eq!(mean_probabilities(&[vec![1.0, 0.0], vec![0.0, 1.0]]), vec![0.5, 0.5]);
        let m = mean_probabilities(&[vec![0.6, 0.4], vec![0.5, 0.5], vec![0.4, 0.6]]);
        assert!((m[0] - 0.5).abs() < 1e-15 && (m[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_model_is_its_softmax() {
        let p = build_model(&NetConfig::desk(3), 4).unwrap();
        let img = image();
        let x = super::super::fold::batch_tensor(std::slice::from_ref(&img)).unwrap();
        let logits: Vec<f64> = crate::net::forward(&p, &x)
            .unwrap()
            .data()
            .iter()
            .map(|&v| v as f64)
            .collect();
        assert_eq!(ensemble_predict(&[p], &img).unwrap(), softmax(&logits));
    }

    #[test]
    fn permutation_invariant_and_checked() {
        let a = build_model(&NetConfig::desk(3), 1).unwrap();
        let b = build_model(&NetConfig::desk(3), 2).unwrap();
        let c = build_model(&NetConfig::desk(3), 3).unwrap();
        let img = image();
        let p1 = ensemble_predict(&[a.clone(), b.clone(), c.clone()], &img).unwrap();
        let p2 = ensemble_predict(&[c, a.clone(), b], &img).unwrap();
        assert_eq!(p1, p2);
        assert!((p1.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let other = build_model(&NetConfig::desk(4), 1).unwrap();
        assert!(matches!(ensemble_predict(&[a, other], &img), Err(Error::Config(_))));
        assert!(ensemble_predict(&[], &img).is_err());
    }
}
