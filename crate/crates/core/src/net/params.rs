use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{NetConfig, ParamKind};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Named tensors of a network together with the topology that fixes their
/// names and shapes. Also used for gradients, which share the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    config: NetConfig,
    tensors: BTreeMap<String, Tensor<T>>,
}

/// Stored weights are 32-bit.
pub type ParameterSet = ParamSet<f32>;

impl<T: Scalar> ParamSet<T> {
    /// All tensors zero.
    pub fn zeros(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let tensors = config
            .param_specs()
            .into_iter()
            .map(|s| (s.name, Tensor::zeros(s.shape)))
            .collect();
        Ok(ParamSet {
            config: config.clone(),
            tensors,
        })
    }

    /// Checks that names and shapes match the config exactly.
    pub fn from_tensors(config: NetConfig, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        if specs.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for s in &specs {
            let t = tensors
                .get(&s.name)
                .ok_or_else(|| Error::Shape(format!("missing tensor {}", s.name)))?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Shape(format!(
                    "{} has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
        }
        Ok(ParamSet { config, tensors })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub(crate) fn data(&self, name: &str) -> &[T] {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
            .data()
    }

    pub(crate) fn data_mut(&mut self, name: &str) -> &mut [T] {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
            .data_mut()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Number of trainable scalars (running statistics excluded).
    pub fn trainable_count(&self) -> usize {
        self.config
            .param_specs()
            .iter()
            .filter(|s| s.kind.is_trainable())
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            config: self.config.clone(),
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn same_layout<U: Scalar>(&self, other: &ParamSet<U>) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(other.tensors.iter())
                .all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape())
    }
}

/// Running statistics are buffers, not optimizer targets.
pub fn is_trainable(name: &str) -> bool {
    !(name.ends_with(".bn_mean") || name.ends_with(".bn_var"))
}

/// Fan-in scaled normal initialisation: convolutions draw from
/// `N(0, 2 / fan_in)`, the classifier from `N(0, 1 / fan_in)`; batch-norm
/// scales start at 1, shifts and biases at 0, running statistics at (0, 1).
/// Draws happen in parameter-name order from a ChaCha8 stream seeded by `seed`.
pub fn build_model(config: &NetConfig, seed: u64) -> Result<ParameterSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    let mut specs = config.param_specs();
    specs.sort_by(|a, b| a.name.cmp(&b.name));
    for s in specs {
        let n: usize = s.shape.iter().product();
        let data: Vec<f32> = match s.kind {
            ParamKind::ConvWeight { fan_in } => normal_draws(&mut rng, n, (2.0 / fan_in as f64).sqrt()),
            ParamKind::LinearWeight { fan_in } => normal_draws(&mut rng, n, (1.0 / fan_in as f64).sqrt()),
            ParamKind::BnScale | ParamKind::RunningVar => vec![1.0; n],
            ParamKind::BnShift | ParamKind::RunningMean | ParamKind::LinearBias => vec![0.0; n],
        };
        tensors.insert(s.name, Tensor::new(s.shape, data)?);
    }
    ParamSet::from_tensors(config.clone(), tensors)
}

fn normal_draws(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f32> {
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| dist.sample(rng) as f32).collect()
}

/// Copies every tensor of `pretrained` whose name and shape match `target`,
/// keeping the seeded initialisation elsewhere (typically the classifier).
/// Returns the names that were transferred.
pub fn transfer_weights(
    pretrained: &ParameterSet,
    target_config: &NetConfig,
    seed: u64,
) -> Result<(ParameterSet, Vec<String>)> {
    let mut params = build_model(target_config, seed)?;
    let mut copied = Vec::new();
    for (name, t) in params.iter_mut() {
        if let Some(src) = pretrained.get(name) {
            if src.shape() == t.shape() {
                *t = src.clone();
                copied.push(name.clone());
            }
        }
    }
    Ok((params, copied))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_classifier_shape_and_determinism() {
        let cfg = NetConfig::desk(5);
        let a = build_model(&cfg, 11).unwrap();
        assert_eq!(a.get("fc.weight").unwrap().shape(), &[5, 64]);
        assert_eq!(a, build_model(&cfg, 11).unwrap());
        assert_ne!(a, build_model(&cfg, 12).unwrap());
        assert!(a.names().any(|n| n == "stage2.block0.shortcut.weight"));
        assert!(!a.names().any(|n| n == "stage1.block0.shortcut.weight"));
    }

    #[test]
    fn zero_block_config_is_rejected() {
        let mut cfg = NetConfig::desk(4);
        cfg.stage_blocks = [1, 0, 1, 1];
        assert!(matches!(build_model(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn from_tensors_rejects_wrong_shape() {
        let cfg = NetConfig::desk(3);
        let p = build_model(&cfg, 0).unwrap();
        let mut tensors: BTreeMap<_, _> = p.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        tensors.insert("fc.bias".into(), Tensor::zeros(vec![4]));
        assert!(matches!(ParamSet::from_tensors(cfg, tensors), Err(Error::Shape(_))));
    }

    #[test]
    fn transfer_keeps_backbone_and_reinitialises_head() {
        let src = build_model(&NetConfig::desk(1000 % 7 + 2), 1).unwrap();
        let (dst, copied) = transfer_weights(&src, &NetConfig::desk(5), 2).unwrap();
        assert!(!copied.contains(&"fc.weight".to_string()));
        assert_eq!(copied.len(), dst.len() - 2);
        assert_eq!(dst.get("stem.weight"), src.get("stem.weight"));
    }
}
