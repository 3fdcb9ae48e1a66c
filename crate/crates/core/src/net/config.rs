use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemConfig {
    pub kernel: usize,
    pub stride: usize,
    /// 3x3 stride-2 max pooling after the stem convolution.
    pub pool: bool,
}

impl Default for StemConfig {
    fn default() -> Self {
        StemConfig {
            kernel: 7,
            stride: 2,
            pool: true,
        }
    }
}

/// Topology of the residual network: a strided stem, four stages of basic
/// blocks, global average pooling and a linear classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub stage_blocks: [usize; 4],
    pub stage_channels: [usize; 4],
    pub input_channels: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub stem: StemConfig,
}

/// Role of a named tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight { fan_in: usize },
    BnScale,
    BnShift,
    RunningMean,
    RunningVar,
    LinearWeight { fan_in: usize },
    LinearBias,
}

impl ParamKind {
    pub fn is_trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

/// Geometry of one basic block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub prefix: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub projection: bool,
}

impl NetConfig {
    pub fn resnet34(num_classes: usize) -> Self {
        NetConfig {
            stage_blocks: [3, 4, 6, 3],
            stage_channels: [64, 128, 256, 512],
            input_channels: 3,
            num_classes,
            stem: StemConfig::default(),
        }
    }

    /// Small profile used for tests and desk-scale experiments.
    pub fn desk(num_classes: usize) -> Self {
        NetConfig {
            stage_blocks: [1, 1, 1, 1],
            stage_channels: [8, 16, 32, 64],
            input_channels: 3,
            num_classes,
            stem: StemConfig::default(),
        }
    }

    pub fn without_stem_pool(mut self) -> Self {
        self.stem.pool = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_blocks.contains(&0) {
            return Err(Error::Config(format!(
                "every stage needs at least one block, got {:?}",
                self.stage_blocks
            )));
        }
        if self.stage_channels.contains(&0) {
            return Err(Error::Config("stage channel counts must be positive".into()));
        }
        if self.input_channels == 0 {
            return Err(Error::Config("input_channels must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.stem.kernel == 0 || self.stem.kernel.is_multiple_of(2) || self.stem.stride == 0 {
            return Err(Error::Config("stem kernel must be odd and stride positive".into()));
        }
        Ok(())
    }

    pub fn final_channels(&self) -> usize {
        self.stage_channels[3]
    }

    pub fn blocks(&self) -> Vec<BlockLayout> {
        let mut out = Vec::new();
        let mut in_ch = self.stage_channels[0];
        for (s, (&blocks, &ch)) in self.stage_blocks.iter().zip(&self.stage_channels).enumerate() {
            for b in 0..blocks {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                out.push(BlockLayout {
                    prefix: format!("stage{}.block{}", s + 1, b),
                    in_channels: in_ch,
                    out_channels: ch,
                    stride,
                    projection: stride != 1 || in_ch != ch,
                });
                in_ch = ch;
            }
        }
        out
    }

    /// Spatial size of the last stage's output for a square input.
    pub fn final_spatial(&self, input: usize) -> usize {
        let k = self.stem.kernel;
        let mut s = conv_out(input, k, self.stem.stride, k / 2);
        if self.stem.pool {
            s = conv_out(s, 3, 2, 1);
        }
        for b in self.blocks() {
            s = conv_out(s, 3, b.stride, 1);
        }
        s
    }

    /// Every tensor the network owns, in a fixed order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let k = self.stem.kernel;
        conv_bn_specs(&mut specs, "stem", self.stage_channels[0], self.input_channels, k);
        for b in self.blocks() {
            conv_bn_specs(
                &mut specs,
                &format!("{}.conv1", b.prefix),
                b.out_channels,
                b.in_channels,
                3,
            );
            conv_bn_specs(
                &mut specs,
                &format!("{}.conv2", b.prefix),
                b.out_channels,
                b.out_channels,
                3,
            );
            if b.projection {
                conv_bn_specs(
                    &mut specs,
                    &format!("{}.shortcut", b.prefix),
                    b.out_channels,
                    b.in_channels,
                    1,
                );
            }
        }
        let c = self.final_channels();
        specs.push(ParamSpec {
            name: "fc.weight".into(),
            shape: vec![self.num_classes, c],
            kind: ParamKind::LinearWeight { fan_in: c },
        });
        specs.push(ParamSpec {
            name: "fc.bias".into(),
            shape: vec![self.num_classes],
            kind: ParamKind::LinearBias,
        });
        specs
    }
}

pub(crate) fn conv_out(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad).saturating_sub(kernel) / stride + 1
}

fn conv_bn_specs(specs: &mut Vec<ParamSpec>, prefix: &str, out: usize, inp: usize, k: usize) {
    let fan_in = inp * k * k;
    specs.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: vec![out, inp, k, k],
        kind: ParamKind::ConvWeight { fan_in },
    });
    for (suffix, kind) in [
        ("bn_weight", ParamKind::BnScale),
        ("bn_bias", ParamKind::BnShift),
        ("bn_mean", ParamKind::RunningMean),
        ("bn_var", ParamKind::RunningVar),
    ] {
        specs.push(ParamSpec {
            name: format!("{prefix}.{suffix}"),
            shape: vec![out],
            kind,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_geometry() {
        let cfg = NetConfig::desk(5);
        assert_eq!(cfg.final_spatial(224), 7);
        assert_eq!(cfg.clone().without_stem_pool().final_spatial(64), 4);
        let blocks = cfg.blocks();
        assert_eq!(blocks.len(), 4);
        assert!(!blocks[0].projection);
        assert!(blocks[1..].iter().all(|b| b.projection && b.stride == 2));
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = NetConfig::desk(5);
        cfg.stage_blocks[2] = 0;
        assert!(cfg.validate().is_err());
        assert!(NetConfig::desk(1).validate().is_err());
        NetConfig::resnet34(1000).validate().unwrap();
    }
}
