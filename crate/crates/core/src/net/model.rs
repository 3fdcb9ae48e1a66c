//! Forward evaluation and reverse-mode gradients of the residual network.
//!
//! Block: `relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x))`, where the
//! shortcut is the identity or a strided 1x1 convolution with batch norm.
//! Stem: `maxpool?(relu(bn(conv7x7/2(x))))`. Head: global average pool and
//! a linear layer. Batch norm uses batch statistics in training mode and the
//! running estimates otherwise.

use std::collections::BTreeMap;

use super::layers::{
    bn_backward, bn_forward_eval, bn_forward_train, conv_backward, conv_forward, maxpool_backward, maxpool_forward,
    relu_backward_inplace, relu_inplace, Act, BnBatchStats, BnCache, ConvGeom, BN_MOMENTUM,
};
use super::params::ParamSet;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::trainer::loss::WeightedCrossEntropy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics observed per batch-norm layer, keyed by layer prefix.
pub type BatchStats = BTreeMap<String, BnBatchStats>;

struct ConvBnTrace<T> {
    col: Vec<T>,
    in_shape: (usize, usize, usize, usize),
    bn: BnCache<T>,
}

struct BlockTrace<T> {
    prefix: String,
    geom1: ConvGeom,
    geom2: ConvGeom,
    conv1: ConvBnTrace<T>,
    h1: Act<T>,
    conv2: ConvBnTrace<T>,
    shortcut: Option<(ConvGeom, ConvBnTrace<T>)>,
    out: Act<T>,
}

struct Trace<T> {
    stem_geom: ConvGeom,
    stem: ConvBnTrace<T>,
    stem_out: Act<T>,
    pool: Option<Vec<u32>>,
    blocks: Vec<BlockTrace<T>>,
    pooled: Vec<T>,
    final_shape: (usize, usize, usize, usize),
}

struct Pass<T> {
    logits: Vec<T>,
    final_act: Act<T>,
    trace: Option<Trace<T>>,
    stats: BatchStats,
}

fn conv_bn<T: Scalar>(
    params: &ParamSet<T>,
    prefix: &str,
    x: &Act<T>,
    g: &ConvGeom,
    mode: Mode,
    stats: &mut BatchStats,
) -> (Act<T>, Option<ConvBnTrace<T>>) {
    let (y, col) = conv_forward(x, params.data(&format!("{prefix}.weight")), g);
    let gamma = params.data(&format!("{prefix}.bn_weight"));
    let beta = params.data(&format!("{prefix}.bn_bias"));
    match mode {
        Mode::Eval => {
            let mean = params.data(&format!("{prefix}.bn_mean"));
            let var = params.data(&format!("{prefix}.bn_var"));
            (bn_forward_eval(&y, gamma, beta, mean, var), None)
        }
        Mode::Train => {
            let (out, cache, s) = bn_forward_train(&y, gamma, beta);
            stats.insert(prefix.to_string(), s);
            let trace = ConvBnTrace {
                col,
                in_shape: x.shape(),
                bn: cache,
            };
            (out, Some(trace))
        }
    }
}

fn check_input<T: Scalar>(params: &ParamSet<T>, batch: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let cfg = params.config();
    let shape = batch.shape();
    if shape.len() != 4 || shape[1] != cfg.input_channels || shape[0] == 0 {
        return Err(Error::Shape(format!(
            "expected a batch N x {} x H x W, got {shape:?}",
            cfg.input_channels
        )));
    }
    let (h, w) = (shape[2], shape[3]);
    if h.min(w) < cfg.stem.kernel / 2 + 1 {
        return Err(Error::Shape(format!("input {h}x{w} too small for the stem")));
    }
    Ok((shape[0], h, w))
}

fn run<T: Scalar>(params: &ParamSet<T>, batch: &Tensor<T>, mode: Mode) -> Result<Pass<T>> {
    let (n, h, w) = check_input(params, batch)?;
    let cfg = params.config();
    let keep = mode == Mode::Train;
    let mut stats = BatchStats::new();

    let x = Act::from_nchw(n, cfg.input_channels, h, w, batch.data());
    let stem_geom = ConvGeom {
        out_channels: cfg.stage_channels[0],
        kernel: cfg.stem.kernel,
        stride: cfg.stem.stride,
        pad: cfg.stem.kernel / 2,
    };
    let (mut s, stem_trace) = conv_bn(params, "stem", &x, &stem_geom, mode, &mut stats);
    drop(x);
    relu_inplace(&mut s);
    let (mut cur, pool) = if cfg.stem.pool {
        let (p, arg) = maxpool_forward(&s);
        (p, Some(arg))
    } else {
        (s.clone(), None)
    };
    let stem_out = s;

    let mut blocks = Vec::new();
    for b in cfg.blocks() {
        let geom1 = ConvGeom {
            out_channels: b.out_channels,
            kernel: 3,
            stride: b.stride,
            pad: 1,
        };
        let geom2 = ConvGeom { stride: 1, ..geom1 };
        let (mut h1, t1) = conv_bn(params, &format!("{}.conv1", b.prefix), &cur, &geom1, mode, &mut stats);
        relu_inplace(&mut h1);
        let (mut out, t2) = conv_bn(params, &format!("{}.conv2", b.prefix), &h1, &geom2, mode, &mut stats);
        let shortcut = if b.projection {
            let g = ConvGeom {
                out_channels: b.out_channels,
                kernel: 1,
                stride: b.stride,
                pad: 0,
            };
            let (sc, ts) = conv_bn(params, &format!("{}.shortcut", b.prefix), &cur, &g, mode, &mut stats);
            for (o, v) in out.data.iter_mut().zip(&sc.data) {
                *o = *o + *v;
            }
            ts.map(|t| (g, t))
        } else {
            for (o, v) in out.data.iter_mut().zip(&cur.data) {
                *o = *o + *v;
            }
            None
        };
        relu_inplace(&mut out);
        if keep {
            blocks.push(BlockTrace {
                prefix: b.prefix.clone(),
                geom1,
                geom2,
                conv1: t1.expect("train trace"),
                h1,
                conv2: t2.expect("train trace"),
                shortcut,
                out: out.clone(),
            });
        }
        cur = out;
    }

    // global average pool -> pooled[n][c]
    let (c, hw) = (cur.c, cur.h * cur.w);
    let mut pooled = vec![T::zero(); n * c];
    for ci in 0..c {
        for ni in 0..n {
            let plane = &cur.data[(ci * n + ni) * hw..][..hw];
            let s: f64 = plane.iter().map(|v| v.as_f64()).sum();
            pooled[ni * c + ci] = T::from_f64(s / hw as f64);
        }
    }
    let k = cfg.num_classes;
    let fw = params.data("fc.weight");
    let fb = params.data("fc.bias");
    let mut logits = vec![T::zero(); n * k];
    for ni in 0..n {
        let feat = &pooled[ni * c..(ni + 1) * c];
        for ki in 0..k {
            let row = &fw[ki * c..(ki + 1) * c];
            let s: f64 = row.iter().zip(feat).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
            logits[ni * k + ki] = T::from_f64(s + fb[ki].as_f64());
        }
    }

    let trace = if keep {
        Some(Trace {
            stem_geom,
            stem: stem_trace.expect("train trace"),
            stem_out,
            pool,
            blocks,
            pooled,
            final_shape: cur.shape(),
        })
    } else {
        None
    };
    Ok(Pass {
        logits,
        final_act: cur,
        trace,
        stats,
    })
}

fn conv_bn_backward<T: Scalar>(
    params: &ParamSet<T>,
    grads: &mut ParamSet<T>,
    prefix: &str,
    dy: &Act<T>,
    t: &ConvBnTrace<T>,
    g: &ConvGeom,
    need_input: bool,
) -> Option<Act<T>> {
    let gamma = params.data(&format!("{prefix}.bn_weight"));
    let mut dgamma = grads.data(&format!("{prefix}.bn_weight")).to_vec();
    let mut dbeta = grads.data(&format!("{prefix}.bn_bias")).to_vec();
    let dconv = bn_backward(dy, &t.bn, gamma, &mut dgamma, &mut dbeta);
    grads.data_mut(&format!("{prefix}.bn_weight")).copy_from_slice(&dgamma);
    grads.data_mut(&format!("{prefix}.bn_bias")).copy_from_slice(&dbeta);
    let weight = params.data(&format!("{prefix}.weight"));
    let dw = grads.data_mut(&format!("{prefix}.weight"));
    conv_backward(&dconv, &t.col, weight, t.in_shape, g, dw, need_input)
}

fn backward<T: Scalar>(params: &ParamSet<T>, trace: &Trace<T>, dlogits: &[T]) -> Result<ParamSet<T>> {
    let cfg = params.config();
    let mut grads = ParamSet::zeros(cfg)?;
    let (c, n, h, w) = trace.final_shape;
    let k = cfg.num_classes;

    {
        let db = grads.data_mut("fc.bias");
        for ki in 0..k {
            let s: f64 = (0..n).map(|ni| dlogits[ni * k + ki].as_f64()).sum();
            db[ki] = T::from_f64(s);
        }
    }
    {
        let dw = grads.data_mut("fc.weight");
        for ki in 0..k {
            for ci in 0..c {
                let s: f64 = (0..n)
                    .map(|ni| dlogits[ni * k + ki].as_f64() * trace.pooled[ni * c + ci].as_f64())
                    .sum();
                dw[ki * c + ci] = T::from_f64(s);
            }
        }
    }
    let mut dcur = head_backward(params, dlogits, n, (c, h, w));

    for bt in trace.blocks.iter().rev() {
        relu_backward_inplace(&mut dcur, &bt.out);
        let dsum = dcur;
        let dx_short = match &bt.shortcut {
            Some((g, t)) => conv_bn_backward(
                params,
                &mut grads,
                &format!("{}.shortcut", bt.prefix),
                &dsum,
                t,
                g,
                true,
            )
            .expect("input gradient requested"),
            None => dsum.clone(),
        };
        let mut dh1 = conv_bn_backward(
            params,
            &mut grads,
            &format!("{}.conv2", bt.prefix),
            &dsum,
            &bt.conv2,
            &bt.geom2,
            true,
        )
        .expect("input gradient requested");
        relu_backward_inplace(&mut dh1, &bt.h1);
        let mut dx = conv_bn_backward(
            params,
            &mut grads,
            &format!("{}.conv1", bt.prefix),
            &dh1,
            &bt.conv1,
            &bt.geom1,
            true,
        )
        .expect("input gradient requested");
        for (a, b) in dx.data.iter_mut().zip(&dx_short.data) {
            *a = *a + *b;
        }
        dcur = dx;
    }

    let mut dstem = match &trace.pool {
        Some(arg) => maxpool_backward(&dcur, arg, trace.stem_out.shape()),
        None => dcur,
    };
    relu_backward_inplace(&mut dstem, &trace.stem_out);
    conv_bn_backward(params, &mut grads, "stem", &dstem, &trace.stem, &trace.stem_geom, false);
    Ok(grads)
}

/// Gradient of the logits (weighted by `dlogits`, `n x classes`) with respect
/// to the last stage's activations, `C x N x H x W`.
fn head_backward<T: Scalar>(params: &ParamSet<T>, dlogits: &[T], n: usize, (c, h, w): (usize, usize, usize)) -> Act<T> {
    let k = params.config().num_classes;
    let fw = params.data("fc.weight");
    let hw = h * w;
    let mut dact = Act::zeros(c, n, h, w);
    for ni in 0..n {
        for ci in 0..c {
            let s: f64 = (0..k)
                .map(|ki| dlogits[ni * k + ki].as_f64() * fw[ki * c + ci].as_f64())
                .sum();
            let v = T::from_f64(s / hw as f64);
            dact.data[(ci * n + ni) * hw..][..hw].fill(v);
        }
    }
    dact
}

/// Inference-mode logits, `N x num_classes`.
pub fn forward<T: Scalar>(params: &ParamSet<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
    let pass = run(params, batch, Mode::Eval)?;
    let n = batch.shape()[0];
    Tensor::new(vec![n, params.config().num_classes], pass.logits)
}

/// Training-mode logits (batch statistics), without gradients.
pub fn forward_train<T: Scalar>(params: &ParamSet<T>, batch: &Tensor<T>) -> Result<(Tensor<T>, BatchStats)> {
    let pass = run(params, batch, Mode::Train)?;
    let n = batch.shape()[0];
    Ok((
        Tensor::new(vec![n, params.config().num_classes], pass.logits)?,
        pass.stats,
    ))
}

/// Which ReLUs fired and which max-pool inputs won in a training-mode pass.
/// The loss is smooth between two parameter settings with equal patterns
/// (and the same batch), so finite differences across them are meaningful.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern {
    relu: Vec<u64>,
    pool: Vec<u32>,
}

impl ActivationPattern {
    /// Number of ReLU decisions and pooling winners that differ.
    pub fn differences(&self, other: &ActivationPattern) -> usize {
        let relu: u32 = self
            .relu
            .iter()
            .zip(&other.relu)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum();
        let pool = self.pool.iter().zip(&other.pool).filter(|(a, b)| a != b).count();
        let extra = self.relu.len().abs_diff(other.relu.len()) + self.pool.len().abs_diff(other.pool.len());
        relu as usize + pool + extra
    }
}

pub fn activation_pattern<T: Scalar>(params: &ParamSet<T>, batch: &Tensor<T>) -> Result<ActivationPattern> {
    let pass = run(params, batch, Mode::Train)?;
    let trace = pass.trace.expect("train pass keeps a trace");
    let mut acts = vec![&trace.stem_out];
    for b in &trace.blocks {
        acts.push(&b.h1);
        acts.push(&b.out);
    }
    let mut relu = Vec::new();
    let mut bits = 0u64;
    let mut used = 0;
    for v in acts.iter().flat_map(|a| a.data.iter()) {
        bits |= u64::from(v.as_f64() > 0.0) << used;
        used += 1;
        if used == 64 {
            relu.push(bits);
            (bits, used) = (0, 0);
        }
    }
    if used > 0 {
        relu.push(bits);
    }
    Ok(ActivationPattern {
        relu,
        pool: trace.pool.unwrap_or_default(),
    })
}

/// Single-image inference pass exposing the last stage's activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCapture<T> {
    pub logits: Vec<T>,
    /// `C x H x W` output of the final residual stage.
    pub last_conv_activations: Tensor<T>,
}

impl<T: Scalar> ForwardCapture<T> {
    /// d(logit of `class`) / d(activations), same shape as the activations.
    pub fn class_gradient(&self, params: &ParamSet<T>, class: usize) -> Result<Tensor<T>> {
        let k = params.config().num_classes;
        if class >= k {
            return Err(Error::Label(format!("class {class} outside 0..{k}")));
        }
        let mut onehot = vec![T::zero(); k];
        onehot[class] = T::one();
        let s = self.last_conv_activations.shape();
        let act = head_backward(params, &onehot, 1, (s[0], s[1], s[2]));
        Tensor::new(s.to_vec(), act.data)
    }
}

/// Accepts `3 x H x W` or `1 x 3 x H x W`; larger batches are rejected.
pub fn forward_with_capture<T: Scalar>(params: &ParamSet<T>, image: &Tensor<T>) -> Result<ForwardCapture<T>> {
    let batch = match image.shape().len() {
        3 => {
            let mut shape = vec![1];
            shape.extend_from_slice(image.shape());
            Tensor::new(shape, image.data().to_vec())?
        }
        4 if image.shape()[0] == 1 => image.clone(),
        _ => {
            return Err(Error::Shape(format!(
                "capture takes a single image, got shape {:?}",
                image.shape()
            )))
        }
    };
    let pass = run(params, &batch, Mode::Eval)?;
    let a = pass.final_act;
    Ok(ForwardCapture {
        logits: pass.logits,
        last_conv_activations: Tensor::new(vec![a.c, a.h, a.w], a.data)?,
    })
}

#[derive(Debug, Clone)]
pub struct GradientOutput<T> {
    /// Weighted-mean loss over the batch.
    pub loss: f64,
    /// Same names and shapes as the parameters; running statistics get zeros.
    pub grads: ParamSet<T>,
    pub logits: Tensor<T>,
    pub batch_stats: BatchStats,
}

/// Training-mode loss and gradients. Parameters are not modified; running
/// statistics are returned in `batch_stats` for [`apply_running_stats`].
pub fn gradients<T: Scalar>(
    params: &ParamSet<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    loss: &WeightedCrossEntropy,
) -> Result<GradientOutput<T>> {
    let k = params.config().num_classes;
    if loss.num_classes() != k {
        return Err(Error::Config(format!(
            "loss has {} classes, network {k}",
            loss.num_classes()
        )));
    }
    let n = batch.shape().first().copied().unwrap_or(0);
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Label(format!("label {bad} outside 0..{k}")));
    }
    let pass = run(params, batch, Mode::Train)?;
    let logits64: Vec<f64> = pass.logits.iter().map(|v| v.as_f64()).collect();
    let (value, dlogits) = loss.loss_and_grad(&logits64, labels)?;
    let dlogits: Vec<T> = dlogits.into_iter().map(T::from_f64).collect();
    let trace = pass.trace.as_ref().expect("train pass keeps a trace");
    let grads = backward(params, trace, &dlogits)?;
    Ok(GradientOutput {
        loss: value,
        grads,
        logits: Tensor::new(vec![n, k], pass.logits)?,
        batch_stats: pass.stats,
    })
}

/// `running = (1 - momentum) * running + momentum * batch`, momentum 0.1.
pub fn apply_running_stats<T: Scalar>(params: &mut ParamSet<T>, stats: &BatchStats) {
    for (prefix, s) in stats {
        for (suffix, values) in [("bn_mean", &s.mean), ("bn_var", &s.var)] {
            let dst = params.data_mut(&format!("{prefix}.{suffix}"));
            for (d, &v) in dst.iter_mut().zip(values) {
                *d = T::from_f64((1.0 - BN_MOMENTUM) * d.as_f64() + BN_MOMENTUM * v);
            }
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_model, NetConfig};

    fn input(n: usize, size: usize, seed: u64) -> Tensor<f64> {
        let len = n * 3 * size * size;
        let data = (0..len)
            .map(|i| ((i as u64 * 2654435761 + seed * 97) % 1000) as f64 / 500.0 - 1.0)
            .collect();
        Tensor::new(vec![n, 3, size, size], data).unwrap()
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let cfg = NetConfig::desk(5);
        let p = ParamSet::<f64>::zeros(&cfg).unwrap();
        let out = forward(&p, &input(2, 32, 1)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_rows_give_duplicated_logits() {
        let p = build_model(&NetConfig::desk(4), 3).unwrap().cast::<f64>();
        let x = input(1, 40, 2);
        let mut data = x.data().to_vec();
        data.extend_from_slice(x.data());
        let xx = Tensor::new(vec![2, 3, 40, 40], data).unwrap();
        let out = forward(&p, &xx).unwrap();
        assert_eq!(out.row(0), out.row(1));
        assert_eq!(out.row(0), forward(&p, &x).unwrap().row(0));
    }

    #[test]
    fn capture_matches_forward_and_shapes() {
        let p = build_model(&NetConfig::desk(5), 9).unwrap();
        let x = input(1, 224, 4).cast::<f32>();
        let cap = forward_with_capture(&p, &x).unwrap();
        assert_eq!(cap.logits, forward(&p, &x).unwrap().into_data());
        assert_eq!(cap.last_conv_activations.shape(), &[64, 7, 7]);
        assert!(matches!(
            forward_with_capture(&p, &input(2, 32, 0).cast::<f32>()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn wrong_channel_count_is_a_shape_error() {
        let p = build_model(&NetConfig::desk(5), 9).unwrap();
        let x = Tensor::<f32>::zeros(vec![1, 1, 32, 32]);
        assert!(matches!(forward(&p, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn activation_pattern_tracks_relu_decisions() {
        let p = build_model(&NetConfig::desk(3), 2).unwrap().cast::<f64>();
        let x = Tensor::new(
            vec![2, 3, 20, 20],
            (0..2400).map(|i| ((i * 37 % 101) as f64 - 50.0) / 25.0).collect(),
        )
        .unwrap();
        let base = activation_pattern(&p, &x).unwrap();
        assert_eq!(base, activation_pattern(&p, &x).unwrap());
        assert_eq!(base.differences(&base), 0);
        // a large stem bias switches on every stem unit
        let mut q = p.clone();
        q.get_mut("stem.bn_bias").unwrap().data_mut().fill(50.0);
        let shifted = activation_pattern(&q, &x).unwrap();
        assert!(base.differences(&shifted) > 0);
    }

    #[test]
    fn zeroed_identity_block_acts_as_relu() {
        // with stage-1 block zeroed and stages 2-4 removed from the check, the
        // block output equals relu(block input); compare via the stem output.
        let cfg = NetConfig::desk(3).without_stem_pool();
        let mut p = build_model(&cfg, 5).unwrap().cast::<f64>();
        for (name, t) in p.iter_mut() {
            if name.starts_with("stage1.block0.") {
                t.data_mut().fill(0.0);
            }
        }
        let x = input(2, 16, 7);
        let pass = run(&p, &x, Mode::Train).unwrap();
        let trace = pass.trace.unwrap();
        let block_out = &trace.blocks[0].out;
        let mut expect = trace.stem_out.clone();
        relu_inplace(&mut expect);
        assert_eq!(block_out.data, expect.data);
    }

    #[test]
    fn label_out_of_range() {
        let p = build_model(&NetConfig::desk(3), 0).unwrap();
        let loss = WeightedCrossEntropy::from_weights(vec![1.0; 3]);
        let x = input(1, 32, 0).cast::<f32>();
        assert!(matches!(gradients(&p, &x, &[3], &loss), Err(Error::Label(_))));
    }

    #[test]
    fn gradient_layout_matches_parameters() {
        let p = build_model(&NetConfig::desk(3), 0).unwrap();
        let loss = WeightedCrossEntropy::from_weights(vec![1.0; 3]);
        let out = gradients(&p, &input(2, 32, 0).cast::<f32>(), &[0, 2], &loss).unwrap();
        assert!(p.same_layout(&out.grads));
        assert!(out.grads.get("stem.bn_var").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_properties() {
        let l = [1.0, -2.0, 0.5, 3.0];
        let p = softmax(&l);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = l.iter().map(|v| v + 100.0).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
