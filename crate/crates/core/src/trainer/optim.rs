use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::net::{is_trainable, ParameterSet};

use super::schedule::TrainConfig;

/// First and second moment estimates per trainable tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

/// One AdamW step with decoupled weight decay:
/// `theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)`.
/// Running batch-norm statistics are left alone.
pub fn adamw_step(
    params: &mut ParameterSet,
    grads: &ParameterSet,
    state: &mut AdamState,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    if !params.same_layout(grads) {
        return Err(Error::Shape(
            "gradient names or shapes differ from the parameters".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((name, p), (_, g)) in params.iter_mut().zip(grads.iter()) {
        if !is_trainable(name) {
            continue;
        }
        let n = p.len();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        for (((theta, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            let gi = gi as f64;
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let update = (*mi / c1) / ((*vi / c2).sqrt() + config.eps);
            let th = *theta as f64;
            *theta = (th - lr * (update + config.weight_decay * th)) as f32;
        }
    }
    Ok(())
}
