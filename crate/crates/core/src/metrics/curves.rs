//! ROC and precision-recall curves.
//!
//! ROC AUC is computed by exact pair counting,
//! `(2 * #(pos > neg) + #(pos == neg)) / (2 * P * N)`, which is also the area
//! under the threshold-swept curve. PR AUC is step-interpolated average
//! precision `sum_k (R_k - R_{k-1}) * P_k` over distinct thresholds.
//!
//! The macro-average ROC curve is sampled on the FPR grid `i / 256`,
//! `i = 0..=256`. Each per-class curve is linearly interpolated; where a curve
//! jumps vertically at a grid point both the lower and the upper value are
//! kept, so the averaged curve is exact for curves whose breakpoints fall on
//! the grid. Its AUC is the trapezoid area.

use serde::{Deserialize, Serialize};

use crate::corpus::Task;
use crate::error::{Error, Result};

use super::records::PredictionRecord;

pub const MACRO_GRID_POINTS: usize = 257;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    /// Threshold reached at each point; the leading point has `+inf`.
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

/// `(score, positive)` pairs in descending score order, grouped by score.
/// Each group is `(score, positives, negatives)`.
fn score_groups(scores: &[f64], positives: &[bool]) -> Result<Vec<(f64, u64, u64)>> {
    if scores.len() != positives.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            positives.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Range("scores contain NaN".into()));
    }
    let mut items: Vec<(f64, bool)> = scores.iter().copied().zip(positives.iter().copied()).collect();
    items.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for (s, pos) in items {
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if pos {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, pos as u64, !pos as u64)),
        }
    }
    Ok(groups)
}

pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Result<RocCurve> {
    let groups = score_groups(scores, positives)?;
    let p: u64 = groups.iter().map(|g| g.1).sum();
    let n: u64 = groups.iter().map(|g| g.2).sum();
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ROC needs both classes ({p} positives, {n} negatives)"
        )));
    }
    // groups are in descending order: negatives seen so far outscore later positives
    let mut neg_above = 0u128;
    let mut doubled = 0u128;
    let mut curve = RocCurve {
        fpr: vec![0.0],
        tpr: vec![0.0],
        thresholds: vec![f64::INFINITY],
        auc: 0.0,
    };
    let (mut tp, mut fp) = (0u64, 0u64);
    for &(s, gp, gn) in &groups {
        let below = n as u128 - neg_above - gn as u128;
        doubled += 2 * gp as u128 * below + gp as u128 * gn as u128;
        neg_above += gn as u128;
        tp += gp;
        fp += gn;
        curve.fpr.push(fp as f64 / n as f64);
        curve.tpr.push(tp as f64 / p as f64);
        curve.thresholds.push(s);
    }
    curve.auc = doubled as f64 / (2 * p as u128 * n as u128) as f64;
    Ok(curve)
}

pub fn pr_auc(scores: &[f64], positives: &[bool]) -> Result<PrCurve> {
    let groups = score_groups(scores, positives)?;
    let p: u64 = groups.iter().map(|g| g.1).sum();
    if p == 0 {
        return Err(Error::UndefinedMetric("precision-recall needs a positive".into()));
    }
    let mut curve = PrCurve {
        recall: Vec::new(),
        precision: Vec::new(),
        thresholds: Vec::new(),
        auc: 0.0,
    };
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut prev_recall = 0.0;
    for &(s, gp, gn) in &groups {
        tp += gp;
        fp += gn;
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / p as f64;
        curve.auc += (recall - prev_recall) * precision;
        prev_recall = recall;
        curve.recall.push(recall);
        curve.precision.push(precision);
        curve.thresholds.push(s);
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RocMode {
    PerClass,
    Micro,
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCurve {
    pub name: String,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

/// Class-probability matrix and true indices of a record set.
pub fn score_matrix(records: &[PredictionRecord], task: Task) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut scores = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        r.validate(task)?;
        labels.push(r.true_index(task)?);
        scores.push(r.probabilities.clone());
    }
    Ok((scores, labels))
}

pub fn per_class_roc(scores: &[Vec<f64>], labels: &[usize], classes: &[&str]) -> Result<Vec<(String, RocCurve)>> {
    for (c, name) in classes.iter().enumerate() {
        if !labels.contains(&c) {
            return Err(Error::UndefinedMetric(format!("class {name} has no positive samples")));
        }
    }
    classes
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let s: Vec<f64> = scores.iter().map(|v| v[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            let curve = roc_auc(&s, &pos).map_err(|e| Error::UndefinedMetric(format!("class {name}: {e}")))?;
            Ok((name.to_string(), curve))
        })
        .collect()
}

/// One-vs-rest decisions of every (sample, class) pair pooled into a single
/// binary problem.
pub fn micro_roc(scores: &[Vec<f64>], labels: &[usize]) -> Result<RocCurve> {
    let mut s = Vec::new();
    let mut pos = Vec::new();
    for (row, &y) in scores.iter().zip(labels) {
        for (c, &v) in row.iter().enumerate() {
            s.push(v);
            pos.push(c == y);
        }
    }
    roc_auc(&s, &pos)
}

/// Lower and upper TPR of a curve at `x` (they differ at vertical jumps).
fn tpr_limits(curve: &RocCurve, x: f64) -> (f64, f64) {
    let at: Vec<f64> = curve
        .fpr
        .iter()
        .zip(&curve.tpr)
        .filter(|(f, _)| **f == x)
        .map(|(_, t)| *t)
        .collect();
    if let (Some(lo), Some(hi)) = (at.iter().copied().reduce(f64::min), at.iter().copied().reduce(f64::max)) {
        return (lo, hi);
    }
    let i = curve.fpr.iter().position(|&f| f > x).expect("curve ends at fpr 1");
    let (x0, y0, x1, y1) = (curve.fpr[i - 1], curve.tpr[i - 1], curve.fpr[i], curve.tpr[i]);
    let y = y0 + (y1 - y0) * (x - x0) / (x1 - x0);
    (y, y)
}

pub fn macro_roc(curves: &[RocCurve]) -> Result<NamedCurve> {
    if curves.is_empty() {
        return Err(Error::UndefinedMetric("no per-class curves to average".into()));
    }
    let k = curves.len() as f64;
    let mut fpr = Vec::new();
    let mut tpr = Vec::new();
    for i in 0..MACRO_GRID_POINTS {
        let x = i as f64 / (MACRO_GRID_POINTS - 1) as f64;
        let (mut lo, mut hi) = (0.0, 0.0);
        for c in curves {
            let (l, h) = tpr_limits(c, x);
            lo += l;
            hi += h;
        }
        let (lo, hi) = (lo / k, hi / k);
        fpr.push(x);
        tpr.push(lo);
        if hi != lo {
            fpr.push(x);
            tpr.push(hi);
        }
    }
    let auc = trapezoid(&fpr, &tpr);
    Ok(NamedCurve {
        name: "macro".into(),
        fpr,
        tpr,
        auc,
    })
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0)
        .sum()
}

pub fn multiclass_roc(records: &[PredictionRecord], task: Task, mode: RocMode) -> Result<Vec<NamedCurve>> {
    let (scores, labels) = score_matrix(records, task)?;
    let classes = task.class_names();
    let named = |name: String, c: RocCurve| NamedCurve {
        name,
        fpr: c.fpr,
        tpr: c.tpr,
        auc: c.auc,
    };
    Ok(match mode {
        RocMode::PerClass => per_class_roc(&scores, &labels, &classes)?
            .into_iter()
            .map(|(n, c)| named(n, c))
            .collect(),
        RocMode::Micro => vec![named("micro".into(), micro_roc(&scores, &labels)?)],
        RocMode::Macro => {
            let curves: Vec<RocCurve> = per_class_roc(&scores, &labels, &classes)?
                .into_iter()
                .map(|(_, c)| c)
                .collect();
            vec![macro_roc(&curves)?]
        }
    })
}
