//! Gestational-age subgroup comparison.
//!
//! The default test is the two-sided Mann-Whitney U test. Up to 20
//! observations in total the null distribution is enumerated exactly over
//! all assignments of the pooled midranks to the groups, and
//! `p = P(|U - n_a n_b / 2| >= |U_obs - n_a n_b / 2|)`. Larger samples use
//! the normal approximation with tie-corrected variance and a 0.5
//! continuity correction. Welch's t test is available as an alternative.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::corpus::Task;
use crate::error::{Error, Result};

use super::records::PredictionRecord;

pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubgroupTest {
    #[default]
    MannWhitney,
    WelchT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test_name: String,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupReport {
    pub cutoff_days: u32,
    /// True-class probabilities of records below the cutoff.
    pub group_a: Vec<f64>,
    /// True-class probabilities of records at or above the cutoff.
    pub group_b: Vec<f64>,
    /// Records without a gestational age.
    pub excluded: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub test_name: String,
}

/// Midranks (1-based, ties averaged) doubled so they stay integral.
fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // positions i..=j share rank ((i+1) + (j+1)) / 2
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &idx[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// `U` of group `a`: pairs where `a` exceeds `b`, ties counted one half.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = doubled_midranks(&pooled);
    let r2: u64 = ranks[..a.len()].iter().sum();
    let na = a.len() as u64;
    (r2 - na * (na + 1)) as f64 / 2.0
}

pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_groups(a, b)?;
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = doubled_midranks(&pooled);
    let u = mann_whitney_u(a, b);
    let p_value = if na + nb <= EXACT_LIMIT {
        exact_p(&ranks, na, nb)
    } else {
        normal_p(&pooled, u, na, nb)
    };
    Ok(TestResult {
        test_name: if na + nb <= EXACT_LIMIT {
            "mann_whitney_exact"
        } else {
            "mann_whitney_normal"
        }
        .into(),
        statistic: u,
        p_value,
    })
}

/// Counts size-`na` subsets of the pooled ranks by doubled rank sum.
fn exact_p(ranks: &[u64], na: usize, nb: usize) -> f64 {
    let max_sum: u64 = ranks.iter().sum();
    let width = max_sum as usize + 1;
    // ways[k][s]: subsets of size k with doubled rank sum s
    let mut ways = vec![vec![0u128; width]; na + 1];
    ways[0][0] = 1;
    for &r in ranks {
        for k in (1..=na).rev() {
            for s in (r as usize..width).rev() {
                let add = ways[k - 1][s - r as usize];
                ways[k][s] += add;
            }
        }
    }
    // 2U = doubled_sum - na(na+1); compare |2U - na*nb| on integers
    let offset = (na * (na + 1)) as i128;
    let centre = (na * nb) as i128;
    let observed: i128 = ranks[..na].iter().map(|&r| r as i128).sum();
    let obs_dev = (observed - offset - centre).abs();
    let mut extreme = 0u128;
    let mut total = 0u128;
    for (s, &w) in ways[na].iter().enumerate() {
        if w == 0 {
            continue;
        }
        total += w;
        if (s as i128 - offset - centre).abs() >= obs_dev {
            extreme += w;
        }
    }
    extreme as f64 / total as f64
}

fn normal_p(pooled: &[f64], u: f64, na: usize, nb: usize) -> f64 {
    let n = (na + nb) as f64;
    let (na, nb) = (na as f64, nb as f64);
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((u - na * nb / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("valid parameters");
    (2.0 * (1.0 - std_normal.cdf(z))).min(1.0)
}

pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_groups(a, b)?;
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Grouping(
            "Welch's t test needs two observations per group".into(),
        ));
    }
    let mv = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        (m, v / x.len() as f64)
    };
    let ((ma, sa), (mb, sb)) = (mv(a), mv(b));
    let se2 = sa + sb;
    if se2 == 0.0 {
        let p_value = if ma == mb { 1.0 } else { 0.0 };
        return Ok(TestResult {
            test_name: "welch_t".into(),
            statistic: if ma == mb { 0.0 } else { f64::INFINITY.copysign(ma - mb) },
            p_value,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::UndefinedMetric(e.to_string()))?;
    Ok(TestResult {
        test_name: "welch_t".into(),
        statistic: t,
        p_value: (2.0 * (1.0 - dist.cdf(t.abs()))).min(1.0),
    })
}

fn check_groups(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Grouping(format!(
            "both groups need observations (sizes {} and {})",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Range("scores contain NaN".into()));
    }
    Ok(())
}

/// Splits records at `cutoff_days` (below vs at-or-above) and compares the
/// probability each assigned to its true class.
pub fn subgroup_compare(
    records: &[PredictionRecord],
    task: Task,
    cutoff_days: u32,
    test: SubgroupTest,
) -> Result<SubgroupReport> {
    let (mut a, mut b, mut excluded) = (Vec::new(), Vec::new(), 0);
    for r in records {
        r.validate(task)?;
        let score = r.probabilities[r.true_index(task)?];
        match r.gestational_age_days {
            Some(d) if d < cutoff_days => a.push(score),
            Some(_) => b.push(score),
            None => excluded += 1,
        }
    }
    let res = match test {
        SubgroupTest::MannWhitney => mann_whitney(&a, &b)?,
        SubgroupTest::WelchT => welch_t(&a, &b)?,
    };
    Ok(SubgroupReport {
        cutoff_days,
        group_a: a,
        group_b: b,
        excluded,
        statistic: res.statistic,
        p_value: res.p_value,
        test_name: res.test_name,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fully_separated_triples() {
        let r = mann_whitney(&[0.1, 0.2, 0.3], &[0.7, 0.8, 0.9]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.1).abs() < 1e-15);
    }

    #[test]
    fn all_ties() {
        assert_eq!(mann_whitney(&[0.5, 0.5], &[0.5, 0.5]).unwrap().p_value, 1.0);
    }

    #[test]
    fn midranks() {
        assert_eq!(doubled_midranks(&[3.0, 1.0, 3.0, 2.0]), vec![7, 2, 7, 4]);
    }

    #[test]
    fn large_sample_uses_normal_approximation() {
        let a: Vec<f64> = (0..15).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..15).map(|i| i as f64 + 0.5).collect();
        let r = mann_whitney(&a, &b).unwrap();
        assert_eq!(r.test_name, "mann_whitney_normal");
        assert!(r.p_value > 0.5 && r.p_value <= 1.0);
        let swapped = mann_whitney(&b, &a).unwrap();
        assert!((r.p_value - swapped.p_value).abs() < 1e-12);
    }

    #[test]
    fn welch_matches_hand_computation() {
        // means 2 and 5, variances 1 and 1, n 3 each: t = -3 / sqrt(2/3), df = 4
        let r = welch_t(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((r.statistic + 3.0 / (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let t4 = StudentsT::new(0.0, 1.0, 4.0).unwrap();
        assert!((r.p_value - 2.0 * (1.0 - t4.cdf(r.statistic.abs()))).abs() < 1e-12);
    }

    #[test]
    fn empty_group() {
        assert!(matches!(mann_whitney(&[], &[1.0]), Err(Error::Grouping(_))));
    }
}
