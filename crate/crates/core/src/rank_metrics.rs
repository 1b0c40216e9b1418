//! Agreement between a produced ranking and a gold ranking.
//!
//! All metrics assume two complete, tie-free orders over the same items,
//! which [`Ranking`] guarantees. RBO is the extrapolated variant, which is
//! exact for complete conjoint lists.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Ranking;

pub const DEFAULT_RBO_P: [f64; 2] = [0.5, 0.9];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("rankings cover different ids: {0}")]
    IdSetMismatch(String),
    #[error("need at least two items, got {0}")]
    NotEnoughItems(usize),
    #[error("persistence p must lie in (0, 1), got {0}")]
    InvalidP(f64),
    #[error("no reports to aggregate")]
    EmptyInput,
}

/// Position in `b` of each item of `a`, in `a` order.
fn b_positions(a: &Ranking, b: &Ranking) -> Result<Vec<usize>, MetricError> {
    let n = a.len();
    if n < 2 {
        return Err(MetricError::NotEnoughItems(n));
    }
    let pos = b.positions();
    if b.len() != n {
        return Err(MetricError::IdSetMismatch(format!(
            "lengths {} and {}",
            n,
            b.len()
        )));
    }
    a.order()
        .iter()
        .map(|id| {
            pos.get(id.as_str())
                .copied()
                .ok_or_else(|| MetricError::IdSetMismatch(format!("{id} missing from second ranking")))
        })
        .collect()
}

fn merge_count(v: &mut [usize], buf: &mut Vec<usize>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[i] <= v[j] {
            buf.push(v[i]);
            i += 1;
        } else {
            buf.push(v[j]);
            inv += (mid - i) as u64;
            j += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    inv
}

/// (concordant - discordant) / C(n, 2), via merge-sort inversion count.
pub fn kendall_tau(a: &Ranking, b: &Ranking) -> Result<f64, MetricError> {
    let mut pos = b_positions(a, b)?;
    let n = pos.len() as f64;
    let pairs = n * (n - 1.0) / 2.0;
    let discordant = merge_count(&mut pos, &mut Vec::new()) as f64;
    Ok((pairs - 2.0 * discordant) / pairs)
}

/// 1 - 6 Σd² / (n (n² - 1)).
pub fn spearman_rho(a: &Ranking, b: &Ranking) -> Result<f64, MetricError> {
    let pos = b_positions(a, b)?;
    let n = pos.len() as f64;
    let d2: f64 = pos
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let d = i as f64 - j as f64;
            d * d
        })
        .sum();
    Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

/// Extrapolated rank-biased overlap at persistence `p`:
/// `(1 - p)/p · Σ_{d=1..k} A_d p^d + A_k p^k` with `A_d` the prefix agreement.
pub fn rbo(a: &Ranking, b: &Ranking, p: f64) -> Result<f64, MetricError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(MetricError::InvalidP(p));
    }
    b_positions(a, b)?;
    let k = a.len();
    let mut seen_a = HashSet::with_capacity(k);
    let mut seen_b = HashSet::with_capacity(k);
    let mut overlap = 0usize;
    let mut weighted = 0.0;
    let mut weight = 1.0;
    let mut agreement = 0.0;
    for (x, y) in a.order().iter().zip(b.order()) {
        weight *= p;
        if x == y {
            overlap += 1;
        } else {
            if seen_b.contains(x.as_str()) {
                overlap += 1;
            }
            if seen_a.contains(y.as_str()) {
                overlap += 1;
            }
        }
        seen_a.insert(x.as_str());
        seen_b.insert(y.as_str());
        let depth = seen_a.len() as f64;
        agreement = overlap as f64 / depth;
        weighted += agreement * weight;
    }
    let value = (1.0 - p) / p * weighted + agreement * weight;
    Ok(value.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RboValue {
    pub p: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub kendall_tau: f64,
    pub spearman_rho: f64,
    pub rbo: Vec<RboValue>,
    pub n: usize,
}

impl AgreementReport {
    pub fn rbo_at(&self, p: f64) -> Option<f64> {
        self.rbo.iter().find(|r| r.p == p).map(|r| r.value)
    }
}

/// All metrics for one sample. Fails with `NotEnoughItems` for n < 2;
/// callers count those samples separately.
pub fn agreement(produced: &Ranking, gold: &Ranking, ps: &[f64]) -> Result<AgreementReport, MetricError> {
    Ok(AgreementReport {
        kendall_tau: kendall_tau(produced, gold)?,
        spearman_rho: spearman_rho(produced, gold)?,
        rbo: ps
            .iter()
            .map(|&p| rbo(produced, gold, p).map(|value| RboValue { p, value }))
            .collect::<Result<_, _>>()?,
        n: produced.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation across subset means; absent with one subset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RboSummary {
    pub p: f64,
    #[serde(flatten)]
    pub summary: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub kendall_tau: MetricSummary,
    pub spearman_rho: MetricSummary,
    pub rbo: Vec<RboSummary>,
    pub samples: usize,
    pub subsets: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn summarize(subset_means: &[f64]) -> MetricSummary {
    let m = mean(subset_means);
    let std = (subset_means.len() > 1).then(|| {
        let ss: f64 = subset_means.iter().map(|x| (x - m) * (x - m)).sum();
        (ss / (subset_means.len() - 1) as f64).sqrt()
    });
    MetricSummary { mean: m, std }
}

/// Unweighted mean per metric. With `subset_ids` (one per report), each
/// subset is averaged first and the summary is the mean and sample
/// standard deviation of the subset means.
pub fn aggregate(
    reports: &[AgreementReport],
    subset_ids: Option<&[usize]>,
) -> Result<AggregateReport, MetricError> {
    if reports.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let ids: Vec<usize> = match subset_ids {
        Some(ids) if ids.len() == reports.len() => ids.to_vec(),
        Some(ids) => {
            return Err(MetricError::IdSetMismatch(format!(
                "{} subset ids for {} reports",
                ids.len(),
                reports.len()
            )))
        }
        None => vec![0; reports.len()],
    };
    let mut groups: BTreeMap<usize, Vec<&AgreementReport>> = BTreeMap::new();
    for (r, id) in reports.iter().zip(ids) {
        groups.entry(id).or_default().push(r);
    }
    let per_subset = |f: &dyn Fn(&AgreementReport) -> f64| -> MetricSummary {
        let means: Vec<f64> = groups
            .values()
            .map(|g| mean(&g.iter().map(|r| f(r)).collect::<Vec<_>>()))
            .collect();
        summarize(&means)
    };
    let ps: Vec<f64> = reports[0].rbo.iter().map(|r| r.p).collect();
    Ok(AggregateReport {
        kendall_tau: per_subset(&|r| r.kendall_tau),
        spearman_rho: per_subset(&|r| r.spearman_rho),
        rbo: ps
            .iter()
            .map(|&p| RboSummary {
                p,
                summary: per_subset(&|r| r.rbo_at(p).unwrap_or(f64::NAN)),
            })
            .collect(),
        samples: reports.len(),
        subsets: groups.len(),
    })
}

/// Metric value as shown in tables: ×100, two decimals.
pub fn percent(value: f64) -> String {
    format!("{:.2}", value * 100.0)
}
