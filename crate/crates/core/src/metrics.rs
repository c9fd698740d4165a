//! Precision@k and NDCG@k over ranked label lists.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::tat::TaskId;
use crate::taxonomy::LabelId;

/// One ranked prediction with its gold labels. `k_y` is `gold.len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSample {
    pub ranking: Vec<LabelId>,
    pub gold: BTreeSet<LabelId>,
    /// Tasks the gold labels belong to, for the per-task breakdown.
    pub tasks: BTreeSet<TaskId>,
}

impl EvalSample {
    pub fn new(ranking: Vec<LabelId>, gold: BTreeSet<LabelId>) -> Self {
        EvalSample { ranking, gold, tasks: BTreeSet::new() }
    }

    pub fn k_y(&self) -> usize {
        self.gold.len()
    }

    /// Hit indicators for the first `k` positions; missing positions count as
    /// misses.
    fn hits(&self, k: usize) -> impl Iterator<Item = bool> + '_ {
        (0..k).map(|n| self.ranking.get(n).is_some_and(|l| self.gold.contains(l)))
    }
}

pub fn precision_at_k(s: &EvalSample, k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    s.hits(k).filter(|&h| h).count() as f64 / k as f64
}

pub fn ndcg_at_k(s: &EvalSample, k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let dcg: f64 = s.hits(k).enumerate().filter(|(_, h)| *h).map(|(n, _)| 1.0 / math::ln((n + 2) as f64)).sum();
    let ideal: f64 = (0..k.min(s.k_y())).map(|n| 1.0 / math::ln((n + 2) as f64)).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "P")]
    Precision,
    #[serde(rename = "NDCG")]
    Ndcg,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Precision => "P",
            Metric::Ndcg => "NDCG",
        }
    }

    pub fn eval(self, s: &EvalSample, k: usize) -> f64 {
        match self {
            Metric::Precision => precision_at_k(s, k),
            Metric::Ndcg => ndcg_at_k(s, k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub metric: Metric,
    pub k: usize,
    pub value: f64,
    /// Documents with at least `k` gold labels.
    pub n_docs: usize,
}

/// Per-document values of one metric within one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDistribution {
    pub metric: Metric,
    pub k: usize,
    pub mean: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub overall: Vec<MetricValue>,
    pub per_task: BTreeMap<TaskId, Vec<MetricDistribution>>,
}

impl MetricReport {
    pub fn get(&self, metric: Metric, k: usize) -> Option<f64> {
        self.overall.iter().find(|m| m.metric == metric && m.k == k).map(|m| m.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("no document has at least {0} gold labels")]
    NoEligibleDocuments(usize),
    #[error("k must be at least 1")]
    ZeroK,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// For each metric and `k`, the mean over samples with `k_y ≥ k`, plus the
/// per-task distributions of the same values. Sums run in sample order.
pub fn evaluate_corpus(samples: &[EvalSample], ks: &[usize]) -> Result<MetricReport, MetricError> {
    let mut overall = Vec::new();
    let mut per_task: BTreeMap<TaskId, Vec<MetricDistribution>> = BTreeMap::new();
    for metric in [Metric::Precision, Metric::Ndcg] {
        for &k in ks {
            if k == 0 {
                return Err(MetricError::ZeroK);
            }
            let eligible: Vec<&EvalSample> = samples.iter().filter(|s| s.k_y() >= k).collect();
            if eligible.is_empty() {
                return Err(MetricError::NoEligibleDocuments(k));
            }
            let values: Vec<f64> = eligible.iter().map(|s| metric.eval(s, k)).collect();
            overall.push(MetricValue { metric, k, value: mean(&values), n_docs: values.len() });
            let mut by_task: BTreeMap<TaskId, Vec<f64>> = BTreeMap::new();
            for (s, v) in eligible.iter().zip(&values) {
                for &t in &s.tasks {
                    by_task.entry(t).or_default().push(*v);
                }
            }
            for (t, vals) in by_task {
                per_task.entry(t).or_default().push(MetricDistribution { metric, k, mean: mean(&vals), values: vals });
            }
        }
    }
    Ok(MetricReport { overall, per_task })
}

/// The members of `ks` for which at least one sample is eligible.
pub fn eligible_ks(samples: &[EvalSample], ks: &[usize]) -> Vec<usize> {
    let max = samples.iter().map(EvalSample::k_y).max().unwrap_or(0);
    ks.iter().copied().filter(|&k| k >= 1 && k <= max).collect()
}
