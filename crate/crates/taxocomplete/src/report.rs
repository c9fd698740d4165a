//! Metric reports keyed by task root names, as JSON and CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use taxocomplete_core::metrics::{MetricDistribution, MetricReport, MetricValue};
use taxocomplete_core::protocol::AblationRow;
use taxocomplete_core::tat::TatDecomposition;
use taxocomplete_core::taxonomy::Taxonomy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedReport {
    pub overall: Vec<MetricValue>,
    /// Keyed by the name of each task's root label.
    pub per_task: BTreeMap<String, Vec<MetricDistribution>>,
}

impl NamedReport {
    pub fn new(r: &MetricReport, t: &Taxonomy, d: &TatDecomposition) -> Self {
        let per_task = r
            .per_task
            .iter()
            .map(|(id, v)| {
                let name = d.task(*id).map(|task| t.name(task.root).to_string()).unwrap_or_else(|_| format!("task{}", id.0));
                (name, v.clone())
            })
            .collect();
        NamedReport { overall: r.overall.clone(), per_task }
    }
}

/// `scope,task,metric,k,value,n_docs` rows; `scope` is `overall` or `task`.
pub fn metrics_csv(r: &NamedReport) -> String {
    let mut out = String::from("scope,task,metric,k,value,n_docs\n");
    for m in &r.overall {
        let _ = writeln!(out, "overall,,{},{},{},{}", m.metric.name(), m.k, m.value, m.n_docs);
    }
    for (task, dists) in &r.per_task {
        for m in dists {
            let _ = writeln!(out, "task,{},{},{},{},{}", csv_field(task), m.metric.name(), m.k, m.mean, m.values.len());
        }
    }
    out
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("metric,k,adaptive,fixed,delta\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.metric.name(), r.k, r.adaptive, r.fixed, r.delta);
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use taxocomplete_core::metrics::Metric;

    #[test]
    fn csv_rows() {
        let r = NamedReport {
            overall: vec![MetricValue { metric: Metric::Precision, k: 1, value: 0.5, n_docs: 4 }],
            per_task: BTreeMap::from([(
                "a,b".to_string(),
                vec![MetricDistribution { metric: Metric::Ndcg, k: 2, mean: 0.25, values: vec![0.5, 0.0] }],
            )]),
        };
        assert_eq!(metrics_csv(&r), "scope,task,metric,k,value,n_docs\noverall,,P,1,0.5,4\ntask,\"a,b\",NDCG,2,0.25,2\n");
        let rows = [AblationRow { metric: Metric::Precision, k: 1, adaptive: 0.75, fixed: 0.5, delta: 0.25 }];
        assert_eq!(ablation_csv(&rows), "metric,k,adaptive,fixed,delta\nP,1,0.75,0.5,0.25\n");
    }
}
