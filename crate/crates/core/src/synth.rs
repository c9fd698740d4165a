//! Seeded synthetic taxonomies and keyword corpora.
//!
//! Labels form a complete `branching`-ary tree of the given depth under a
//! single root. A label at depth ≥ 2 may get one extra parent from a
//! different top-level subtree, which puts it in two tasks. Each document
//! follows one or two random root chains; its text mixes keywords of its
//! labels with noise words.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::math::derive_seed;
use crate::taxonomy::{Taxonomy, TaxonomyError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub depth: usize,
    pub branching: usize,
    pub multi_parent_prob: f64,
    pub docs_per_task: usize,
    /// Number of distinct noise words.
    pub noise_vocab: usize,
    pub keywords_per_label: usize,
    /// Probability that a token is a keyword of one of the document's labels.
    pub signal: f64,
    pub doc_len: usize,
    /// Probability that a document also follows a chain in a second task.
    pub second_path_prob: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            depth: 2,
            branching: 3,
            multi_parent_prob: 0.2,
            docs_per_task: 67,
            noise_vocab: 60,
            keywords_per_label: 2,
            signal: 0.6,
            doc_len: 16,
            second_path_prob: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub edges: Vec<(String, String)>,
    pub taxonomy: Taxonomy,
    pub documents: Vec<Document>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(&'static str),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), SynthError> {
        if self.depth == 0 || self.branching == 0 {
            return Err(SynthError::InvalidSpec("depth and branching must be positive"));
        }
        if !(0.0..=1.0).contains(&self.multi_parent_prob)
            || !(0.0..=1.0).contains(&self.signal)
            || !(0.0..=1.0).contains(&self.second_path_prob)
        {
            return Err(SynthError::InvalidSpec("probabilities must lie in [0, 1]"));
        }
        if self.doc_len == 0 || self.keywords_per_label == 0 || (self.noise_vocab == 0 && self.signal < 1.0) {
            return Err(SynthError::InvalidSpec("doc_len, keywords_per_label and noise_vocab must be positive"));
        }
        Ok(())
    }
}

struct Node {
    name: String,
    top: usize,
    depth: usize,
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b"synth-taxonomy"));
    let mut nodes = alloc::vec![Node { name: String::from("root"), top: usize::MAX, depth: 0 }];
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut frontier = alloc::vec![0usize];
    for depth in 1..=spec.depth {
        let mut next = Vec::new();
        for &p in &frontier {
            for b in 0..spec.branching {
                let name = if depth == 1 { format!("t{b}") } else { format!("{}_{b}", nodes[p].name) };
                let top = if depth == 1 { b } else { nodes[p].top };
                nodes.push(Node { name, top, depth });
                let id = nodes.len() - 1;
                edges.push((p, id));
                next.push(id);
            }
        }
        frontier = next;
    }
    let mut parents: Vec<Vec<usize>> = alloc::vec![Vec::new(); nodes.len()];
    for &(p, c) in &edges {
        parents[c].push(p);
    }
    if spec.branching > 1 {
        for c in 0..nodes.len() {
            if nodes[c].depth < 2 || !rng.random_bool(spec.multi_parent_prob) {
                continue;
            }
            let pool: Vec<usize> =
                (0..nodes.len()).filter(|&p| nodes[p].depth == nodes[c].depth - 1 && nodes[p].top != nodes[c].top).collect();
            if let Some(&p) = pool.choose(&mut rng) {
                edges.push((p, c));
                parents[c].push(p);
            }
        }
    }
    let named: Vec<(String, String)> = edges.iter().map(|&(p, c)| (nodes[p].name.clone(), nodes[c].name.clone())).collect();
    let taxonomy = Taxonomy::from_named_edges(named.iter().map(|(a, b)| (a.as_str(), b.as_str())))?;

    let mut children: Vec<Vec<usize>> = alloc::vec![Vec::new(); nodes.len()];
    for &(p, c) in &edges {
        children[p].push(c);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b"synth-corpus"));
    let walk = |rng: &mut ChaCha8Rng, top: usize, into: &mut Vec<usize>| {
        let mut cur = top + 1;
        into.push(cur);
        // stop early at interior labels now and then
        while !children[cur].is_empty() && rng.random_bool(0.8) {
            cur = *children[cur].choose(rng).expect("non-empty");
            into.push(cur);
        }
    };
    let mut documents = Vec::new();
    for i in 0..spec.docs_per_task * spec.branching {
        let top = i % spec.branching;
        let mut labels = alloc::vec![0usize];
        walk(&mut rng, top, &mut labels);
        if spec.branching > 1 && rng.random_bool(spec.second_path_prob) {
            let other = (top + 1 + rng.random_range(0..spec.branching - 1)) % spec.branching;
            walk(&mut rng, other, &mut labels);
        }
        labels.sort_unstable();
        labels.dedup();
        let carriers: Vec<usize> = labels.iter().copied().filter(|&l| l != 0).collect();
        let mut words = Vec::with_capacity(spec.doc_len);
        for _ in 0..spec.doc_len {
            if rng.random_bool(spec.signal) {
                let l = carriers.choose(&mut rng).expect("at least one label");
                let k = rng.random_range(0..spec.keywords_per_label);
                words.push(format!("kw{}x{k}", nodes[*l].name.replace('_', "y")));
            } else {
                words.push(format!("w{}", rng.random_range(0..spec.noise_vocab)));
            }
        }
        documents.push(Document {
            doc_id: format!("doc{i:05}"),
            text: words.join(" "),
            labels: labels.iter().map(|&l| nodes[l].name.clone()).collect(),
        });
    }
    Ok(SyntheticData { edges: named, taxonomy, documents })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::resolve;
    use crate::path::is_path_complete;
    use crate::tat::{decompose, verify_tat};

    #[test]
    fn tree_when_no_multi_parents() {
        let spec = SyntheticSpec { multi_parent_prob: 0.0, docs_per_task: 5, ..SyntheticSpec::default() };
        let data = generate(&spec, 1).unwrap();
        let t = &data.taxonomy;
        assert_eq!(t.len(), 13);
        assert!(t.labels().all(|l| t.parents_of(l).len() <= 1));
        let d = decompose(t).unwrap();
        assert_eq!(d.len(), 3);
        assert!(t.labels().all(|l| d.tasks_of(l).len() <= 1));
    }

    #[test]
    fn multi_parent_labels_span_tasks() {
        let spec = SyntheticSpec { multi_parent_prob: 0.3, docs_per_task: 5, ..SyntheticSpec::default() };
        let data = generate(&spec, 2).unwrap();
        let t = &data.taxonomy;
        assert!(t.is_weak_semilattice());
        let d = decompose(t).unwrap();
        assert!(verify_tat(t, &d).is_valid());
        assert!(t.labels().any(|l| d.tasks_of(l).len() >= 2));
    }

    #[test]
    fn documents_are_path_complete_and_seeded() {
        let spec = SyntheticSpec::default();
        let a = generate(&spec, 7).unwrap();
        let b = generate(&spec, 7).unwrap();
        assert_eq!(a.edges, b.edges);
        assert_eq!(a.documents, b.documents);
        assert_ne!(generate(&spec, 8).unwrap().documents, a.documents);
        assert_eq!(a.documents.len(), 201);
        let docs = resolve(&a.taxonomy, &a.documents).unwrap();
        assert!(docs.iter().all(|d| is_path_complete(&a.taxonomy, &d.labels)));
    }
}
