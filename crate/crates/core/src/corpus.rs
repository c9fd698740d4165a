//! Documents and their resolution against a taxonomy.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::derive_seed;
use crate::path::{expand_label_set, Expansion};
use crate::taxonomy::{LabelId, Taxonomy};

/// A document as stored on disk: labels are names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub labels: Vec<String>,
}

/// A document whose labels are resolved to taxonomy ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDocument {
    pub doc_id: String,
    pub text: String,
    pub labels: BTreeSet<LabelId>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("document {doc_id}: unknown label {label:?}")]
    UnknownLabel { doc_id: String, label: String },
    #[error("duplicate doc_id {0}")]
    DuplicateDocId(String),
}

pub fn resolve(t: &Taxonomy, docs: &[Document]) -> Result<Vec<LabeledDocument>, CorpusError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(docs.len());
    for d in docs {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(CorpusError::DuplicateDocId(d.doc_id.clone()));
        }
        let mut labels = BTreeSet::new();
        for name in &d.labels {
            let id = t
                .id(name)
                .ok_or_else(|| CorpusError::UnknownLabel { doc_id: d.doc_id.clone(), label: name.clone() })?;
            labels.insert(id);
        }
        out.push(LabeledDocument { doc_id: d.doc_id.clone(), text: d.text.clone(), labels });
    }
    Ok(out)
}

impl LabeledDocument {
    pub fn to_document(&self, t: &Taxonomy) -> Document {
        Document {
            doc_id: self.doc_id.clone(),
            text: self.text.clone(),
            labels: self.labels.iter().map(|&l| String::from(t.name(l))).collect(),
        }
    }
}

/// Expands every document's labels to a path-complete set. Each document
/// draws its tie-breaks from a seed derived from `seed` and its id.
pub fn expand_corpus(t: &Taxonomy, docs: &[LabeledDocument], seed: u64) -> (Vec<LabeledDocument>, Vec<Expansion>) {
    let mut out = Vec::with_capacity(docs.len());
    let mut reports = Vec::with_capacity(docs.len());
    for d in docs {
        let e = expand_label_set(t, &d.labels, derive_seed(seed, d.doc_id.as_bytes()))
            .expect("labels were resolved against this taxonomy");
        out.push(LabeledDocument { doc_id: d.doc_id.clone(), text: d.text.clone(), labels: e.labels.clone() });
        reports.push(e);
    }
    (out, reports)
}

/// Number of documents carrying each label.
pub fn label_frequencies(docs: &[LabeledDocument]) -> BTreeMap<LabelId, usize> {
    let mut m = BTreeMap::new();
    for d in docs {
        for &l in &d.labels {
            *m.entry(l).or_default() += 1;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::fixtures::cs_taxonomy;

    fn doc(id: &str, labels: &[&str]) -> Document {
        Document { doc_id: id.into(), text: String::new(), labels: labels.iter().map(|s| String::from(*s)).collect() }
    }

    #[test]
    fn resolution_errors_name_the_document() {
        let t = cs_taxonomy();
        assert_eq!(
            resolve(&t, &[doc("d1", &["CS", "Quantum"])]),
            Err(CorpusError::UnknownLabel { doc_id: "d1".into(), label: "Quantum".into() })
        );
        assert_eq!(resolve(&t, &[doc("a", &[]), doc("a", &[])]), Err(CorpusError::DuplicateDocId("a".into())));
        assert_eq!(resolve(&t, &[doc("a", &["CS"]), doc("b", &["ML"])]).unwrap().len(), 2);
    }

    #[test]
    fn expansion_is_per_document_and_seeded() {
        let t = cs_taxonomy();
        let docs = resolve(&t, &[doc("x", &["LLMs"]), doc("y", &["RL"])]).unwrap();
        let (a, rep) = expand_corpus(&t, &docs, 7);
        let (b, _) = expand_corpus(&t, &docs, 7);
        assert_eq!(a, b);
        assert_eq!(rep[0].added.len(), 2);
        assert_eq!(a[1].labels, [t.id("CS").unwrap(), t.id("ML").unwrap(), t.id("RL").unwrap()].into_iter().collect());
        let f = label_frequencies(&a);
        assert_eq!(f[&t.id("CS").unwrap()], 2);
    }
}
