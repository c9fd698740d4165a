//! Text formats: taxonomy TSV, corpus JSONL, and word-vector embeddings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use taxocomplete_core::corpus::Document;
use taxocomplete_core::taxonomy::{Taxonomy, TaxonomyBuilder, TaxonomyError};
use taxocomplete_core::vocab::Vocabulary;

/// Name given to the root added by `--add-synthetic-root`.
pub const SYNTHETIC_ROOT: &str = "__root__";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: expected `parent<TAB>child` or a single label, found {fields} fields")]
    BadTaxonomyLine { line: usize, fields: usize },
    #[error("line {line}: {source}")]
    TaxonomyLine { line: usize, source: TaxonomyError },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("line {line}: malformed JSON: {message}")]
    MalformedJson { line: usize, message: String },
    #[error("line {line}: expected {expected} values, found {found}")]
    DimMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: bad number {token:?}")]
    BadNumber { line: usize, token: String },
    #[error("line {line}: non-finite value")]
    NonFinite { line: usize },
}

impl FormatError {
    pub fn kind(&self) -> &'static str {
        match self {
            FormatError::BadTaxonomyLine { .. } => "BadTaxonomyLine",
            FormatError::TaxonomyLine { source, .. } | FormatError::Taxonomy(source) => taxonomy_error_kind(source),
            FormatError::MalformedJson { .. } => "MalformedJson",
            FormatError::DimMismatch { .. } => "DimMismatch",
            FormatError::BadNumber { .. } => "BadNumber",
            FormatError::NonFinite { .. } => "NonFinite",
        }
    }
}

pub fn taxonomy_error_kind(e: &TaxonomyError) -> &'static str {
    match e {
        TaxonomyError::CycleDetected { .. } => "CycleDetected",
        TaxonomyError::MultipleRoots(_) => "MultipleRoots",
        TaxonomyError::NoRoot => "NoRoot",
        TaxonomyError::DuplicateName(_) => "DuplicateName",
        TaxonomyError::EmptyName => "EmptyName",
        TaxonomyError::SelfEdge(_) => "SelfEdge",
        TaxonomyError::UnknownLabel(_) => "UnknownLabel",
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

/// Parses a taxonomy file. Each line is a `parent<TAB>child` cover edge or a
/// lone label name. Multi-root inputs are rejected unless
/// `add_synthetic_root` is set.
pub fn parse_taxonomy(text: &str, add_synthetic_root: bool) -> Result<Taxonomy, FormatError> {
    let mut b = TaxonomyBuilder::new();
    for (line, l) in content_lines(text) {
        let fields: Vec<&str> = l.split('\t').collect();
        let r = match fields.as_slice() {
            [name] => b.add_label(name).map(|_| ()),
            [p, c] => b.add_edge(p, c),
            _ => return Err(FormatError::BadTaxonomyLine { line, fields: fields.len() }),
        };
        r.map_err(|source| FormatError::TaxonomyLine { line, source })?;
    }
    if add_synthetic_root {
        b.add_synthetic_root(SYNTHETIC_ROOT)?;
    }
    Ok(b.build()?)
}

/// Lists every label in id order, then the cover edges, so that parsing the
/// output reproduces the same label ids.
pub fn write_taxonomy(t: &Taxonomy) -> String {
    let mut out = String::new();
    for l in t.labels() {
        let _ = writeln!(out, "{}", t.name(l));
    }
    let mut edges: Vec<_> = t.cover_edges().collect();
    edges.sort();
    for (p, c) in edges {
        let _ = writeln!(out, "{}\t{}", t.name(p), t.name(c));
    }
    out
}

/// Parses a JSONL corpus. Returns the documents and any warnings.
pub fn parse_corpus(text: &str) -> Result<(Vec<Document>, Vec<String>), FormatError> {
    let mut docs = Vec::new();
    for (line, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(l)
            .map_err(|e| FormatError::MalformedJson { line: line + 1, message: e.to_string() })?;
        docs.push(doc);
    }
    let mut warnings = Vec::new();
    if docs.is_empty() {
        warnings.push("corpus is empty".to_string());
    }
    Ok((docs, warnings))
}

pub fn write_corpus(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).expect("documents serialize"));
        out.push('\n');
    }
    out
}

/// Word vectors of a fixed dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Fraction of the vocabulary's tokens (specials excluded) with a vector.
    pub fn coverage(&self, vocab: &Vocabulary) -> f64 {
        let words = &vocab.tokens()[2.min(vocab.len())..];
        if words.is_empty() {
            return 0.0;
        }
        words.iter().filter(|w| self.vectors.contains_key(*w)).count() as f64 / words.len() as f64
    }
}

/// Parses `word v1 … vd` lines. A repeated word keeps its last vector and
/// adds a warning.
pub fn parse_embeddings(text: &str, expected_dim: usize) -> Result<(EmbeddingTable, Vec<String>), FormatError> {
    let mut table = EmbeddingTable { dim: expected_dim, vectors: BTreeMap::new() };
    let mut warnings = Vec::new();
    for (line, l) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let mut parts = l.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if values.len() != expected_dim {
            return Err(FormatError::DimMismatch { line, expected: expected_dim, found: values.len() });
        }
        let mut v = Vec::with_capacity(expected_dim);
        for tok in values {
            let x: f64 = tok.parse().map_err(|_| FormatError::BadNumber { line, token: tok.to_string() })?;
            if !x.is_finite() {
                return Err(FormatError::NonFinite { line });
            }
            v.push(x);
        }
        if table.vectors.insert(word.to_string(), v).is_some() {
            warnings.push(format!("line {line}: duplicate word {word:?}, keeping the last vector"));
        }
    }
    Ok((table, warnings))
}
