//! Label taxonomies as finite posets stored by their cover (Hasse) edges.
//!
//! A [`Poset`] is any acyclic relation closed reflexively and transitively.
//! A [`Taxonomy`] is a poset that additionally has exactly one minimal
//! element, the global root. For finite posets this is equivalent to being a
//! weak-semilattice: the root lies below every label, so it is a lower bound
//! of every subset.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::bitset::BitSet;

/// Dense label handle, assigned in first-appearance order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub u32);

impl LabelId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Debug for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

impl From<usize> for LabelId {
    fn from(i: usize) -> Self {
        LabelId(i as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaxonomyError {
    #[error("cycle detected: {}", .witness.join(" -> "))]
    CycleDetected { witness: Vec<String> },
    #[error("multiple roots: {}", .0.join(", "))]
    MultipleRoots(Vec<String>),
    #[error("taxonomy has no root (no labels)")]
    NoRoot,
    #[error("duplicate label name {0:?}")]
    DuplicateName(String),
    #[error("empty label name")]
    EmptyName,
    #[error("self edge on {0:?}")]
    SelfEdge(String),
    #[error("unknown label {0}")]
    UnknownLabel(String),
}

/// Finite partial order kept as cover edges plus cached reflexive closures.
#[derive(Clone)]
pub struct Poset {
    names: Vec<String>,
    index: BTreeMap<String, LabelId>,
    children: Vec<Vec<LabelId>>,
    parents: Vec<Vec<LabelId>>,
    // above[a] = { x : a <= x }, below[a] = { x : x <= a }; both reflexive.
    above: Vec<BitSet>,
    below: Vec<BitSet>,
}

impl Poset {
    /// Builds a poset from arbitrary (parent, child) pairs. The pairs may
    /// contain redundant edges; only the transitive reduction is stored.
    pub fn from_edges(names: Vec<String>, edges: &[(LabelId, LabelId)]) -> Result<Self, TaxonomyError> {
        let n = names.len();
        let mut index = BTreeMap::new();
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(TaxonomyError::EmptyName);
            }
            if index.insert(name.clone(), LabelId::from(i)).is_some() {
                return Err(TaxonomyError::DuplicateName(name.clone()));
            }
        }
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(p, c) in edges {
            for id in [p, c] {
                if id.index() >= n {
                    return Err(TaxonomyError::UnknownLabel(id.0.to_string()));
                }
            }
            if p == c {
                return Err(TaxonomyError::SelfEdge(names[p.index()].clone()));
            }
            succ[p.index()].push(c.index());
        }
        for s in &mut succ {
            s.sort_unstable();
            s.dedup();
        }

        let order = topological_order(&succ).map_err(|cyc| TaxonomyError::CycleDetected {
            witness: cyc.into_iter().map(|i| names[i].clone()).collect(),
        })?;

        let mut above: Vec<BitSet> = (0..n).map(|i| BitSet::from_indices(n, [i])).collect();
        for &u in order.iter().rev() {
            let mut acc = above[u].clone();
            for &v in &succ[u] {
                acc.union_with(&above[v]);
            }
            above[u] = acc;
        }

        let mut children: Vec<Vec<LabelId>> = vec![Vec::new(); n];
        let mut parents: Vec<Vec<LabelId>> = vec![Vec::new(); n];
        for u in 0..n {
            for &v in &succ[u] {
                let redundant = succ[u].iter().any(|&w| w != v && above[w].contains(v));
                if !redundant {
                    children[u].push(LabelId::from(v));
                    parents[v].push(LabelId::from(u));
                }
            }
        }
        for p in &mut parents {
            p.sort_unstable();
        }

        let mut below: Vec<BitSet> = (0..n).map(|_| BitSet::new(n)).collect();
        for (u, up) in above.iter().enumerate() {
            for v in up.iter() {
                below[v].insert(u);
            }
        }

        Ok(Poset { names, index, children, parents, above, below })
    }

    /// Convenience constructor with labels named `"0"`, `"1"`, ...
    pub fn from_index_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, TaxonomyError> {
        let names = (0..n).map(|i| i.to_string()).collect();
        let edges: Vec<_> = edges.iter().map(|&(a, b)| (LabelId::from(a), LabelId::from(b))).collect();
        Self::from_edges(names, &edges)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = LabelId> + '_ {
        (0..self.len()).map(LabelId::from)
    }

    pub fn contains(&self, id: LabelId) -> bool {
        id.index() < self.len()
    }

    fn check(&self, id: LabelId) -> Result<(), TaxonomyError> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(TaxonomyError::UnknownLabel(id.0.to_string()))
        }
    }

    pub fn name(&self, id: LabelId) -> &str {
        &self.names[id.index()]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<LabelId> {
        self.index.get(name).copied()
    }

    /// `a <= b`: `a` is `b` or `b` is reachable from `a` along cover edges.
    pub fn leq(&self, a: LabelId, b: LabelId) -> Result<bool, TaxonomyError> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.above[a.index()].contains(b.index()))
    }

    #[cfg(test)]
    pub(crate) fn le(&self, a: LabelId, b: LabelId) -> bool {
        self.above[a.index()].contains(b.index())
    }

    /// Reflexive up-set `{ x : a <= x }`.
    pub fn above(&self, a: LabelId) -> &BitSet {
        &self.above[a.index()]
    }

    /// Reflexive down-set `{ x : x <= a }`.
    pub fn below(&self, a: LabelId) -> &BitSet {
        &self.below[a.index()]
    }

    /// Labels lying below every member of `set`. The empty set yields every
    /// label.
    pub fn lower_set(&self, set: &[LabelId]) -> Result<BitSet, TaxonomyError> {
        let mut out = BitSet::full(self.len());
        for &s in set {
            self.check(s)?;
            out.intersect_with(&self.below[s.index()]);
        }
        Ok(out)
    }

    /// A label below every other label, if one exists.
    pub fn condorcet_winner(&self) -> Option<LabelId> {
        let n = self.len();
        self.labels().find(|&c| self.above[c.index()].count() == n)
    }

    /// Holds iff a Condorcet winner exists, which for posets is the same as
    /// every subset having a lower bound.
    pub fn is_weak_semilattice(&self) -> bool {
        self.condorcet_winner().is_some()
    }

    pub fn children(&self, id: LabelId) -> Result<&[LabelId], TaxonomyError> {
        self.check(id)?;
        Ok(&self.children[id.index()])
    }

    pub fn parents(&self, id: LabelId) -> Result<&[LabelId], TaxonomyError> {
        self.check(id)?;
        Ok(&self.parents[id.index()])
    }

    #[inline]
    pub(crate) fn children_of(&self, id: LabelId) -> &[LabelId] {
        &self.children[id.index()]
    }

    #[inline]
    pub(crate) fn parents_of(&self, id: LabelId) -> &[LabelId] {
        &self.parents[id.index()]
    }

    pub fn is_child(&self, parent: LabelId, child: LabelId) -> bool {
        self.contains(parent) && self.children[parent.index()].binary_search(&child).is_ok()
    }

    /// Cover edges `(parent, child)`, ordered by parent then child id.
    pub fn cover_edges(&self) -> impl Iterator<Item = (LabelId, LabelId)> + '_ {
        self.children
            .iter()
            .enumerate()
            .flat_map(|(p, cs)| cs.iter().map(move |&c| (LabelId::from(p), c)))
    }

    /// Maximal number of children of any label.
    pub fn width(&self) -> usize {
        self.children.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Labels without parents.
    pub fn minimal_labels(&self) -> Vec<LabelId> {
        self.labels().filter(|l| self.parents[l.index()].is_empty()).collect()
    }

    /// Number of cover edges on the longest chain.
    pub fn depth(&self) -> usize {
        let succ: Vec<Vec<usize>> = self
            .children
            .iter()
            .map(|cs| cs.iter().map(|c| c.index()).collect())
            .collect();
        let order = topological_order(&succ).expect("validated poset is acyclic");
        let mut longest = vec![0usize; self.len()];
        for &u in &order {
            for &v in &succ[u] {
                longest[v] = longest[v].max(longest[u] + 1);
            }
        }
        longest.into_iter().max().unwrap_or(0)
    }
}

impl fmt::Debug for Poset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let edges: Vec<_> = self.cover_edges().map(|(p, c)| (self.name(p), self.name(c))).collect();
        f.debug_struct("Poset").field("labels", &self.names).field("cover_edges", &edges).finish()
    }
}

/// Kahn's algorithm; on failure returns a cycle as a closed node walk.
fn topological_order(succ: &[Vec<usize>]) -> Result<Vec<usize>, Vec<usize>> {
    let n = succ.len();
    let mut indeg = vec![0usize; n];
    for s in succ {
        for &v in s {
            indeg[v] += 1;
        }
    }
    let mut stack: Vec<usize> = (0..n).rev().filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(u) = stack.pop() {
        order.push(u);
        for &v in succ[u].iter().rev() {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                stack.push(v);
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    // Every leftover node keeps a leftover successor, so walking forward must
    // revisit a node.
    let start = (0..n).find(|&i| indeg[i] > 0).expect("leftover node");
    let mut seen = vec![usize::MAX; n];
    let mut walk = Vec::new();
    let mut u = start;
    while seen[u] == usize::MAX {
        seen[u] = walk.len();
        walk.push(u);
        u = *succ[u].iter().find(|&&v| indeg[v] > 0).expect("leftover successor");
    }
    let mut cycle = walk.split_off(seen[u]);
    cycle.push(u);
    Err(cycle)
}

/// Summary statistics in the style of a dataset table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyStats {
    pub n_labels: usize,
    pub width: usize,
    pub depth: usize,
    pub n_roots: usize,
}

/// A validated taxonomy: a poset with a single root.
#[derive(Clone, Debug)]
pub struct Taxonomy {
    poset: Poset,
    root: LabelId,
}

impl Deref for Taxonomy {
    type Target = Poset;

    fn deref(&self) -> &Poset {
        &self.poset
    }
}

impl Taxonomy {
    pub fn from_poset(poset: Poset) -> Result<Self, TaxonomyError> {
        let roots = poset.minimal_labels();
        match roots.as_slice() {
            [] => Err(TaxonomyError::NoRoot),
            [root] => Ok(Taxonomy { root: *root, poset }),
            many => Err(TaxonomyError::MultipleRoots(
                many.iter().map(|&r| poset.name(r).to_string()).collect(),
            )),
        }
    }

    /// Builds a taxonomy from `(parent, child)` name pairs. Label ids follow
    /// first appearance.
    pub fn from_named_edges<S: AsRef<str>>(edges: impl IntoIterator<Item = (S, S)>) -> Result<Self, TaxonomyError> {
        let mut b = TaxonomyBuilder::new();
        for (p, c) in edges {
            b.add_edge(p.as_ref(), c.as_ref())?;
        }
        b.build()
    }

    pub fn root(&self) -> LabelId {
        self.root
    }

    pub fn poset(&self) -> &Poset {
        &self.poset
    }

    pub fn stats(&self) -> TaxonomyStats {
        TaxonomyStats {
            n_labels: self.len(),
            width: self.width(),
            depth: self.depth(),
            n_roots: 1,
        }
    }

    /// Children of the root, i.e. the most general non-root concepts.
    pub fn top_level(&self) -> &[LabelId] {
        self.children_of(self.root)
    }

    /// Resolves a name, failing with `UnknownLabel`.
    pub fn resolve(&self, name: &str) -> Result<LabelId, TaxonomyError> {
        self.id(name).ok_or_else(|| TaxonomyError::UnknownLabel(name.to_string()))
    }
}

/// Incremental construction from names, as read from an edge list.
#[derive(Debug, Default, Clone)]
pub struct TaxonomyBuilder {
    names: Vec<String>,
    index: BTreeMap<String, LabelId>,
    declared: BTreeMap<String, ()>,
    edges: Vec<(LabelId, LabelId)>,
}

impl TaxonomyBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn intern(&mut self, name: &str) -> Result<LabelId, TaxonomyError> {
        if name.is_empty() {
            return Err(TaxonomyError::EmptyName);
        }
        if let Some(&id) = self.index.get(name) {
            return Ok(id);
        }
        let id = LabelId::from(self.names.len());
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Declares a standalone label. Declaring the same name twice is an error.
    pub fn add_label(&mut self, name: &str) -> Result<LabelId, TaxonomyError> {
        if self.declared.insert(name.to_string(), ()).is_some() {
            return Err(TaxonomyError::DuplicateName(name.to_string()));
        }
        self.intern(name)
    }

    pub fn add_edge(&mut self, parent: &str, child: &str) -> Result<(), TaxonomyError> {
        if parent == child {
            return Err(TaxonomyError::SelfEdge(parent.to_string()));
        }
        let p = self.intern(parent)?;
        let c = self.intern(child)?;
        self.edges.push((p, c));
        Ok(())
    }

    /// Repairs a multi-root input by adding `name` above every current root.
    pub fn add_synthetic_root(&mut self, name: &str) -> Result<(), TaxonomyError> {
        if self.index.contains_key(name) {
            return Err(TaxonomyError::DuplicateName(name.to_string()));
        }
        let mut has_parent = vec![false; self.names.len()];
        for &(_, c) in &self.edges {
            has_parent[c.index()] = true;
        }
        let roots: Vec<String> = (0..self.names.len())
            .filter(|&i| !has_parent[i])
            .map(|i| self.names[i].clone())
            .collect();
        self.intern(name)?;
        for r in roots {
            self.add_edge(name, &r)?;
        }
        Ok(())
    }

    pub fn build_poset(self) -> Result<Poset, TaxonomyError> {
        Poset::from_edges(self.names, &self.edges)
    }

    pub fn build(self) -> Result<Taxonomy, TaxonomyError> {
        Taxonomy::from_poset(self.build_poset()?)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use proptest::prelude::*;

    pub const CS_EDGES: [(&str, &str); 8] = [
        ("CS", "NLP"),
        ("CS", "Database"),
        ("CS", "ML"),
        ("NLP", "Vocabulary"),
        ("NLP", "LLMs"),
        ("ML", "LLMs"),
        ("ML", "RL"),
        ("ML", "Unsupervised"),
    ];

    pub fn cs_taxonomy() -> Taxonomy {
        Taxonomy::from_named_edges(CS_EDGES).unwrap()
    }

    pub fn ids(t: &Taxonomy, names: &[&str]) -> Vec<LabelId> {
        names.iter().map(|n| t.id(n).unwrap()).collect()
    }

    /// Random DAG edges over `n` nodes, always oriented low -> high id.
    pub fn dag_strategy(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1..=max_n).prop_flat_map(|n| {
            let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
            let k = pairs.len();
            (Just(n), proptest::collection::vec(any::<bool>(), k)).prop_map(move |(n, mask)| {
                let edges = pairs.iter().zip(mask).filter(|(_, m)| *m).map(|(e, _)| *e).collect();
                (n, edges)
            })
        })
    }

    pub fn names_of(t: &Taxonomy, set: &BitSet) -> Vec<String> {
        let mut v: Vec<String> = set.iter().map(|i| t.name(LabelId::from(i)).to_string()).collect();
        v.sort();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    #[test]
    fn cs_taxonomy_loads_with_cs_root() {
        let t = cs_taxonomy();
        assert_eq!(t.len(), 8);
        assert_eq!(t.name(t.root()), "CS");
        assert_eq!(t.stats(), TaxonomyStats { n_labels: 8, width: 3, depth: 2, n_roots: 1 });
    }

    #[test]
    fn leq_examples() {
        let t = cs_taxonomy();
        let [cs, llms, nlp, db] = [t.id("CS"), t.id("LLMs"), t.id("NLP"), t.id("Database")].map(Option::unwrap);
        assert!(t.leq(cs, llms).unwrap());
        assert!(t.leq(nlp, nlp).unwrap());
        assert!(!t.leq(db, llms).unwrap());
        assert!(matches!(t.leq(cs, LabelId(99)), Err(TaxonomyError::UnknownLabel(_))));
    }

    #[test]
    fn lower_set_examples() {
        let t = cs_taxonomy();
        let s = t.lower_set(&ids(&t, &["Vocabulary", "ML"])).unwrap();
        assert_eq!(names_of(&t, &s), ["CS"]);
        let s = t.lower_set(&ids(&t, &["LLMs"])).unwrap();
        assert_eq!(names_of(&t, &s), ["CS", "LLMs", "ML", "NLP"]);
        assert_eq!(t.lower_set(&[]).unwrap().count(), 8);
    }

    #[test]
    fn children_examples() {
        let t = cs_taxonomy();
        let ml = t.children(t.id("ML").unwrap()).unwrap();
        let names: Vec<_> = ml.iter().map(|&c| t.name(c)).collect();
        assert_eq!(names, ["LLMs", "RL", "Unsupervised"]);
        assert!(t.children(t.id("Vocabulary").unwrap()).unwrap().is_empty());
    }

    #[test]
    fn two_cycle_is_rejected() {
        let err = Taxonomy::from_named_edges([("A", "B"), ("B", "A")]).unwrap_err();
        match err {
            TaxonomyError::CycleDetected { witness } => {
                assert_eq!(witness.first(), witness.last());
                assert_eq!(witness.len(), 3);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn redundant_edge_is_reduced() {
        let t = Taxonomy::from_named_edges([("A", "B"), ("A", "C"), ("B", "C")]).unwrap();
        let edges: Vec<_> = t.cover_edges().map(|(p, c)| (t.name(p), t.name(c))).collect();
        assert_eq!(edges, [("A", "B"), ("B", "C")]);
    }

    #[test]
    fn multiple_roots_and_repair() {
        let mut b = TaxonomyBuilder::new();
        b.add_edge("A", "C").unwrap();
        b.add_edge("B", "C").unwrap();
        let err = b.clone().build().unwrap_err();
        assert_eq!(err, TaxonomyError::MultipleRoots(vec!["A".to_string(), "B".to_string()]));
        b.add_synthetic_root("ROOT").unwrap();
        let t = b.build().unwrap();
        assert_eq!(t.name(t.root()), "ROOT");
        assert_eq!(t.top_level().len(), 2);
    }

    #[test]
    fn incomparable_pair_is_not_weak_semilattice() {
        let p = Poset::from_index_edges(2, &[]).unwrap();
        assert!(!p.is_weak_semilattice());
        assert!(Poset::from_index_edges(0, &[]).unwrap().condorcet_winner().is_none());
    }

    #[test]
    fn single_label_stats_and_chain_width() {
        let mut b = TaxonomyBuilder::new();
        b.add_label("only").unwrap();
        assert!(matches!(b.add_label("only"), Err(TaxonomyError::DuplicateName(_))));
        let t = b.build().unwrap();
        assert_eq!(t.stats(), TaxonomyStats { n_labels: 1, width: 0, depth: 0, n_roots: 1 });
        let chain = Taxonomy::from_named_edges([("A", "B"), ("B", "C")]).unwrap();
        assert_eq!(chain.width(), 1);
    }

    #[test]
    fn bad_names_and_self_edges() {
        assert_eq!(Taxonomy::from_named_edges([("A", "A")]).unwrap_err(), TaxonomyError::SelfEdge("A".into()));
        assert_eq!(Taxonomy::from_named_edges([("", "A")]).unwrap_err(), TaxonomyError::EmptyName);
        assert_eq!(Taxonomy::from_poset(Poset::from_index_edges(0, &[]).unwrap()).unwrap_err(), TaxonomyError::NoRoot);
    }

    /// Floyd-Warshall closure, independent of the bitset machinery.
    fn closure(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
        let mut r = vec![vec![false; n]; n];
        for i in 0..n {
            r[i][i] = true;
        }
        for &(a, b) in edges {
            r[a][b] = true;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if r[i][k] && r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
        r
    }

    proptest! {
        #[test]
        fn order_axioms_hold((n, edges) in dag_strategy(9)) {
            let p = Poset::from_index_edges(n, &edges).unwrap();
            for a in p.labels() {
                prop_assert!(p.le(a, a));
                for b in p.labels() {
                    if p.le(a, b) && p.le(b, a) { prop_assert_eq!(a, b); }
                    for c in p.labels() {
                        if p.le(a, b) && p.le(b, c) { prop_assert!(p.le(a, c)); }
                    }
                }
            }
        }

        #[test]
        fn reduction_preserves_order((n, edges) in dag_strategy(10)) {
            let p = Poset::from_index_edges(n, &edges).unwrap();
            let full = closure(n, &edges);
            let reduced: Vec<(usize, usize)> = p.cover_edges().map(|(a, b)| (a.index(), b.index())).collect();
            let red = closure(n, &reduced);
            prop_assert_eq!(&full, &red);
            for a in 0..n {
                for b in 0..n {
                    prop_assert_eq!(p.le(LabelId::from(a), LabelId::from(b)), full[a][b]);
                }
            }
        }

        #[test]
        fn children_match_cover_definition((n, edges) in dag_strategy(10)) {
            let p = Poset::from_index_edges(n, &edges).unwrap();
            let r = closure(n, &edges);
            for a in 0..n {
                let expected: Vec<usize> = (0..n)
                    .filter(|&b| a != b && r[a][b] && (0..n).all(|m| !(r[a][m] && r[m][b]) || m == a || m == b))
                    .collect();
                let got: Vec<usize> = p.children(LabelId::from(a)).unwrap().iter().map(|c| c.index()).collect();
                prop_assert_eq!(got, expected);
            }
        }

        #[test]
        fn trees_are_weak_semilattices(parents in proptest::collection::vec(0usize..100, 0..20)) {
            // node i+1 hangs below some earlier node
            let edges: Vec<(usize, usize)> = parents.iter().enumerate().map(|(i, &p)| (p % (i + 1), i + 1)).collect();
            let p = Poset::from_index_edges(parents.len() + 1, &edges).unwrap();
            prop_assert!(p.is_weak_semilattice());
            prop_assert!(Taxonomy::from_poset(p).is_ok());
        }
    }
}
