//! Conversions between label sets and root-anchored label paths.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitset::BitSet;
use crate::tat::{TaskId, TatDecomposition};
use crate::taxonomy::{LabelId, Taxonomy};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PathError {
    #[error("empty label path")]
    Empty,
    #[error("path must start at the global root, found {0}")]
    NotRooted(String),
    #[error("{child} is not a child of {parent}")]
    NotCover { parent: String, child: String },
    #[error("unknown label id {0}")]
    UnknownLabel(u32),
    #[error("label set is not path-complete: {0} has no chain to the root")]
    NotPathComplete(String),
}

/// A chain `root ≺ l2 ≺ ... ≺ lK` of cover-related labels.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelPath {
    labels: Vec<LabelId>,
}

impl LabelPath {
    pub fn new(t: &Taxonomy, labels: Vec<LabelId>) -> Result<Self, PathError> {
        let first = *labels.first().ok_or(PathError::Empty)?;
        for &l in &labels {
            if !t.contains(l) {
                return Err(PathError::UnknownLabel(l.0));
            }
        }
        if first != t.root() {
            return Err(PathError::NotRooted(t.name(first).to_string()));
        }
        for w in labels.windows(2) {
            if !t.is_child(w[0], w[1]) {
                return Err(PathError::NotCover {
                    parent: t.name(w[0]).to_string(),
                    child: t.name(w[1]).to_string(),
                });
            }
        }
        Ok(LabelPath { labels })
    }

    pub fn root(t: &Taxonomy) -> Self {
        LabelPath { labels: vec![t.root()] }
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn last(&self) -> LabelId {
        *self.labels.last().expect("paths are non-empty")
    }

    /// Extends by a child of the last label.
    pub fn extended(&self, t: &Taxonomy, child: LabelId) -> Result<Self, PathError> {
        if !t.is_child(self.last(), child) {
            return Err(PathError::NotCover {
                parent: t.name(self.last()).to_string(),
                child: t.name(child).to_string(),
            });
        }
        let mut labels = self.labels.clone();
        labels.push(child);
        Ok(LabelPath { labels })
    }

    pub fn names<'a>(&self, t: &'a Taxonomy) -> Vec<&'a str> {
        self.labels.iter().map(|&l| t.name(l)).collect()
    }
}

/// Outcome of hierarchical label-set expansion for one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expansion {
    pub labels: BTreeSet<LabelId>,
    pub added: Vec<LabelId>,
    /// Number of distinct minimum-size completions the result was drawn from.
    pub alternatives: usize,
    /// False when the search budget ran out and the per-label greedy
    /// fallback was used instead.
    pub exact: bool,
}

const EXPANSION_BUDGET: usize = 200_000;

/// Adds the fewest labels needed so that every label lies on a chain from the
/// root inside the set. Among several minimum completions one is drawn
/// uniformly with a RNG seeded by `seed`.
pub fn expand_label_set(t: &Taxonomy, labels: &BTreeSet<LabelId>, seed: u64) -> Result<Expansion, PathError> {
    for &l in labels {
        if !t.contains(l) {
            return Err(PathError::UnknownLabel(l.0));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = BitSet::from_indices(t.len(), labels.iter().map(|l| l.index()));

    let mut search = MinCompletion { t, best: usize::MAX, solutions: BTreeSet::new(), visited: 0 };
    search.run(start.clone(), 0);

    let (chosen, alternatives, exact) = if search.visited <= EXPANSION_BUDGET {
        let sols: Vec<BitSet> = search.solutions.into_iter().collect();
        let n = sols.len();
        let pick = if n > 1 { rng.random_range(0..n) } else { 0 };
        (sols.into_iter().nth(pick).unwrap_or(start.clone()), n.max(1), true)
    } else {
        (greedy_completion(t, &start, &mut rng), 1, false)
    };

    let added: Vec<LabelId> = chosen.iter().filter(|&i| !start.contains(i)).map(LabelId::from).collect();
    Ok(Expansion {
        labels: chosen.iter().map(LabelId::from).collect(),
        added,
        alternatives,
        exact,
    })
}

fn unsatisfied(t: &Taxonomy, set: &BitSet) -> Option<LabelId> {
    set.iter()
        .map(LabelId::from)
        .find(|&l| l != t.root() && !t.parents_of(l).iter().any(|p| set.contains(p.index())))
}

/// Branch and bound: an unsatisfied label needs one of its parents, so
/// branching over parents reaches every minimum completion.
struct MinCompletion<'a> {
    t: &'a Taxonomy,
    best: usize,
    solutions: BTreeSet<BitSet>,
    visited: usize,
}

impl MinCompletion<'_> {
    fn run(&mut self, set: BitSet, added: usize) {
        self.visited += 1;
        if self.visited > EXPANSION_BUDGET {
            return;
        }
        match unsatisfied(self.t, &set) {
            None => {
                if added < self.best {
                    self.best = added;
                    self.solutions.clear();
                }
                if added == self.best {
                    self.solutions.insert(set);
                }
            }
            Some(l) => {
                if added + 1 > self.best {
                    return;
                }
                for &p in self.t.parents_of(l) {
                    let mut next = set.clone();
                    next.insert(p.index());
                    self.run(next, added + 1);
                }
            }
        }
    }
}

/// Per-label fallback: for each incomplete label, the root chain with the
/// fewest missing labels, ties drawn uniformly.
fn greedy_completion(t: &Taxonomy, start: &BitSet, rng: &mut ChaCha8Rng) -> BitSet {
    let mut set = start.clone();
    while let Some(l) = unsatisfied(t, &set) {
        // cost[x] = fewest labels outside `set` on a chain root..x, ways[x] =
        // number of chains achieving it. Labels are processed in increasing
        // order of depth via memoised recursion over parents.
        let mut memo: BTreeMap<LabelId, (usize, f64)> = BTreeMap::new();
        fn cost(t: &Taxonomy, set: &BitSet, x: LabelId, memo: &mut BTreeMap<LabelId, (usize, f64)>) -> (usize, f64) {
            if let Some(&c) = memo.get(&x) {
                return c;
            }
            let own = usize::from(!set.contains(x.index()));
            let r = if x == t.root() {
                (own, 1.0)
            } else {
                let mut best = (usize::MAX, 0.0);
                for &p in t.parents_of(x) {
                    let (c, w) = cost(t, set, p, memo);
                    if c < best.0 {
                        best = (c, w);
                    } else if c == best.0 {
                        best.1 += w;
                    }
                }
                (best.0 + own, best.1)
            };
            memo.insert(x, r);
            r
        }
        let mut x = l;
        while x != t.root() {
            let parents = t.parents_of(x);
            let costs: Vec<(usize, f64)> = parents.iter().map(|&p| cost(t, &set, p, &mut memo)).collect();
            let min = costs.iter().map(|c| c.0).min().expect("non-root has parents");
            let total: f64 = costs.iter().filter(|c| c.0 == min).map(|c| c.1).sum();
            let mut draw = rng.random::<f64>() * total;
            let mut next = parents[0];
            for (&p, &(c, w)) in parents.iter().zip(&costs) {
                if c == min {
                    next = p;
                    if draw < w {
                        break;
                    }
                    draw -= w;
                }
            }
            set.insert(next.index());
            x = next;
        }
    }
    set
}

/// Every label of `labels` lies on a root chain inside `labels`.
pub fn is_path_complete(t: &Taxonomy, labels: &BTreeSet<LabelId>) -> bool {
    let set = BitSet::from_indices(t.len(), labels.iter().map(|l| l.index()));
    unsatisfied(t, &set).is_none()
}

/// All maximal root-anchored chains inside `labels`, in lexicographic order of
/// label ids.
pub fn paths_from_label_set(t: &Taxonomy, labels: &BTreeSet<LabelId>) -> Result<Vec<LabelPath>, PathError> {
    if labels.is_empty() {
        return Ok(Vec::new());
    }
    for &l in labels {
        if !t.contains(l) {
            return Err(PathError::UnknownLabel(l.0));
        }
    }
    let set = BitSet::from_indices(t.len(), labels.iter().map(|l| l.index()));
    if let Some(orphan) = unsatisfied(t, &set) {
        return Err(PathError::NotPathComplete(t.name(orphan).to_string()));
    }
    if !set.contains(t.root().index()) {
        // Only reachable when every label is unsatisfied-free yet the root is
        // missing, which cannot happen for a non-empty set.
        return Err(PathError::NotPathComplete(t.name(t.root()).to_string()));
    }
    let mut out = Vec::new();
    let mut stack = vec![t.root()];
    walk_chains(t, &set, &mut stack, &mut out);
    Ok(out)
}

fn walk_chains(t: &Taxonomy, set: &BitSet, stack: &mut Vec<LabelId>, out: &mut Vec<LabelPath>) {
    let last = *stack.last().expect("non-empty");
    let mut extended = false;
    for &c in t.children_of(last) {
        if set.contains(c.index()) {
            extended = true;
            stack.push(c);
            walk_chains(t, set, stack, out);
            stack.pop();
        }
    }
    if !extended {
        out.push(LabelPath { labels: stack.clone() });
    }
}

/// Beam-search starting points: each maximal chain of the known labels
/// paired with every relevant task. The root-only chain is relevant to every
/// task.
pub fn inference_prefixes(
    t: &Taxonomy,
    d: &TatDecomposition,
    known: &BTreeSet<LabelId>,
) -> Result<Vec<(LabelPath, TaskId)>, PathError> {
    let mut out = Vec::new();
    for path in paths_from_label_set(t, known)? {
        if path.len() == 1 {
            for id in d.task_ids() {
                out.push((path.clone(), id));
            }
        } else {
            let tasks = d.relevant_tasks(&path).expect("path is non-empty");
            for id in tasks {
                out.push((path.clone(), id));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tat::decompose;
    use crate::taxonomy::fixtures::*;
    use proptest::prelude::*;

    fn set(t: &Taxonomy, names: &[&str]) -> BTreeSet<LabelId> {
        ids(t, names).into_iter().collect()
    }

    fn named(t: &Taxonomy, s: &BTreeSet<LabelId>) -> Vec<String> {
        let mut v: Vec<String> = s.iter().map(|&l| t.name(l).to_string()).collect();
        v.sort();
        v
    }

    #[test]
    fn path_validation() {
        let t = cs_taxonomy();
        assert!(LabelPath::new(&t, ids(&t, &["CS", "ML", "LLMs"])).is_ok());
        assert_eq!(LabelPath::new(&t, vec![]), Err(PathError::Empty));
        assert!(matches!(LabelPath::new(&t, ids(&t, &["NLP", "LLMs"])), Err(PathError::NotRooted(_))));
        assert!(matches!(LabelPath::new(&t, ids(&t, &["CS", "LLMs"])), Err(PathError::NotCover { .. })));
    }

    #[test]
    fn llms_expansion_adds_two_labels_either_way() {
        let t = cs_taxonomy();
        let mut seen = BTreeSet::new();
        for seed in 0..64 {
            let e = expand_label_set(&t, &set(&t, &["LLMs"]), seed).unwrap();
            assert_eq!(e.added.len(), 2);
            assert_eq!(e.alternatives, 2);
            assert!(e.exact);
            seen.insert(named(&t, &e.labels));
        }
        let expected: BTreeSet<Vec<String>> = [
            vec!["CS".to_string(), "LLMs".to_string(), "NLP".to_string()],
            vec!["CS".to_string(), "LLMs".to_string(), "ML".to_string()],
        ]
        .into_iter()
        .collect();
        assert_eq!(seen, expected);
        // Same seed, same draw.
        let a = expand_label_set(&t, &set(&t, &["LLMs"]), 7).unwrap();
        let b = expand_label_set(&t, &set(&t, &["LLMs"]), 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn complete_sets_are_unchanged() {
        let t = cs_taxonomy();
        for names in [&["CS"][..], &["CS", "ML", "RL"][..]] {
            let s = set(&t, names);
            let e = expand_label_set(&t, &s, 1).unwrap();
            assert_eq!(e.labels, s);
            assert!(e.added.is_empty());
        }
    }

    #[test]
    fn chains_of_cs_taxonomy_sets() {
        let t = cs_taxonomy();
        let p = paths_from_label_set(&t, &set(&t, &["CS", "NLP", "ML", "LLMs", "RL"])).unwrap();
        let got: Vec<Vec<&str>> = p.iter().map(|p| p.names(&t)).collect();
        assert_eq!(got, [vec!["CS", "NLP", "LLMs"], vec!["CS", "ML", "LLMs"], vec!["CS", "ML", "RL"]]);
        let p = paths_from_label_set(&t, &set(&t, &["CS"])).unwrap();
        assert_eq!(p.iter().map(|p| p.names(&t)).collect::<Vec<_>>(), [vec!["CS"]]);
        let p = paths_from_label_set(&t, &set(&t, &["CS", "Database"])).unwrap();
        assert_eq!(p.iter().map(|p| p.names(&t)).collect::<Vec<_>>(), [vec!["CS", "Database"]]);
        assert_eq!(
            paths_from_label_set(&t, &set(&t, &["CS", "RL"])),
            Err(PathError::NotPathComplete("RL".into()))
        );
    }

    #[test]
    fn prefixes_pair_chains_with_tasks() {
        let t = cs_taxonomy();
        let d = decompose(&t).unwrap();
        let p = inference_prefixes(&t, &d, &set(&t, &["CS", "NLP"])).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].0.names(&t), ["CS", "NLP"]);
        assert_eq!(p[0].1, TaskId(0));
        let p = inference_prefixes(&t, &d, &set(&t, &["CS"])).unwrap();
        assert_eq!(p.iter().map(|x| x.1).collect::<Vec<_>>(), [TaskId(0), TaskId(1), TaskId(2)]);
        let p = inference_prefixes(&t, &d, &set(&t, &["CS", "NLP", "LLMs"])).unwrap();
        assert_eq!(p.len(), 2);
        assert!(p.iter().all(|(path, _)| path.names(&t) == ["CS", "NLP", "LLMs"]));
        assert_eq!(p.iter().map(|x| x.1).collect::<Vec<_>>(), [TaskId(0), TaskId(2)]);
    }

    #[test]
    fn greedy_fallback_completes() {
        let t = cs_taxonomy();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let start = BitSet::from_indices(t.len(), [t.id("LLMs").unwrap().index(), t.id("RL").unwrap().index()]);
        let s = greedy_completion(&t, &start, &mut rng);
        assert!(unsatisfied(&t, &s).is_none());
    }

    fn taxonomy_strategy(max_n: usize) -> impl Strategy<Value = Taxonomy> {
        dag_strategy(max_n - 1).prop_map(|(n, edges)| {
            let p = crate::taxonomy::Poset::from_index_edges(n, &edges).unwrap();
            let mut e = edges.clone();
            for r in p.minimal_labels() {
                e.push((n, r.index()));
            }
            Taxonomy::from_poset(crate::taxonomy::Poset::from_index_edges(n + 1, &e).unwrap()).unwrap()
        })
    }

    fn subset_strategy() -> impl Strategy<Value = (Taxonomy, BTreeSet<LabelId>)> {
        taxonomy_strategy(12).prop_flat_map(|t| {
            let n = t.len();
            (Just(t), proptest::collection::btree_set(0..n, 0..4))
                .prop_map(|(t, s)| (t, s.into_iter().map(LabelId::from).collect()))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn expansion_is_minimal_and_idempotent((t, labels) in subset_strategy(), seed in any::<u64>()) {
            let e = expand_label_set(&t, &labels, seed).unwrap();
            prop_assert!(e.labels.is_superset(&labels));
            prop_assert!(is_path_complete(&t, &e.labels));
            let again = expand_label_set(&t, &e.labels, seed).unwrap();
            prop_assert_eq!(&again.labels, &e.labels);
            // Brute force: no path-complete superset with fewer additions.
            let n = t.len();
            let extra: Vec<usize> = (0..n).filter(|i| !labels.contains(&LabelId::from(*i))).collect();
            for mask in 0u32..(1 << extra.len()) {
                if (mask.count_ones() as usize) < e.added.len() {
                    let mut s = labels.clone();
                    for (bit, &x) in extra.iter().enumerate() {
                        if mask >> bit & 1 == 1 { s.insert(LabelId::from(x)); }
                    }
                    prop_assert!(!is_path_complete(&t, &s));
                }
            }
        }

        #[test]
        fn chains_round_trip((t, labels) in subset_strategy()) {
            let e = expand_label_set(&t, &labels, 0).unwrap();
            let paths = paths_from_label_set(&t, &e.labels).unwrap();
            let mut union = BTreeSet::new();
            for p in &paths {
                prop_assert!(LabelPath::new(&t, p.labels().to_vec()).is_ok());
                union.extend(p.labels().iter().copied());
            }
            prop_assert_eq!(union, e.labels);
            let mut sorted = paths.clone();
            sorted.sort();
            prop_assert_eq!(sorted, paths);
        }
    }
}
