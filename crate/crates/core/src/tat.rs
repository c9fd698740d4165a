//! Taxonomy-aware tasks (TATs).
//!
//! A family of label sets forms a TAT decomposition when
//!
//! 1. every set is a proper, non-empty subset of the taxonomy that has a
//!    lower bound for each of its subsets (a weak-semilattice),
//! 2. no set is contained in a different member of the family,
//! 3. every set is upward closed,
//! 4. every label except the global root belongs to some set.
//!
//! The unique family with these properties is the set of upward closures of
//! the root's children, which is what [`decompose`] builds.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::bitset::BitSet;
use crate::path::LabelPath;
use crate::taxonomy::{LabelId, Taxonomy};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

impl TaskId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Debug for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.0)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TatError {
    #[error("taxonomy is not a weak-semilattice")]
    NotWeakSemilattice,
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("empty label path")]
    EmptyPath,
}

/// One task: an upward-closed sub-weak-semilattice rooted at `root`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSet {
    pub id: TaskId,
    pub root: LabelId,
    members: BitSet,
    labels: Vec<LabelId>,
    pub width: usize,
}

impl TaskSet {
    /// The upward closure of `root`.
    pub fn upward_closure(t: &Taxonomy, id: TaskId, root: LabelId) -> Self {
        let members = t.above(root).clone();
        let labels: Vec<LabelId> = members.iter().map(LabelId::from).collect();
        // Children of a member stay inside an upward-closed set.
        let width = labels.iter().map(|&l| t.children_of(l).len()).max().unwrap_or(0);
        TaskSet { id, root, members, labels, width }
    }

    pub fn contains(&self, l: LabelId) -> bool {
        self.members.contains(l.index())
    }

    /// Members in ascending id order.
    pub fn labels(&self) -> &[LabelId] {
        &self.labels
    }

    pub fn members(&self) -> &BitSet {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Position of `l` among the task's labels.
    pub fn position(&self, l: LabelId) -> Option<usize> {
        self.labels.binary_search(&l).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TatDecomposition {
    tasks: Vec<TaskSet>,
    label_to_tasks: Vec<Vec<TaskId>>,
}

/// One task per child of the global root, ordered by root label id.
pub fn decompose(t: &Taxonomy) -> Result<TatDecomposition, TatError> {
    if !t.is_weak_semilattice() {
        return Err(TatError::NotWeakSemilattice);
    }
    let tasks = t
        .top_level()
        .iter()
        .enumerate()
        .map(|(i, &c)| TaskSet::upward_closure(t, TaskId(i as u32), c))
        .collect();
    Ok(TatDecomposition::from_tasks(t.len(), tasks))
}

impl TatDecomposition {
    pub fn from_tasks(n_labels: usize, tasks: Vec<TaskSet>) -> Self {
        let mut label_to_tasks = alloc::vec![Vec::new(); n_labels];
        for task in &tasks {
            for &l in task.labels() {
                label_to_tasks[l.index()].push(task.id);
            }
        }
        TatDecomposition { tasks, label_to_tasks }
    }

    pub fn tasks(&self) -> &[TaskSet] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, id: TaskId) -> Result<&TaskSet, TatError> {
        self.tasks.iter().find(|t| t.id == id).ok_or(TatError::UnknownTask(id))
    }

    pub fn task_ids(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.tasks.iter().map(|t| t.id)
    }

    /// Tasks containing `l`; empty for the global root.
    pub fn tasks_of(&self, l: LabelId) -> &[TaskId] {
        self.label_to_tasks.get(l.index()).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Tasks sharing at least one label with the path.
    pub fn relevant_tasks(&self, path: &LabelPath) -> Result<BTreeSet<TaskId>, TatError> {
        self.relevant_to_labels(path.labels())
    }

    pub fn relevant_to_labels(&self, labels: &[LabelId]) -> Result<BTreeSet<TaskId>, TatError> {
        if labels.is_empty() {
            return Err(TatError::EmptyPath);
        }
        Ok(labels.iter().flat_map(|&l| self.tasks_of(l).iter().copied()).collect())
    }

    /// Drops a task, keeping the ids of the others.
    pub fn without(&self, id: TaskId) -> Self {
        let tasks = self.tasks.iter().filter(|t| t.id != id).cloned().collect();
        Self::from_tasks(self.label_to_tasks.len(), tasks)
    }

    pub fn average_width(&self) -> f64 {
        if self.tasks.is_empty() {
            return 0.0;
        }
        self.tasks.iter().map(|t| t.width as f64).sum::<f64>() / self.tasks.len() as f64
    }

    /// Stable textual form, used for hashing a decomposition.
    pub fn canonical_string(&self, t: &Taxonomy) -> String {
        use core::fmt::Write;
        let mut s = String::new();
        for task in &self.tasks {
            let _ = write!(s, "{}:{}:{}:", task.id.0, t.name(task.root), task.width);
            for (i, &l) in task.labels().iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                s.push_str(t.name(l));
            }
            s.push('\n');
        }
        s
    }
}

/// First violated condition found by [`verify_family`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TatViolation {
    /// Condition 1: set `set` is empty, the whole taxonomy, or lacks a lower
    /// bound for the listed subset.
    NotWeakSemilattice { set: usize, witness: Vec<LabelId> },
    /// Condition 2: set `inner` is contained in set `outer`.
    Contained { inner: usize, outer: usize },
    /// Condition 3: `member` is in set `set` but `above` (>= member) is not.
    NotUpwardClosed { set: usize, member: LabelId, above: LabelId },
    /// Condition 4: `label` is in no set.
    Uncovered { label: LabelId },
}

impl TatViolation {
    pub fn condition(&self) -> u8 {
        match self {
            TatViolation::NotWeakSemilattice { .. } => 1,
            TatViolation::Contained { .. } => 2,
            TatViolation::NotUpwardClosed { .. } => 3,
            TatViolation::Uncovered { .. } => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TatReport {
    pub violation: Option<TatViolation>,
}

impl TatReport {
    pub fn is_valid(&self) -> bool {
        self.violation.is_none()
    }
}

pub fn verify_tat(t: &Taxonomy, d: &TatDecomposition) -> TatReport {
    let sets: Vec<BitSet> = d.tasks.iter().map(|task| task.members.clone()).collect();
    verify_family(t, &sets)
}

/// Checks the four conditions in order on an arbitrary family of label sets.
pub fn verify_family(t: &Taxonomy, sets: &[BitSet]) -> TatReport {
    let n = t.len();
    let fail = |v| TatReport { violation: Some(v) };

    for (i, s) in sets.iter().enumerate() {
        if s.is_empty() || s.count() == n {
            return fail(TatViolation::NotWeakSemilattice { set: i, witness: Vec::new() });
        }
        // A finite poset is a weak-semilattice iff it has a least element.
        let has_least = s.iter().any(|c| s.is_subset(t.above(LabelId::from(c))));
        if !has_least {
            let witness = s.iter().map(LabelId::from).collect();
            return fail(TatViolation::NotWeakSemilattice { set: i, witness });
        }
    }
    for (i, a) in sets.iter().enumerate() {
        for (j, b) in sets.iter().enumerate() {
            if i != j && a.is_subset(b) {
                return fail(TatViolation::Contained { inner: i, outer: j });
            }
        }
    }
    for (i, s) in sets.iter().enumerate() {
        for m in s.iter() {
            let up = t.above(LabelId::from(m));
            if let Some(x) = up.iter().find(|&x| !s.contains(x)) {
                return fail(TatViolation::NotUpwardClosed {
                    set: i,
                    member: LabelId::from(m),
                    above: LabelId::from(x),
                });
            }
        }
    }
    let bottom = t.lower_set(&t.labels().collect::<Vec<_>>()).expect("labels are known");
    for l in 0..n {
        if !bottom.contains(l) && !sets.iter().any(|s| s.contains(l)) {
            return fail(TatViolation::Uncovered { label: LabelId::from(l) });
        }
    }
    TatReport { violation: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::fixtures::*;
    use crate::taxonomy::Taxonomy;
    use alloc::vec;

    fn task_names(t: &Taxonomy, task: &TaskSet) -> Vec<String> {
        names_of(t, task.members())
    }

    #[test]
    fn cs_taxonomy_has_three_tasks() {
        let t = cs_taxonomy();
        let d = decompose(&t).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(task_names(&t, &d.tasks()[0]), ["LLMs", "NLP", "Vocabulary"]);
        assert_eq!(task_names(&t, &d.tasks()[1]), ["Database"]);
        assert_eq!(task_names(&t, &d.tasks()[2]), ["LLMs", "ML", "RL", "Unsupervised"]);
        assert_eq!(d.tasks_of(t.id("LLMs").unwrap()), &[TaskId(0), TaskId(2)]);
        assert!(d.tasks_of(t.root()).is_empty());
        assert_eq!(d.tasks().iter().map(|x| x.width).collect::<Vec<_>>(), [2, 0, 3]);
        assert!(verify_tat(&t, &d).is_valid());
    }

    #[test]
    fn tree_tasks_are_disjoint() {
        let t = Taxonomy::from_named_edges([("r", "a"), ("r", "b"), ("a", "a1"), ("a", "a2"), ("b", "b1")]).unwrap();
        let d = decompose(&t).unwrap();
        assert_eq!(d.len(), 2);
        assert!(!d.tasks()[0].members().intersects(d.tasks()[1].members()));
    }

    #[test]
    fn verify_reports_missing_upward_label() {
        let t = cs_taxonomy();
        let d = decompose(&t).unwrap();
        let mut sets: Vec<BitSet> = d.tasks().iter().map(|x| x.members().clone()).collect();
        sets[0].remove(t.id("LLMs").unwrap().index());
        let r = verify_family(&t, &sets);
        assert_eq!(
            r.violation,
            Some(TatViolation::NotUpwardClosed {
                set: 0,
                member: t.id("NLP").unwrap(),
                above: t.id("LLMs").unwrap()
            })
        );
        assert_eq!(r.violation.unwrap().condition(), 3);
    }

    #[test]
    fn verify_reports_duplicate_task() {
        let t = cs_taxonomy();
        let d = decompose(&t).unwrap();
        let mut tasks = d.tasks().to_vec();
        tasks.push(tasks[1].clone());
        let dup = TatDecomposition::from_tasks(t.len(), tasks);
        assert_eq!(verify_tat(&t, &dup).violation.unwrap().condition(), 2);
    }

    #[test]
    fn verify_reports_uncovered_and_whole_set() {
        let t = cs_taxonomy();
        let d = decompose(&t).unwrap();
        let sets: Vec<BitSet> = d.tasks()[..2].iter().map(|x| x.members().clone()).collect();
        assert_eq!(verify_family(&t, &sets).violation, Some(TatViolation::Uncovered { label: t.id("ML").unwrap() }));
        let whole = vec![BitSet::full(t.len())];
        assert_eq!(verify_family(&t, &whole).violation.unwrap().condition(), 1);
    }

    #[test]
    fn relevant_tasks_examples() {
        let t = cs_taxonomy();
        let d = decompose(&t).unwrap();
        let p = LabelPath::new(&t, ids(&t, &["CS", "NLP", "LLMs"])).unwrap();
        assert_eq!(d.relevant_tasks(&p).unwrap().into_iter().collect::<Vec<_>>(), [TaskId(0), TaskId(2)]);
        let p = LabelPath::new(&t, ids(&t, &["CS"])).unwrap();
        assert!(d.relevant_tasks(&p).unwrap().is_empty());
        let p = LabelPath::new(&t, ids(&t, &["CS", "Database"])).unwrap();
        assert_eq!(d.relevant_tasks(&p).unwrap().into_iter().collect::<Vec<_>>(), [TaskId(1)]);
        assert_eq!(d.relevant_to_labels(&[]), Err(TatError::EmptyPath));
    }

    #[test]
    fn single_label_taxonomy_has_no_tasks() {
        let mut b = crate::taxonomy::TaxonomyBuilder::new();
        b.add_label("r").unwrap();
        let t = b.build().unwrap();
        let d = decompose(&t).unwrap();
        assert!(d.is_empty());
        assert!(verify_tat(&t, &d).is_valid());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn decomposition_always_verifies((n, edges) in dag_strategy(30)) {
                // Hang every source below a fresh root so the poset is a taxonomy.
                let mut e = edges.clone();
                let p = crate::taxonomy::Poset::from_index_edges(n, &edges).unwrap();
                for r in p.minimal_labels() { e.push((n, r.index())); }
                let t = Taxonomy::from_poset(crate::taxonomy::Poset::from_index_edges(n + 1, &e).unwrap()).unwrap();
                let d = decompose(&t).unwrap();
                prop_assert!(verify_tat(&t, &d).is_valid());
                for task in d.tasks() {
                    prop_assert!(task.width <= t.width());
                }
                // A label sits in two tasks iff it is above two distinct top-level labels.
                for l in t.labels() {
                    let tops = t.top_level().iter().filter(|&&c| t.le(c, l)).count();
                    prop_assert_eq!(d.tasks_of(l).len(), tops);
                }
            }
        }
    }
}
