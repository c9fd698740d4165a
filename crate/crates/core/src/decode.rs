//! Taxonomy-constrained beam search and leaf-score aggregation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::model::{Model, ModelError, NextLabel, NextLabelDistribution};
use crate::path::{inference_prefixes, LabelPath, PathError};
use crate::tat::{TaskId, TaskSet, TatDecomposition};
use crate::taxonomy::{LabelId, Taxonomy};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("beam_width must be at least 1")]
    ZeroBeam,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Path(#[from] PathError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    pub beam_width: usize,
    /// Most labels appended beyond the prefix.
    pub max_extension_len: usize,
    /// Also credit interior labels of predicted paths, not only leaves.
    pub score_interior: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig { beam_width: 10, max_extension_len: 16, score_interior: false }
    }
}

/// Source of next-label distributions for a fixed document.
pub trait NextLabelScorer {
    fn has_task(&self, task: TaskId) -> bool;
    fn distribution(&self, prefix: &LabelPath, task: TaskId) -> Result<NextLabelDistribution, DecodeError>;
}

/// A model bound to one document's encoded text.
pub struct ModelScorer<'m> {
    pub model: &'m Model,
    pub memory: Tensor,
}

impl<'m> ModelScorer<'m> {
    pub fn new(model: &'m Model, tokens: &[u32]) -> Result<Self, DecodeError> {
        Ok(ModelScorer { model, memory: model.encode(tokens)? })
    }
}

impl NextLabelScorer for ModelScorer<'_> {
    fn has_task(&self, task: TaskId) -> bool {
        self.model.has_task(task)
    }

    fn distribution(&self, prefix: &LabelPath, task: TaskId) -> Result<NextLabelDistribution, DecodeError> {
        Ok(self.model.next_distribution(&self.memory, prefix, task)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPath {
    pub path: LabelPath,
    /// Sum of renormalised step log-probabilities beyond the prefix.
    pub log_prob: f64,
    pub terminated: bool,
}

impl ScoredPath {
    pub fn prob(&self) -> f64 {
        math::exp(self.log_prob)
    }
}

/// Admissible next steps after `last` within `task`, with probabilities
/// renormalised over that set. Children come in ascending id order, STOP last.
pub fn admissible_steps(t: &Taxonomy, task: &TaskSet, dist: &NextLabelDistribution, last: LabelId) -> Vec<(NextLabel, f64)> {
    let mut steps: Vec<(NextLabel, f64)> = t
        .children_of(last)
        .iter()
        .filter(|c| task.contains(**c))
        .map(|&c| (NextLabel::Label(c), dist.prob(NextLabel::Label(c))))
        .collect();
    steps.push((NextLabel::Stop, dist.stop_prob()));
    let z: f64 = steps.iter().map(|s| s.1).sum();
    if z > 0.0 {
        for s in &mut steps {
            s.1 /= z;
        }
    } else {
        let u = 1.0 / steps.len() as f64;
        for s in &mut steps {
            s.1 = u;
        }
    }
    steps
}

fn has_task_children(t: &Taxonomy, task: &TaskSet, l: LabelId) -> bool {
    t.children_of(l).iter().any(|c| task.contains(*c))
}

fn beam_order(a: &ScoredPath, b: &ScoredPath) -> Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then_with(|| a.path.labels().cmp(b.path.labels()))
        .then_with(|| b.terminated.cmp(&a.terminated))
}

/// Extends `prefix` inside `task`. Each round expands every open beam over
/// its admissible steps, then keeps the best `beam_width` of the finished
/// and open candidates together. A path ends on STOP or when its last label
/// has no child in the task. Ties go to the lexicographically smaller path.
pub fn beam_extend<S: NextLabelScorer + ?Sized>(
    t: &Taxonomy,
    scorer: &S,
    prefix: &LabelPath,
    task: &TaskSet,
    cfg: &BeamConfig,
) -> Result<Vec<ScoredPath>, DecodeError> {
    if cfg.beam_width == 0 {
        return Err(DecodeError::ZeroBeam);
    }
    if !scorer.has_task(task.id) {
        return Err(DecodeError::UnknownTask(task.id));
    }
    let start = ScoredPath { path: prefix.clone(), log_prob: 0.0, terminated: !has_task_children(t, task, prefix.last()) };
    let mut pool = alloc::vec![start];
    for _ in 0..cfg.max_extension_len {
        if pool.iter().all(|p| p.terminated) {
            break;
        }
        let mut next = Vec::new();
        for beam in pool {
            if beam.terminated {
                next.push(beam);
                continue;
            }
            let dist = scorer.distribution(&beam.path, task.id)?;
            for (step, p) in admissible_steps(t, task, &dist, beam.path.last()) {
                if p <= 0.0 {
                    continue;
                }
                let log_prob = beam.log_prob + math::ln(p);
                match step {
                    NextLabel::Stop => next.push(ScoredPath { path: beam.path.clone(), log_prob, terminated: true }),
                    NextLabel::Label(c) => {
                        let path = beam.path.extended(t, c)?;
                        let terminated = !has_task_children(t, task, c);
                        next.push(ScoredPath { path, log_prob, terminated });
                    }
                }
            }
        }
        next.sort_by(beam_order);
        next.truncate(cfg.beam_width);
        pool = next;
    }
    pool.sort_by(beam_order);
    Ok(pool)
}

/// One contribution to a label's score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub prefix: Vec<LabelId>,
    pub task: TaskId,
    pub path: Vec<LabelId>,
    pub prob: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelScores {
    pub scores: BTreeMap<LabelId, f64>,
    pub provenance: BTreeMap<LabelId, Vec<Contribution>>,
}

/// Sums, over every (prefix, task) beam and every terminated path, the path
/// probability into the score of the path's last label. With
/// `score_interior`, every label the path added beyond its prefix is
/// credited. Labels in `known` are dropped.
pub fn aggregate(
    beams: &[(LabelPath, TaskId, Vec<ScoredPath>)],
    known: &BTreeSet<LabelId>,
    score_interior: bool,
) -> LabelScores {
    let mut out = LabelScores::default();
    for (prefix, task, paths) in beams {
        for sp in paths.iter().filter(|p| p.terminated) {
            let prob = sp.prob();
            let credited: &[LabelId] = if score_interior {
                &sp.path.labels()[prefix.len().min(sp.path.len())..]
            } else {
                core::slice::from_ref(sp.path.labels().last().expect("non-empty"))
            };
            for &l in credited {
                if known.contains(&l) {
                    continue;
                }
                *out.scores.entry(l).or_insert(0.0) += prob;
                out.provenance.entry(l).or_default().push(Contribution {
                    prefix: prefix.labels().to_vec(),
                    task: *task,
                    path: sp.path.labels().to_vec(),
                    prob,
                });
            }
        }
    }
    out
}

/// Top `k` labels by score; equal scores go to the smaller id.
pub fn rank(scores: &LabelScores, k: usize) -> Vec<(LabelId, f64)> {
    let mut v: Vec<(LabelId, f64)> = scores.scores.iter().map(|(l, s)| (*l, *s)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

/// Beam-decodes every (maximal known chain, relevant task) pair the scorer
/// supports and aggregates. `known` must be path-complete.
pub fn complete<S: NextLabelScorer + ?Sized>(
    t: &Taxonomy,
    d: &TatDecomposition,
    scorer: &S,
    known: &BTreeSet<LabelId>,
    cfg: &BeamConfig,
) -> Result<LabelScores, DecodeError> {
    let mut beams = Vec::new();
    for (prefix, id) in inference_prefixes(t, d, known)? {
        if !scorer.has_task(id) {
            continue;
        }
        let task = d.task(id).map_err(|_| DecodeError::UnknownTask(id))?;
        let paths = beam_extend(t, scorer, &prefix, task, cfg)?;
        beams.push((prefix, id, paths));
    }
    Ok(aggregate(&beams, known, cfg.score_interior))
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Deterministic pseudo-random distributions keyed by (prefix, task).
    pub struct HashScorer<'a> {
        pub d: &'a TatDecomposition,
        pub seed: u64,
    }

    impl NextLabelScorer for HashScorer<'_> {
        fn has_task(&self, task: TaskId) -> bool {
            self.d.task(task).is_ok()
        }

        fn distribution(&self, prefix: &LabelPath, task: TaskId) -> Result<NextLabelDistribution, DecodeError> {
            let ts = self.d.task(task).map_err(|_| DecodeError::UnknownTask(task))?;
            let mut key = alloc::vec::Vec::new();
            key.extend_from_slice(&task.0.to_le_bytes());
            for l in prefix.labels() {
                key.extend_from_slice(&l.0.to_le_bytes());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(math::derive_seed(self.seed, &key));
            let raw: Vec<f64> = (0..=ts.len()).map(|_| rng.random_range(0.01..1.0)).collect();
            let z: f64 = raw.iter().sum();
            Ok(NextLabelDistribution { task, labels: ts.labels().to_vec(), probs: raw.iter().map(|x| x / z).collect() })
        }
    }

    /// Every terminated extension of `prefix` with its exact probability.
    pub fn enumerate<S: NextLabelScorer>(t: &Taxonomy, s: &S, prefix: &LabelPath, task: &TaskSet) -> Vec<(Vec<LabelId>, f64)> {
        let mut out = Vec::new();
        fn go<S: NextLabelScorer>(t: &Taxonomy, s: &S, p: &LabelPath, task: &TaskSet, lp: f64, out: &mut Vec<(Vec<LabelId>, f64)>) {
            if !has_task_children(t, task, p.last()) {
                out.push((p.labels().to_vec(), lp));
                return;
            }
            let dist = s.distribution(p, task.id).unwrap();
            for (step, q) in admissible_steps(t, task, &dist, p.last()) {
                match step {
                    NextLabel::Stop => out.push((p.labels().to_vec(), lp + math::ln(q))),
                    NextLabel::Label(c) => go(t, s, &p.extended(t, c).unwrap(), task, lp + math::ln(q), out),
                }
            }
        }
        go(t, s, prefix, task, 0.0, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use crate::tat::decompose;
    use crate::taxonomy::fixtures::{dag_strategy, cs_taxonomy, ids};
    use alloc::string::String;
    use alloc::vec;
    use approx::assert_relative_eq;

    struct Table(BTreeMap<(Vec<LabelId>, TaskId), NextLabelDistribution>);

    impl NextLabelScorer for Table {
        fn has_task(&self, _: TaskId) -> bool {
            true
        }
        fn distribution(&self, p: &LabelPath, task: TaskId) -> Result<NextLabelDistribution, DecodeError> {
            Ok(self.0[&(p.labels().to_vec(), task)].clone())
        }
    }

    #[test]
    fn chain_probability_is_the_product_of_renormalised_steps() {
        let t = Taxonomy::from_named_edges([("A", "B"), ("B", "C")]).unwrap();
        let d = decompose(&t).unwrap();
        let task = &d.tasks()[0];
        let [a, b, c] = [0, 1, 2].map(LabelId::from);
        // layout: B, C, STOP
        let mut m = BTreeMap::new();
        m.insert((vec![a], task.id), NextLabelDistribution { task: task.id, labels: vec![b, c], probs: vec![0.6, 0.3, 0.1] });
        m.insert((vec![a, b], task.id), NextLabelDistribution { task: task.id, labels: vec![b, c], probs: vec![0.2, 0.5, 0.3] });
        let s = Table(m);
        let root = LabelPath::root(&t);
        let out = beam_extend(&t, &s, &root, task, &BeamConfig { beam_width: 1, ..Default::default() }).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].path.labels(), &[a, b, c]);
        // P(B|A) over {B, STOP} = 0.6/0.7; P(C|AB) over {C, STOP} = 0.5/0.8; C is a leaf
        let expect = libm::log(0.6 / 0.7) + libm::log(0.5 / 0.8);
        assert_relative_eq!(out[0].log_prob, expect, epsilon = 1e-14);
        assert!(out[0].terminated);
    }

    #[test]
    fn wide_beam_equals_enumeration_on_cs_taxonomy() {
        let t = cs_taxonomy();
        let d = decompose(&t).unwrap();
        let s = HashScorer { d: &d, seed: 3 };
        let root = LabelPath::root(&t);
        for task in d.tasks() {
            let mut oracle = enumerate(&t, &s, &root, task);
            oracle.sort_by(|a, b| a.0.cmp(&b.0));
            let cfg = BeamConfig { beam_width: 64, ..Default::default() };
            let mut got: Vec<_> = beam_extend(&t, &s, &root, task, &cfg).unwrap().into_iter().map(|p| (p.path.labels().to_vec(), p.log_prob)).collect();
            got.sort_by(|a, b| a.0.cmp(&b.0));
            assert_eq!(got, oracle);
            let mass: f64 = got.iter().map(|g| libm::exp(g.1)).sum();
            assert!((mass - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn aggregate_sums_leaves_across_tasks_and_drops_known() {
        let t = cs_taxonomy();
        let [cs, nlp, ml, llms] = <[LabelId; 4]>::try_from(ids(&t, &["CS", "NLP", "ML", "LLMs"])).unwrap();
        let p = |v: Vec<LabelId>, prob: f64| ScoredPath { path: LabelPath::new(&t, v).unwrap(), log_prob: libm::log(prob), terminated: true };
        let beams = vec![
            (LabelPath::new(&t, vec![cs, nlp]).unwrap(), TaskId(1), vec![p(vec![cs, nlp, llms], 0.4), p(vec![cs, nlp], 0.6)]),
            (LabelPath::new(&t, vec![cs, ml]).unwrap(), TaskId(2), vec![p(vec![cs, ml, llms], 0.1)]),
        ];
        let known: BTreeSet<LabelId> = [cs, nlp].into_iter().collect();
        let s = aggregate(&beams, &known, false);
        assert_relative_eq!(s.scores[&llms], 0.5, epsilon = 1e-12);
        assert!(!s.scores.contains_key(&nlp));
        assert_eq!(s.provenance[&llms].len(), 2);
        assert!(!s.scores.contains_key(&ml));
        // ML is neither a leaf nor beyond its prefix
        let interior = aggregate(&beams, &known, true);
        assert_eq!(interior.scores.get(&ml), None);
        let two = vec![(LabelPath::root(&t), TaskId(0), vec![p(vec![cs, ml], 0.3), p(vec![cs, ml], 0.2)])];
        assert_relative_eq!(aggregate(&two, &BTreeSet::new(), false).scores[&ml], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn interior_flag_credits_added_labels() {
        let t = cs_taxonomy();
        let [cs, ml, llms] = <[LabelId; 3]>::try_from(ids(&t, &["CS", "ML", "LLMs"])).unwrap();
        let sp = ScoredPath { path: LabelPath::new(&t, vec![cs, ml, llms]).unwrap(), log_prob: libm::log(0.25), terminated: true };
        let beams = vec![(LabelPath::root(&t), TaskId(0), vec![sp])];
        let s = aggregate(&beams, &BTreeSet::new(), true);
        assert_eq!(s.scores.keys().copied().collect::<Vec<_>>(), vec![ml, llms]);
    }

    #[test]
    fn rank_ties_and_truncation() {
        let mut s = LabelScores::default();
        for (l, v) in [(2u32, 0.3), (0, 0.5), (1, 0.2)] {
            s.scores.insert(LabelId(l), v);
        }
        assert_eq!(rank(&s, 2).iter().map(|x| x.0 .0).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(rank(&s, 10).len(), 3);
        let mut tie = LabelScores::default();
        tie.scores.insert(LabelId(5), 0.5);
        tie.scores.insert(LabelId(3), 0.5);
        assert_eq!(rank(&tie, 1)[0].0, LabelId(3));
    }

    #[test]
    fn zero_beam_and_unknown_task() {
        let t = cs_taxonomy();
        let d = decompose(&t).unwrap();
        let s = HashScorer { d: &d, seed: 0 };
        let root = LabelPath::root(&t);
        let cfg = BeamConfig { beam_width: 0, ..Default::default() };
        assert_eq!(beam_extend(&t, &s, &root, &d.tasks()[0], &cfg), Err(DecodeError::ZeroBeam));
        let mut fake = d.tasks()[0].clone();
        fake.id = TaskId(99);
        assert_eq!(beam_extend(&t, &s, &root, &fake, &BeamConfig::default()), Err(DecodeError::UnknownTask(TaskId(99))));
    }

    #[test]
    fn complete_runs_every_relevant_prefix() {
        let t = cs_taxonomy();
        let d = decompose(&t).unwrap();
        let s = HashScorer { d: &d, seed: 1 };
        let known: BTreeSet<LabelId> = ids(&t, &["CS", "ML"]).into_iter().collect();
        let scores = complete(&t, &d, &s, &known, &BeamConfig::default()).unwrap();
        let names: Vec<String> = scores.scores.keys().map(|&l| String::from(t.name(l))).collect();
        assert_eq!(names, ["LLMs", "RL", "Unsupervised"]);
        let total: f64 = scores.scores.values().sum();
        assert!(total <= 1.0 + 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn rooted(n: usize, edges: &[(usize, usize)]) -> Taxonomy {
            let mut e: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (a + 1, b + 1)).collect();
            e.extend((1..=n).map(|i| (0, i)));
            let poset = crate::taxonomy::Poset::from_index_edges(n + 1, &e).unwrap();
            Taxonomy::from_poset(poset).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn wide_beam_is_exhaustive((n, edges) in dag_strategy(14), seed in any::<u64>()) {
                let t = rooted(n, &edges);
                let d = decompose(&t).unwrap();
                let s = HashScorer { d: &d, seed };
                let root = LabelPath::root(&t);
                for task in d.tasks() {
                    let mut oracle = enumerate(&t, &s, &root, task);
                    let cfg = BeamConfig { beam_width: oracle.len(), max_extension_len: 32, score_interior: false };
                    let got = beam_extend(&t, &s, &root, task, &cfg).unwrap();
                    let mut got: Vec<_> = got.into_iter().map(|p| { prop_assert!(p.terminated); Ok((p.path.labels().to_vec(), p.log_prob)) }).collect::<Result<_, TestCaseError>>()?;
                    got.sort_by(|a, b| a.0.cmp(&b.0));
                    oracle.sort_by(|a, b| a.0.cmp(&b.0));
                    prop_assert_eq!(&got, &oracle);
                    let mass: f64 = got.iter().map(|g| libm::exp(g.1)).sum();
                    prop_assert!(mass <= 1.0 + 1e-9);
                    for (p, _) in &got {
                        prop_assert!(LabelPath::new(&t, p.clone()).is_ok());
                        prop_assert!(p[1..].iter().all(|l| task.contains(*l)));
                    }
                }
            }
        }
    }
}
