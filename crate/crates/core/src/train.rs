//! Teacher-forced training over (path prefix, next label, task) triples.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, Var};
use crate::corpus::LabeledDocument;
use crate::loss::{batch_loss, loss_node, target_index, LossConfig, LossError};
use crate::math::derive_seed;
use crate::model::{Model, ModelError, NextLabel, TrainScope};
use crate::optim::{AdamW, AdamWConfig};
use crate::path::{paths_from_label_set, PathError};
use crate::tat::{TaskId, TatDecomposition};
use crate::taxonomy::{LabelId, Taxonomy};
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs of generator-only fine-tuning in the few-shot protocol.
    pub finetune_epochs: usize,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            weight_decay: 1e-2,
            epochs: 10,
            batch_size: 8,
            finetune_epochs: 5,
            loss: LossConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("loss became non-finite in epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("document {doc_id}: {source}")]
    Path { doc_id: alloc::string::String, source: PathError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// One position of one path to be scored by one task's generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub position: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathExample {
    pub labels: Vec<LabelId>,
    pub tasks: Vec<(TaskId, Vec<Step>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub doc_id: alloc::string::String,
    pub tokens: Vec<u32>,
    pub paths: Vec<PathExample>,
}

impl Example {
    pub fn pairs(&self) -> usize {
        self.paths.iter().flat_map(|p| &p.tasks).map(|(_, s)| s.len()).sum()
    }
}

/// Training triples of one document. Every maximal chain of its (expanded)
/// labels is paired with each relevant task the model has; a position is
/// kept for a task when its next label (or STOP after the last label) is an
/// output of that task's generator.
pub fn build_example(
    t: &Taxonomy,
    d: &TatDecomposition,
    model: &Model,
    doc: &LabeledDocument,
    vocab: &Vocabulary,
) -> Result<Example, TrainError> {
    let tokens = vocab.encode(&doc.text, model.config().max_text_len);
    let chains = paths_from_label_set(t, &doc.labels)
        .map_err(|source| TrainError::Path { doc_id: doc.doc_id.clone(), source })?;
    let mut paths = Vec::new();
    for chain in chains {
        if chain.len() < 2 {
            continue;
        }
        let labels = chain.labels().to_vec();
        let mut tasks = Vec::new();
        for id in d.relevant_tasks(&chain).expect("non-empty path") {
            if !model.has_task(id) {
                continue;
            }
            let task = model.task(id)?;
            let mut steps = Vec::new();
            for q in 0..labels.len() {
                let next = match labels.get(q + 1) {
                    Some(&l) => NextLabel::Label(l),
                    None if task.contains(labels[q]) => NextLabel::Stop,
                    None => continue,
                };
                if let Ok(target) = target_index(task, next) {
                    steps.push(Step { position: q, target });
                }
            }
            if !steps.is_empty() {
                tasks.push((id, steps));
            }
        }
        if !tasks.is_empty() {
            paths.push(PathExample { labels, tasks });
        }
    }
    Ok(Example { doc_id: doc.doc_id.clone(), tokens, paths })
}

pub fn build_examples(
    t: &Taxonomy,
    d: &TatDecomposition,
    model: &Model,
    docs: &[LabeledDocument],
    vocab: &Vocabulary,
) -> Result<Vec<Example>, TrainError> {
    docs.iter().map(|doc| build_example(t, d, model, doc, vocab)).collect()
}

/// Records the loss terms of `ex` in `g`. `memory` overrides the encoder
/// with a constant.
fn record_example(
    g: &mut Graph<'_>,
    model: &Model,
    ex: &Example,
    only: Option<TaskId>,
    memory: Option<&Tensor>,
    loss: &LossConfig,
    out: &mut Vec<Var>,
) -> Result<(), TrainError> {
    let wanted = |id: TaskId| only.is_none_or(|o| o == id);
    if !ex.paths.iter().any(|p| p.tasks.iter().any(|(id, _)| wanted(*id))) {
        return Ok(());
    }
    let mem = match memory {
        Some(m) => g.input(m.clone()),
        None => model.encode_text(g, &ex.tokens)?,
    };
    for p in &ex.paths {
        if !p.tasks.iter().any(|(id, _)| wanted(*id)) {
            continue;
        }
        let shared = model.decode_shared(g, mem, &p.labels)?;
        for (id, steps) in &p.tasks {
            if !wanted(*id) {
                continue;
            }
            let width = model.task(*id)?.width;
            let probs = model.generate(g, shared, mem, &p.labels, *id)?;
            for s in steps {
                let row = g.row(probs, s.position).map_err(ModelError::from)?;
                out.push(loss_node(g, row, s.target, width, loss)?);
            }
        }
    }
    Ok(())
}

/// Mean loss of `examples` under `model`, and the number of pairs.
pub fn evaluate_loss(model: &Model, examples: &[Example], loss: &LossConfig) -> Result<(f64, usize), TrainError> {
    let mut total = 0.0;
    let mut n = 0;
    for ex in examples {
        let mut g = Graph::new(model.store());
        let mut terms = Vec::new();
        record_example(&mut g, model, ex, None, None, loss, &mut terms)?;
        for v in terms {
            total += g.value(v).as_scalar();
            n += 1;
        }
    }
    Ok((if n == 0 { 0.0 } else { total / n as f64 }, n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean pair loss of each epoch, measured on the fly during updates.
    pub loss_curve: Vec<f64>,
    pub steps: usize,
    pub pairs_per_epoch: usize,
    pub clamped_logs: usize,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub scope: TrainScope,
    pub seed: u64,
    opt: AdamW,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, scope: TrainScope, seed: u64) -> Self {
        let opt = AdamW::new(AdamWConfig {
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        });
        Trainer { cfg, scope, seed, opt }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.cfg.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be positive"));
        }
        if !(self.cfg.learning_rate >= 0.0) || !(self.cfg.weight_decay >= 0.0) {
            return Err(TrainError::InvalidConfig("learning_rate and weight_decay must be non-negative"));
        }
        self.cfg.loss.validate()?;
        Ok(())
    }

    /// Runs `epochs` passes over `examples`, shuffled per epoch from the
    /// trainer seed.
    pub fn run(&mut self, model: &mut Model, examples: &[Example], epochs: usize) -> Result<TrainReport, TrainError> {
        self.validate()?;
        let allowed: Vec<ParamId> = model.trainable_parameters(self.scope)?;
        let mut allowed_mask = alloc::vec![false; model.store().len()];
        for p in &allowed {
            allowed_mask[p.0] = true;
        }
        let only = match self.scope {
            TrainScope::All => None,
            TrainScope::GeneratorOnly(id) => Some(id),
        };
        // The encoder is frozen under a generator-only scope.
        let mut frozen_memory: BTreeMap<usize, Tensor> = BTreeMap::new();
        if only.is_some() {
            for (i, ex) in examples.iter().enumerate() {
                frozen_memory.insert(i, model.encode(&ex.tokens)?);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, b"shuffle"));
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut report = TrainReport { loss_curve: Vec::new(), steps: 0, pairs_per_epoch: 0, clamped_logs: 0 };
        for epoch in 0..epochs {
            order.shuffle(&mut rng);
            let mut epoch_total = 0.0;
            let mut epoch_pairs = 0;
            for batch in order.chunks(self.cfg.batch_size) {
                let grads = {
                    let mut g = Graph::new(model.store());
                    let mut terms = Vec::new();
                    for &i in batch {
                        record_example(&mut g, model, &examples[i], only, frozen_memory.get(&i), &self.cfg.loss, &mut terms)?;
                    }
                    if terms.is_empty() {
                        continue;
                    }
                    let l = batch_loss(&mut g, &terms)?;
                    let value = g.value(l).as_scalar();
                    if !value.is_finite() {
                        return Err(TrainError::DivergenceDetected { epoch });
                    }
                    epoch_total += value * terms.len() as f64;
                    epoch_pairs += terms.len();
                    report.clamped_logs += g.clamped_logs();
                    g.backward(l)
                };
                self.opt.step(model.store_mut(), &grads, |p| allowed_mask[p.0]);
                report.steps += 1;
            }
            report.pairs_per_epoch = epoch_pairs;
            report.loss_curve.push(if epoch_pairs == 0 { 0.0 } else { epoch_total / epoch_pairs as f64 });
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::grad_check;
    use crate::checkpoint::encode_store;
    use crate::corpus::{expand_corpus, resolve, Document};
    use crate::model::testing::tiny_config;
    use crate::tat::decompose;
    use crate::taxonomy::fixtures::cs_taxonomy;
    use alloc::string::String;
    use alloc::vec;

    fn corpus(t: &Taxonomy) -> Vec<LabeledDocument> {
        let raw = [
            ("a", "neural language words tokens", vec!["CS", "NLP", "Vocabulary"]),
            ("b", "neural language model giant", vec!["LLMs", "NLP", "ML"]),
            ("c", "reward agent policy", vec!["RL"]),
            ("d", "tables query index", vec!["Database"]),
            ("e", "clusters density agent", vec!["Unsupervised", "RL"]),
        ];
        let docs: Vec<Document> = raw
            .iter()
            .map(|(id, text, l)| Document {
                doc_id: String::from(*id),
                text: String::from(*text),
                labels: l.iter().map(|s| String::from(*s)).collect(),
            })
            .collect();
        expand_corpus(t, &resolve(t, &docs).unwrap(), 1).0
    }

    #[test]
    fn triples_follow_task_membership() {
        let t = cs_taxonomy();
        let d = decompose(&t).unwrap();
        let m = Model::new(tiny_config(20), &d, t.root(), t.len(), 0).unwrap();
        let docs = corpus(&t);
        let vocab = Vocabulary::build(docs.iter().map(|d| d.text.as_str()), 1);
        let ex = build_example(&t, &d, &m, &docs[1], &vocab).unwrap();
        // chains [CS,ML,LLMs] and [CS,NLP,LLMs]
        assert_eq!(ex.paths.len(), 2);
        let ml = d.tasks().iter().find(|x| x.root == t.id("ML").unwrap()).unwrap().id;
        let nlp_path = ex.paths.iter().find(|p| p.labels[1] == t.id("NLP").unwrap()).unwrap();
        let (_, steps) = nlp_path.tasks.iter().find(|(id, _)| *id == ml).unwrap();
        // NLP is not an ML output; LLMs and the final STOP are
        assert_eq!(steps.iter().map(|s| s.position).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(steps[1].target, d.task(ml).unwrap().len());
    }

    #[test]
    fn full_loss_gradient_on_two_task_model() {
        let t = Taxonomy::from_named_edges([("R", "A"), ("R", "B"), ("A", "A1"), ("A", "A2"), ("B", "B1"), ("A", "B1")]).unwrap();
        let d = decompose(&t).unwrap();
        assert_eq!(d.len(), 2);
        let m = Model::new(tiny_config(6), &d, t.root(), t.len(), 11).unwrap();
        let docs: Vec<Document> = [("x", "w2 w3 w4", vec!["A1", "B1"]), ("y", "w5 w3", vec!["B1"])]
            .iter()
            .map(|(i, s, l)| Document { doc_id: (*i).into(), text: (*s).into(), labels: l.iter().map(|x| String::from(*x)).collect() })
            .collect();
        let docs = expand_corpus(&t, &resolve(&t, &docs).unwrap(), 0).0;
        let vocab = Vocabulary::from_tokens(["<pad>", "<oov>", "w2", "w3", "w4", "w5"].iter().map(|s| String::from(*s)).collect());
        let examples = build_examples(&t, &d, &m, &docs, &vocab).unwrap();
        let cfg = LossConfig { epsilon: 0.1, ..LossConfig::default() };
        let params: Vec<ParamId> = m.store().ids().collect();
        let r = grad_check(
            m.store(),
            &params,
            |g| {
                let mut terms = Vec::new();
                for ex in &examples {
                    record_example(g, &m, ex, None, None, &cfg, &mut terms).unwrap();
                }
                batch_loss(g, &terms).unwrap()
            },
            1e-5,
        );
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn overfits_and_is_deterministic() {
        let t = cs_taxonomy();
        let d = decompose(&t).unwrap();
        let docs = corpus(&t);
        let vocab = Vocabulary::build(docs.iter().map(|d| d.text.as_str()), 1);
        let mut cfg_m = tiny_config(vocab.len());
        cfg_m.d_label = 16;
        let cfg = TrainConfig { learning_rate: 1e-2, weight_decay: 0.0, epochs: 60, batch_size: 2, ..TrainConfig::default() };
        let run = || {
            let mut m = Model::new(cfg_m.clone(), &d, t.root(), t.len(), 4).unwrap();
            let ex = build_examples(&t, &d, &m, &docs, &vocab).unwrap();
            let rep = Trainer::new(cfg.clone(), TrainScope::All, 4).run(&mut m, &ex, cfg.epochs).unwrap();
            (rep, encode_store(m.store()))
        };
        let (a, ca) = run();
        let (b, cb) = run();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert!(a.loss_curve.last().unwrap() < &(0.1 * a.loss_curve[0]), "{:?}", a.loss_curve);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let t = cs_taxonomy();
        let d = decompose(&t).unwrap();
        let docs = corpus(&t);
        let vocab = Vocabulary::build(docs.iter().map(|d| d.text.as_str()), 1);
        let mut m = Model::new(tiny_config(vocab.len()), &d, t.root(), t.len(), 4).unwrap();
        let before = encode_store(m.store());
        let ex = build_examples(&t, &d, &m, &docs, &vocab).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, weight_decay: 0.0, ..TrainConfig::default() };
        Trainer::new(cfg, TrainScope::All, 0).run(&mut m, &ex, 2).unwrap();
        assert_eq!(encode_store(m.store()), before);
    }

    #[test]
    fn generator_scope_leaves_everything_else() {
        let t = cs_taxonomy();
        let d = decompose(&t).unwrap();
        let docs = corpus(&t);
        let vocab = Vocabulary::build(docs.iter().map(|d| d.text.as_str()), 1);
        let mut m = Model::new(tiny_config(vocab.len()), &d, t.root(), t.len(), 4).unwrap();
        let ml = d.tasks().iter().find(|x| x.root == t.id("ML").unwrap()).unwrap().id;
        let before = m.store().clone();
        let ex = build_examples(&t, &d, &m, &docs, &vocab).unwrap();
        let cfg = TrainConfig { learning_rate: 1e-2, ..TrainConfig::default() };
        Trainer::new(cfg, TrainScope::GeneratorOnly(ml), 0).run(&mut m, &ex, 2).unwrap();
        let scoped = m.trainable_parameters(TrainScope::GeneratorOnly(ml)).unwrap();
        let mut moved = 0;
        for (id, name, tensor) in m.store().iter() {
            if scoped.contains(&id) {
                moved += usize::from(tensor != before.get(id));
            } else {
                assert_eq!(tensor, before.get(id), "{name}");
            }
        }
        assert!(moved > 0);
    }
}
