//! Experiment protocols: label completion from top-level labels, few-shot
//! addition of a held-out task, and the smoothing ablation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{expand_corpus, LabeledDocument};
use crate::decode::{complete, rank, BeamConfig, DecodeError, ModelScorer};
use crate::math::derive_seed;
use crate::metrics::{eligible_ks, evaluate_corpus, EvalSample, Metric, MetricError, MetricReport};
use crate::model::{Model, ModelConfig, ModelError, TrainScope};
use crate::tat::{TaskId, TatDecomposition};
use crate::taxonomy::{LabelId, Taxonomy};
use crate::train::{build_examples, TrainConfig, TrainError, TrainReport, Trainer};
use crate::vocab::{Vocabulary, DEFAULT_MIN_FREQ};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub beam: BeamConfig,
    pub ks: Vec<usize>,
    pub seed: u64,
    pub test_fraction: f64,
    pub min_freq: usize,
    /// Random rankings drawn per document for the chance baseline.
    pub chance_draws: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            beam: BeamConfig::default(),
            ks: alloc::vec![1, 2, 3, 5],
            seed: 0,
            test_fraction: 0.2,
            min_freq: DEFAULT_MIN_FREQ,
            chance_draws: 20,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(&'static str),
    #[error("task {0:?} is not part of the decomposition")]
    UnknownTask(TaskId),
    #[error("no document carries a label of the held-out task")]
    NoTaskDocuments,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// A document split into the labels given to the model and those it has to
/// recover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub doc_id: String,
    pub text: String,
    pub known: BTreeSet<LabelId>,
    pub targets: BTreeSet<LabelId>,
}

/// Known labels are the root plus the document's top-level labels; every
/// other gold label is a target.
pub fn completion_instances(t: &Taxonomy, docs: &[LabeledDocument]) -> Vec<Instance> {
    let top: BTreeSet<LabelId> = t.top_level().iter().copied().collect();
    docs.iter()
        .map(|doc| {
            let mut known: BTreeSet<LabelId> = doc.labels.iter().copied().filter(|l| top.contains(l)).collect();
            known.insert(t.root());
            let targets = doc.labels.iter().copied().filter(|l| !known.contains(l)).collect();
            Instance { doc_id: doc.doc_id.clone(), text: doc.text.clone(), known, targets }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<LabeledDocument>,
    pub test: Vec<LabeledDocument>,
}

/// Seeded shuffle; the first `ceil(n * test_fraction)` documents form the
/// test set. Both halves keep the input order.
pub fn split_corpus(docs: &[LabeledDocument], test_fraction: f64, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..docs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, b"split")));
    let n_test = libm::ceil(docs.len() as f64 * test_fraction) as usize;
    let mut test_idx: Vec<usize> = idx[..n_test.min(docs.len())].to_vec();
    let mut train_idx: Vec<usize> = idx[n_test.min(docs.len())..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Split {
        train: train_idx.into_iter().map(|i| docs[i].clone()).collect(),
        test: test_idx.into_iter().map(|i| docs[i].clone()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    /// Every scored label, best first.
    pub ranking: Vec<(LabelId, f64)>,
}

pub fn predict(
    t: &Taxonomy,
    d: &TatDecomposition,
    model: &Model,
    vocab: &Vocabulary,
    inst: &Instance,
    beam: &BeamConfig,
) -> Result<Prediction, ProtocolError> {
    let tokens = vocab.encode(&inst.text, model.config().max_text_len);
    let scorer = ModelScorer::new(model, &tokens)?;
    let scores = complete(t, d, &scorer, &inst.known, beam)?;
    Ok(Prediction { doc_id: inst.doc_id.clone(), ranking: rank(&scores, usize::MAX) })
}

pub fn predict_all(
    t: &Taxonomy,
    d: &TatDecomposition,
    model: &Model,
    vocab: &Vocabulary,
    instances: &[Instance],
    beam: &BeamConfig,
) -> Result<Vec<Prediction>, ProtocolError> {
    instances.iter().map(|i| predict(t, d, model, vocab, i, beam)).collect()
}

fn tasks_of_targets(d: &TatDecomposition, targets: &BTreeSet<LabelId>) -> BTreeSet<TaskId> {
    targets.iter().flat_map(|&l| d.tasks_of(l).iter().copied()).collect()
}

pub fn eval_samples(d: &TatDecomposition, instances: &[Instance], predictions: &[Prediction]) -> Vec<EvalSample> {
    instances
        .iter()
        .zip(predictions)
        .map(|(i, p)| EvalSample {
            ranking: p.ranking.iter().map(|(l, _)| *l).collect(),
            gold: i.targets.clone(),
            tasks: tasks_of_targets(d, &i.targets),
        })
        .collect()
}

/// Metrics for the members of `ks` that at least one sample can support.
pub fn evaluate(samples: &[EvalSample], ks: &[usize]) -> Result<MetricReport, MetricError> {
    evaluate_corpus(samples, &eligible_ks(samples, ks))
}

/// Metrics of a ranker that orders all non-root, non-known labels uniformly
/// at random, averaged over `draws` rankings per document.
pub fn uniform_chance(
    t: &Taxonomy,
    d: &TatDecomposition,
    instances: &[Instance],
    ks: &[usize],
    draws: usize,
    seed: u64,
) -> Result<MetricReport, MetricError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b"uniform"));
    let mut samples = Vec::new();
    for inst in instances {
        let pool: Vec<LabelId> = t.labels().filter(|l| *l != t.root() && !inst.known.contains(l)).collect();
        for _ in 0..draws.max(1) {
            let mut ranking = pool.clone();
            ranking.shuffle(&mut rng);
            samples.push(EvalSample { ranking, gold: inst.targets.clone(), tasks: tasks_of_targets(d, &inst.targets) });
        }
    }
    evaluate(&samples, ks)
}

fn validate(cfg: &ExperimentConfig) -> Result<(), ProtocolError> {
    if !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(ProtocolError::InvalidConfig("test_fraction must lie in [0, 1)"));
    }
    if cfg.ks.is_empty() || cfg.ks.contains(&0) {
        return Err(ProtocolError::InvalidConfig("ks must be non-empty and positive"));
    }
    Ok(())
}

/// Pretrained text embeddings keyed by token.
pub type TokenEmbeddings = BTreeMap<String, Vec<f64>>;

fn build_model(
    t: &Taxonomy,
    d: &TatDecomposition,
    cfg: &ExperimentConfig,
    vocab: &Vocabulary,
    tasks: &[TaskId],
    labels: &[LabelId],
    embeddings: Option<&TokenEmbeddings>,
) -> Result<Model, ProtocolError> {
    let mut mcfg = cfg.model.clone();
    mcfg.vocab_size = vocab.len();
    let mut model = Model::with_tasks(mcfg, d, t.root(), t.len(), tasks, labels, derive_seed(cfg.seed, b"model"))?;
    if let Some(emb) = embeddings {
        let rows = vocab.tokens().iter().enumerate().filter_map(|(i, w)| emb.get(w).map(|v| (i as u32, v.as_slice())));
        model.set_text_embeddings(rows)?;
    }
    Ok(model)
}

/// Builds the vocabulary from `docs`, then trains a model with every task
/// on them. `docs` must be path-complete.
pub fn train_model(
    t: &Taxonomy,
    d: &TatDecomposition,
    docs: &[LabeledDocument],
    cfg: &ExperimentConfig,
    embeddings: Option<&TokenEmbeddings>,
) -> Result<(Model, Vocabulary, TrainReport), ProtocolError> {
    validate(cfg)?;
    let vocab = Vocabulary::build(docs.iter().map(|d| d.text.as_str()), cfg.min_freq);
    let tasks: Vec<TaskId> = d.task_ids().collect();
    let labels: Vec<LabelId> = t.labels().collect();
    let mut model = build_model(t, d, cfg, &vocab, &tasks, &labels, embeddings)?;
    let examples = build_examples(t, d, &model, docs, &vocab)?;
    let mut trainer = Trainer::new(cfg.train.clone(), TrainScope::All, derive_seed(cfg.seed, b"train"));
    let report = trainer.run(&mut model, &examples, cfg.train.epochs)?;
    Ok((model, vocab, report))
}

/// Outcome of training on the train split and completing both splits.
#[derive(Debug, Clone)]
pub struct CompletionRun {
    pub vocab: Vocabulary,
    pub model: Model,
    pub split: Split,
    pub train_report: TrainReport,
    pub train_metrics: MetricReport,
    pub test_metrics: MetricReport,
    pub chance: MetricReport,
    pub test_predictions: Vec<Prediction>,
    /// Labels added by path expansion over the whole corpus.
    pub expanded_labels: usize,
}

/// Expands `docs`, splits them, trains a full model and evaluates label
/// completion on both splits.
pub fn completion_run(
    t: &Taxonomy,
    d: &TatDecomposition,
    docs: &[LabeledDocument],
    cfg: &ExperimentConfig,
    embeddings: Option<&TokenEmbeddings>,
) -> Result<CompletionRun, ProtocolError> {
    validate(cfg)?;
    let (docs, expansions) = expand_corpus(t, docs, derive_seed(cfg.seed, b"expand"));
    let expanded_labels = expansions.iter().map(|e| e.added.len()).sum();
    let split = split_corpus(&docs, cfg.test_fraction, cfg.seed);
    let (model, vocab, train_report) = train_model(t, d, &split.train, cfg, embeddings)?;

    let train_inst = completion_instances(t, &split.train);
    let test_inst = completion_instances(t, &split.test);
    let train_pred = predict_all(t, d, &model, &vocab, &train_inst, &cfg.beam)?;
    let test_predictions = predict_all(t, d, &model, &vocab, &test_inst, &cfg.beam)?;
    let train_metrics = evaluate(&eval_samples(d, &train_inst, &train_pred), &cfg.ks)?;
    let test_metrics = evaluate(&eval_samples(d, &test_inst, &test_predictions), &cfg.ks)?;
    let chance = uniform_chance(t, d, &test_inst, &cfg.ks, cfg.chance_draws, cfg.seed)?;
    Ok(CompletionRun {
        vocab,
        model,
        split,
        train_report,
        train_metrics,
        test_metrics,
        chance,
        test_predictions,
        expanded_labels,
    })
}

/// Outcome of the few-shot protocol.
#[derive(Debug, Clone)]
pub struct FewShotRun {
    pub held_out: TaskId,
    pub vocab: Vocabulary,
    pub model: Model,
    pub phase1_report: TrainReport,
    pub phase2_report: TrainReport,
    /// New-task metrics right after the generator was added, then after
    /// fine-tuning.
    pub new_task_before: MetricReport,
    pub new_task_after: MetricReport,
    pub global_after: MetricReport,
    /// Phase-1 parameters whose bytes changed in phase 2. Expected empty.
    pub changed_shared: Vec<String>,
    pub phase1_docs: usize,
    pub phase2_docs: usize,
}

fn new_task_samples(
    d: &TatDecomposition,
    held_out: TaskId,
    instances: &[Instance],
    predictions: &[Prediction],
) -> Result<Vec<EvalSample>, ProtocolError> {
    let task = d.task(held_out).map_err(|_| ProtocolError::UnknownTask(held_out))?;
    Ok(instances
        .iter()
        .zip(predictions)
        .filter_map(|(i, p)| {
            let gold: BTreeSet<LabelId> = i.targets.iter().copied().filter(|&l| task.contains(l)).collect();
            if gold.is_empty() {
                return None;
            }
            let ranking = p.ranking.iter().map(|(l, _)| *l).filter(|&l| task.contains(l)).collect();
            Some(EvalSample { ranking, gold, tasks: BTreeSet::from([held_out]) })
        })
        .collect())
}

/// Trains on the corpus with the labels of `held_out` removed, then adds a
/// generator for it and fine-tunes only that generator on the documents
/// carrying its labels.
pub fn few_shot_run(
    t: &Taxonomy,
    d: &TatDecomposition,
    docs: &[LabeledDocument],
    held_out: TaskId,
    cfg: &ExperimentConfig,
    embeddings: Option<&TokenEmbeddings>,
) -> Result<FewShotRun, ProtocolError> {
    validate(cfg)?;
    let task = d.task(held_out).map_err(|_| ProtocolError::UnknownTask(held_out))?.clone();
    let (docs, _) = expand_corpus(t, docs, derive_seed(cfg.seed, b"expand"));
    let split = split_corpus(&docs, cfg.test_fraction, cfg.seed);
    let root = t.root();

    // Removing an upward-closed set keeps label sets path-complete.
    let phase1: Vec<LabeledDocument> = split
        .train
        .iter()
        .filter_map(|doc| {
            let labels: BTreeSet<LabelId> = doc.labels.iter().copied().filter(|&l| !task.contains(l)).collect();
            labels.iter().any(|&l| l != root).then(|| LabeledDocument { labels, ..doc.clone() })
        })
        .collect();
    let phase2: Vec<LabeledDocument> =
        split.train.iter().filter(|doc| doc.labels.iter().any(|&l| task.contains(l))).cloned().collect();
    if phase2.is_empty() {
        return Err(ProtocolError::NoTaskDocuments);
    }

    let vocab = Vocabulary::build(split.train.iter().map(|d| d.text.as_str()), cfg.min_freq);
    let tasks: Vec<TaskId> = d.task_ids().filter(|&i| i != held_out).collect();
    let labels: Vec<LabelId> = t.labels().filter(|&l| !task.contains(l)).collect();
    let mut model = build_model(t, d, cfg, &vocab, &tasks, &labels, embeddings)?;
    let examples = build_examples(t, d, &model, &phase1, &vocab)?;
    let phase1_report =
        Trainer::new(cfg.train.clone(), TrainScope::All, derive_seed(cfg.seed, b"train")).run(&mut model, &examples, cfg.train.epochs)?;
    let snapshot: Vec<(String, Vec<u64>)> =
        model.store().iter().map(|(_, name, t)| (String::from(name), t.data().iter().map(|x| x.to_bits()).collect())).collect();

    model.add_task(task)?;
    let test_inst = completion_instances(t, &split.test);
    let before = predict_all(t, d, &model, &vocab, &test_inst, &cfg.beam)?;
    let new_task_before = evaluate(&new_task_samples(d, held_out, &test_inst, &before)?, &cfg.ks)?;

    let examples = build_examples(t, d, &model, &phase2, &vocab)?;
    let phase2_report = Trainer::new(cfg.train.clone(), TrainScope::GeneratorOnly(held_out), derive_seed(cfg.seed, b"finetune"))
        .run(&mut model, &examples, cfg.train.finetune_epochs)?;

    let changed_shared = snapshot
        .into_iter()
        .filter(|(name, bits)| {
            let now = model.store().get(model.store().id(name).expect("parameters are never removed"));
            now.data().iter().map(|x| x.to_bits()).ne(bits.iter().copied())
        })
        .map(|(name, _)| name)
        .collect();

    let after = predict_all(t, d, &model, &vocab, &test_inst, &cfg.beam)?;
    let new_task_after = evaluate(&new_task_samples(d, held_out, &test_inst, &after)?, &cfg.ks)?;
    let global_after = evaluate(&eval_samples(d, &test_inst, &after), &cfg.ks)?;
    Ok(FewShotRun {
        held_out,
        vocab,
        model,
        phase1_report,
        phase2_report,
        new_task_before,
        new_task_after,
        global_after,
        changed_shared,
        phase1_docs: phase1.len(),
        phase2_docs: phase2.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub metric: Metric,
    pub k: usize,
    pub adaptive: f64,
    pub fixed: f64,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct Ablation {
    pub rows: Vec<AblationRow>,
    pub adaptive: CompletionRun,
    pub fixed: CompletionRun,
}

/// The two arms of the ablation: identical except for whether the smoothing
/// weight adapts to task width.
pub fn ablation_configs(cfg: &ExperimentConfig) -> (ExperimentConfig, ExperimentConfig) {
    let mut on = cfg.clone();
    on.train.loss.adaptive = true;
    let mut off = cfg.clone();
    off.train.loss.adaptive = false;
    (on, off)
}

/// One row per (metric, k) reported by both arms.
pub fn ablation_table(adaptive: &MetricReport, fixed: &MetricReport) -> Vec<AblationRow> {
    adaptive
        .overall
        .iter()
        .filter_map(|m| {
            let f = fixed.get(m.metric, m.k)?;
            Some(AblationRow { metric: m.metric, k: m.k, adaptive: m.value, fixed: f, delta: m.value - f })
        })
        .collect()
}

/// Both ablation arms, run one after the other. Seeds, splits and data
/// order are shared.
pub fn ablation_run(
    t: &Taxonomy,
    d: &TatDecomposition,
    docs: &[LabeledDocument],
    cfg: &ExperimentConfig,
    embeddings: Option<&TokenEmbeddings>,
) -> Result<Ablation, ProtocolError> {
    let (on, off) = ablation_configs(cfg);
    let adaptive = completion_run(t, d, docs, &on, embeddings)?;
    let fixed = completion_run(t, d, docs, &off, embeddings)?;
    let rows = ablation_table(&adaptive.test_metrics, &fixed.test_metrics);
    Ok(Ablation { rows, adaptive, fixed })
}
