//! Shared-encoder / shared-decoder transformer with one generator per task.
//!
//! Text tokens go through the encoder stack and the adapter (`d_text` to
//! `d_label`) to form the memory. A label path, with the global root replaced
//! by a BOS row, goes through the shared decoder stack (causal self-attention
//! plus cross-attention to the memory). Each task owns a generator: one more
//! decoder block whose self-attention also hides prefix positions holding
//! labels outside the task, followed by a linear head over the task's labels
//! plus STOP.
//!
//! Label embeddings live in a base table (BOS first, then the labels the
//! model was built with) and in per-task extension tables for labels that a
//! task added later. Fine-tuning one generator therefore never writes to a
//! tensor that another part of the model owns.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::math;
use crate::path::LabelPath;
use crate::tat::{TaskId, TaskSet, TatDecomposition};
use crate::taxonomy::LabelId;
use crate::tensor::{ShapeMismatch, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_text: usize,
    pub d_label: usize,
    pub n_encoders: usize,
    pub n_decoders: usize,
    pub n_heads: usize,
    /// Feed-forward hidden size as a multiple of the block width.
    pub ff_mult: usize,
    pub vocab_size: usize,
    pub max_text_len: usize,
    pub max_path_len: usize,
    pub positional_encoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_text: 32,
            d_label: 64,
            n_encoders: 2,
            n_decoders: 2,
            n_heads: 4,
            ff_mult: 2,
            vocab_size: 2,
            max_text_len: 64,
            max_path_len: 16,
            positional_encoding: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("text of {len} tokens exceeds max_text_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("path of {len} labels exceeds max_path_len {max}")]
    PathTooLong { len: usize, max: usize },
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("task {0} already has a generator")]
    DuplicateTask(TaskId),
    #[error("label {0:?} has no embedding row")]
    UnembeddedLabel(LabelId),
    #[error("token id {0} outside the vocabulary")]
    UnknownToken(u32),
    #[error("embedding dimension {found} does not match d_text {expected}")]
    EmbeddingDimMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Shape(#[from] ShapeMismatch),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.into()));
        if self.n_heads == 0 || self.d_text % self.n_heads != 0 || self.d_label % self.n_heads != 0 {
            return bad("d_text and d_label must be divisible by n_heads");
        }
        if self.d_text == 0 || self.d_label == 0 || self.ff_mult == 0 {
            return bad("dimensions must be positive");
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must include PAD and OOV");
        }
        if self.max_text_len == 0 || self.max_path_len == 0 {
            return bad("length limits must be positive");
        }
        Ok(())
    }
}

/// A decoding step outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NextLabel {
    Label(LabelId),
    Stop,
}

/// Generator output for one prefix: probabilities over the task's labels in
/// ascending id order, then STOP.
#[derive(Debug, Clone, PartialEq)]
pub struct NextLabelDistribution {
    pub task: TaskId,
    pub labels: Vec<LabelId>,
    pub probs: Vec<f64>,
}

impl NextLabelDistribution {
    pub fn prob(&self, next: NextLabel) -> f64 {
        match next {
            NextLabel::Stop => self.probs[self.labels.len()],
            NextLabel::Label(l) => self.labels.binary_search(&l).map(|i| self.probs[i]).unwrap_or(0.0),
        }
    }

    pub fn stop_prob(&self) -> f64 {
        self.probs[self.labels.len()]
    }
}

/// Which tensors an optimizer step may write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainScope {
    All,
    GeneratorOnly(TaskId),
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    attn: Attention,
    attn_norm: Norm,
    cross: Option<(Attention, Norm)>,
    ff1: Linear,
    ff2: Linear,
    ff_norm: Norm,
}

#[derive(Debug, Clone)]
struct Generator {
    task: TaskSet,
    block: Block,
    head: Linear,
    extension: Option<ParamId>,
    extension_labels: Vec<LabelId>,
}

/// Enough structure to rebuild a model's tensor table before loading a
/// checkpoint into it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub root: LabelId,
    pub n_labels: usize,
    pub base_labels: Vec<LabelId>,
    /// Generators in creation order with the labels each one added.
    pub generators: Vec<(TaskId, Vec<LabelId>)>,
}

#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    store: ParamStore,
    seed: u64,
    root: LabelId,
    text_embedding: ParamId,
    encoders: Vec<Block>,
    adapter: Linear,
    base_table: ParamId,
    base_labels: Vec<LabelId>,
    /// Table and row of each label; `None` for labels without a row.
    label_rows: Vec<Option<(ParamId, usize)>>,
    decoders: Vec<Block>,
    generators: BTreeMap<TaskId, Generator>,
    generator_order: Vec<TaskId>,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    seed: u64,
}

impl Init<'_> {
    fn uniform(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let bound = math::sqrt(6.0 / (rows + cols) as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(math::derive_seed(self.seed, name.as_bytes()));
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        self.store.add(name, Tensor::matrix(rows, cols, data).expect("shape"))
    }

    fn constant(&mut self, name: &str, cols: usize, v: f64) -> ParamId {
        self.store.add(name, Tensor::filled(1, cols, v))
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> Linear {
        Linear { w: self.uniform(&format!("{name}.w"), d_in, d_out), b: self.constant(&format!("{name}.b"), d_out, 0.0) }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gamma: self.constant(&format!("{name}.gamma"), d, 1.0),
            beta: self.constant(&format!("{name}.beta"), d, 0.0),
        }
    }

    fn attention(&mut self, name: &str, d: usize, d_kv: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d_kv, d),
            v: self.linear(&format!("{name}.v"), d_kv, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn block(&mut self, name: &str, d: usize, d_mem: Option<usize>, ff_mult: usize) -> Block {
        Block {
            attn: self.attention(&format!("{name}.self"), d, d),
            attn_norm: self.norm(&format!("{name}.self_norm"), d),
            cross: d_mem.map(|m| {
                (self.attention(&format!("{name}.cross"), d, m), self.norm(&format!("{name}.cross_norm"), d))
            }),
            ff1: self.linear(&format!("{name}.ff1"), d, d * ff_mult),
            ff2: self.linear(&format!("{name}.ff2"), d * ff_mult, d),
            ff_norm: self.norm(&format!("{name}.ff_norm"), d),
        }
    }
}

/// Sinusoidal position table, `len × d`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(len, d);
    for pos in 0..len {
        let row = t.row_mut(pos);
        for i in 0..d {
            let k = (i / 2) * 2;
            let angle = pos as f64 / math::pow(10_000.0, k as f64 / d as f64);
            row[i] = if i % 2 == 0 { math::sin(angle) } else { math::cos(angle) };
        }
    }
    t
}

impl Model {
    /// A model with a generator for every task of `d` and an embedding row
    /// for every non-root label.
    pub fn new(cfg: ModelConfig, d: &TatDecomposition, root: LabelId, n_labels: usize, seed: u64) -> Result<Self, ModelError> {
        let labels: Vec<LabelId> = (0..n_labels).map(LabelId::from).filter(|&l| l != root).collect();
        let tasks: Vec<TaskId> = d.task_ids().collect();
        Self::with_tasks(cfg, d, root, n_labels, &tasks, &labels, seed)
    }

    /// A model restricted to `tasks`, embedding exactly `labels` in the base
    /// table. Task labels missing from `labels` get a row in that task's
    /// extension table.
    pub fn with_tasks(
        cfg: ModelConfig,
        d: &TatDecomposition,
        root: LabelId,
        n_labels: usize,
        tasks: &[TaskId],
        labels: &[LabelId],
        seed: u64,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut base_labels: Vec<LabelId> = labels.iter().copied().filter(|&l| l != root).collect();
        base_labels.sort();
        base_labels.dedup();
        let mut store = ParamStore::new();
        let mut init = Init { store: &mut store, seed };
        let text_embedding = init.uniform("text_embedding", cfg.vocab_size, cfg.d_text);
        let encoders = (0..cfg.n_encoders).map(|i| init.block(&format!("encoder.{i}"), cfg.d_text, None, cfg.ff_mult)).collect();
        let adapter = init.linear("adapter", cfg.d_text, cfg.d_label);
        let base_table = init.uniform("label_embedding", base_labels.len() + 1, cfg.d_label);
        let decoders = (0..cfg.n_decoders)
            .map(|i| init.block(&format!("decoder.{i}"), cfg.d_label, Some(cfg.d_label), cfg.ff_mult))
            .collect();
        let mut label_rows = vec![None; n_labels];
        for (i, &l) in base_labels.iter().enumerate() {
            label_rows[l.index()] = Some((base_table, i + 1));
        }
        label_rows[root.index()] = Some((base_table, 0));
        let mut m = Model {
            cfg,
            store,
            seed,
            root,
            text_embedding,
            encoders,
            adapter,
            base_table,
            base_labels,
            label_rows,
            decoders,
            generators: BTreeMap::new(),
            generator_order: Vec::new(),
        };
        for &id in tasks {
            m.add_task(d.task(id).map_err(|_| ModelError::UnknownTask(id))?.clone())?;
        }
        Ok(m)
    }

    /// Adds a freshly initialised generator for `task`, plus embedding rows
    /// for any of its labels the model has not seen.
    pub fn add_task(&mut self, task: TaskSet) -> Result<(), ModelError> {
        let id = task.id;
        if self.generators.contains_key(&id) {
            return Err(ModelError::DuplicateTask(id));
        }
        let new_labels: Vec<LabelId> =
            task.labels().iter().copied().filter(|l| self.label_rows.get(l.index()).is_none_or(|r| r.is_none())).collect();
        let (d, ff) = (self.cfg.d_label, self.cfg.ff_mult);
        let mut init = Init { store: &mut self.store, seed: self.seed };
        let name = format!("generator.{}", id.0);
        let block = init.block(&name, d, Some(d), ff);
        let head = init.linear(&format!("{name}.head"), d, task.len() + 1);
        let extension = if new_labels.is_empty() {
            None
        } else {
            Some(init.uniform(&format!("label_embedding.task{}", id.0), new_labels.len(), d))
        };
        if let Some(table) = extension {
            for (i, &l) in new_labels.iter().enumerate() {
                if l.index() >= self.label_rows.len() {
                    self.label_rows.resize(l.index() + 1, None);
                }
                self.label_rows[l.index()] = Some((table, i));
            }
        }
        self.generators.insert(id, Generator { task, block, head, extension, extension_labels: new_labels });
        self.generator_order.push(id);
        Ok(())
    }

    pub fn layout(&self) -> ModelLayout {
        ModelLayout {
            root: self.root,
            n_labels: self.label_rows.len(),
            base_labels: self.base_labels.clone(),
            generators: self
                .generator_order
                .iter()
                .map(|id| (*id, self.generators[id].extension_labels.clone()))
                .collect(),
        }
    }

    /// Rebuilds the tensor table described by `layout`; values are the
    /// seed-0 initialisation until a checkpoint is loaded.
    pub fn from_layout(cfg: ModelConfig, d: &TatDecomposition, layout: &ModelLayout) -> Result<Self, ModelError> {
        let mut m = Self::with_tasks(cfg, d, layout.root, layout.n_labels, &[], &layout.base_labels, 0)?;
        for (id, ext) in &layout.generators {
            let task = d.task(*id).map_err(|_| ModelError::UnknownTask(*id))?.clone();
            m.add_task(task)?;
            if m.generators[id].extension_labels != *ext {
                return Err(ModelError::InvalidConfig(format!("layout of task {id} does not match the decomposition")));
            }
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn root(&self) -> LabelId {
        self.root
    }

    pub fn task_ids(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.generators.keys().copied()
    }

    pub fn has_task(&self, id: TaskId) -> bool {
        self.generators.contains_key(&id)
    }

    pub fn task(&self, id: TaskId) -> Result<&TaskSet, ModelError> {
        self.generators.get(&id).map(|g| &g.task).ok_or(ModelError::UnknownTask(id))
    }

    /// Tensors an optimizer may write under `scope`.
    pub fn trainable_parameters(&self, scope: TrainScope) -> Result<Vec<ParamId>, ModelError> {
        match scope {
            TrainScope::All => Ok(self.store.ids().collect()),
            TrainScope::GeneratorOnly(id) => {
                if !self.generators.contains_key(&id) {
                    return Err(ModelError::UnknownTask(id));
                }
                let prefix = format!("generator.{}.", id.0);
                let ext = self.generators[&id].extension;
                Ok(self
                    .store
                    .iter()
                    .filter(|(p, n, _)| n.starts_with(&prefix) || Some(*p) == ext)
                    .map(|(p, _, _)| p)
                    .collect())
            }
        }
    }

    /// Overwrites text-embedding rows. Returns the number of rows replaced.
    pub fn set_text_embeddings<'a>(
        &mut self,
        rows: impl IntoIterator<Item = (u32, &'a [f64])>,
    ) -> Result<usize, ModelError> {
        let d = self.cfg.d_text;
        let mut n = 0;
        let table = self.store.get_mut(self.text_embedding);
        for (id, v) in rows {
            if v.len() != d {
                return Err(ModelError::EmbeddingDimMismatch { expected: d, found: v.len() });
            }
            if id as usize >= table.rows() {
                return Err(ModelError::UnknownToken(id));
            }
            table.row_mut(id as usize).copy_from_slice(v);
            n += 1;
        }
        Ok(n)
    }

    fn linear(&self, g: &mut Graph<'_>, l: Linear, x: Var) -> Result<Var, ModelError> {
        let (w, b) = (g.param(l.w), g.param(l.b));
        let y = g.matmul(x, w)?;
        Ok(g.add_row(y, b)?)
    }

    fn norm(&self, g: &mut Graph<'_>, n: Norm, x: Var) -> Result<Var, ModelError> {
        let (ga, be) = (g.param(n.gamma), g.param(n.beta));
        Ok(g.layer_norm(x, ga, be)?)
    }

    /// Multi-head attention of `x` over `mem`. `mask[q * n_k + k]` hides key
    /// `k` from query `q`.
    fn attention(&self, g: &mut Graph<'_>, a: Attention, x: Var, mem: Var, mask: Option<&[bool]>) -> Result<Var, ModelError> {
        let q = self.linear(g, a.q, x)?;
        let k = self.linear(g, a.k, mem)?;
        let v = self.linear(g, a.v, mem)?;
        let d = g.value(q).cols();
        let h = self.cfg.n_heads;
        let dh = d / h;
        let scale = 1.0 / math::sqrt(dh as f64);
        let mut heads = Vec::with_capacity(h);
        for i in 0..h {
            let qh = g.slice_cols(q, i * dh, dh)?;
            let kh = g.slice_cols(k, i * dh, dh)?;
            let vh = g.slice_cols(v, i * dh, dh)?;
            let s = g.matmul_bt(qh, kh)?;
            let mut s = g.scale(s, scale);
            if let Some(m) = mask {
                s = g.mask_fill(s, m.to_vec())?;
            }
            let p = g.softmax(s);
            heads.push(g.matmul(p, vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(heads)? };
        self.linear(g, a.o, cat)
    }

    fn block(&self, g: &mut Graph<'_>, b: Block, x: Var, mem: Option<Var>, mask: Option<&[bool]>) -> Result<Var, ModelError> {
        let a = self.attention(g, b.attn, x, x, mask)?;
        let r = g.add(x, a)?;
        let mut x = self.norm(g, b.attn_norm, r)?;
        if let (Some((cross, norm)), Some(mem)) = (b.cross, mem) {
            let c = self.attention(g, cross, x, mem, None)?;
            let r = g.add(x, c)?;
            x = self.norm(g, norm, r)?;
        }
        let h = self.linear(g, b.ff1, x)?;
        let h = g.relu(h);
        let f = self.linear(g, b.ff2, h)?;
        let r = g.add(x, f)?;
        self.norm(g, b.ff_norm, r)
    }

    /// Text memory, `len × d_label`.
    pub fn encode_text(&self, g: &mut Graph<'_>, tokens: &[u32]) -> Result<Var, ModelError> {
        let tokens: &[u32] = if tokens.is_empty() { &[crate::vocab::PAD] } else { tokens };
        if tokens.len() > self.cfg.max_text_len {
            return Err(ModelError::SequenceTooLong { len: tokens.len(), max: self.cfg.max_text_len });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            return Err(ModelError::UnknownToken(bad));
        }
        let table = g.param(self.text_embedding);
        let mut x = g.embedding_lookup(table, tokens.iter().map(|&t| t as usize).collect())?;
        if self.cfg.positional_encoding {
            let pe = g.input(positional_encoding(tokens.len(), self.cfg.d_text));
            x = g.add(x, pe)?;
        }
        for &b in &self.encoders {
            x = self.block(g, b, x, None, None)?;
        }
        self.linear(g, self.adapter, x)
    }

    /// Memory as a plain tensor, for decoding without gradients.
    pub fn encode(&self, tokens: &[u32]) -> Result<Tensor, ModelError> {
        let mut g = Graph::new(&self.store);
        let m = self.encode_text(&mut g, tokens)?;
        Ok(g.value(m).clone())
    }

    fn check_path(&self, path: &[LabelId]) -> Result<(), ModelError> {
        if path.len() > self.cfg.max_path_len {
            return Err(ModelError::PathTooLong { len: path.len(), max: self.cfg.max_path_len });
        }
        Ok(())
    }

    fn embed_path(&self, g: &mut Graph<'_>, path: &[LabelId]) -> Result<Var, ModelError> {
        let mut rows = Vec::with_capacity(path.len());
        for &l in path {
            let (table, row) = self
                .label_rows
                .get(l.index())
                .copied()
                .flatten()
                .ok_or(ModelError::UnembeddedLabel(l))?;
            let t = g.param(table);
            rows.push(g.embedding_lookup(t, vec![row])?);
        }
        let mut x = if rows.len() == 1 { rows[0] } else { g.concat_rows(rows)? };
        if self.cfg.positional_encoding {
            let pe = g.input(positional_encoding(path.len(), self.cfg.d_label));
            x = g.add(x, pe)?;
        }
        Ok(x)
    }

    /// Shared decoder output for every prefix position of `path`
    /// (`path[0]` must be the root), `len × d_label`.
    pub fn decode_shared(&self, g: &mut Graph<'_>, memory: Var, path: &[LabelId]) -> Result<Var, ModelError> {
        self.check_path(path)?;
        let mut x = self.embed_path(g, path)?;
        let mask = causal_mask(path.len());
        for &b in &self.decoders {
            x = self.block(g, b, x, Some(memory), Some(&mask))?;
        }
        Ok(x)
    }

    /// Self-attention mask of a task's generator: causal, and positions whose
    /// label lies outside the task are hidden (position 0 never is).
    pub fn task_mask(task: &TaskSet, path: &[LabelId]) -> Vec<bool> {
        let n = path.len();
        let mut m = causal_mask(n);
        for q in 0..n {
            for (k, &l) in path.iter().enumerate().skip(1) {
                if !task.contains(l) {
                    m[q * n + k] = true;
                }
            }
        }
        m
    }

    /// Next-label probabilities of task `id` at every prefix position,
    /// `len × (|T| + 1)`.
    pub fn generate(&self, g: &mut Graph<'_>, shared: Var, memory: Var, path: &[LabelId], id: TaskId) -> Result<Var, ModelError> {
        let gen = self.generators.get(&id).ok_or(ModelError::UnknownTask(id))?;
        let mask = Self::task_mask(&gen.task, path);
        let x = self.block(g, gen.block, shared, Some(memory), Some(&mask))?;
        let logits = self.linear(g, gen.head, x)?;
        Ok(g.softmax(logits))
    }

    /// Output of a generator's decoder block, before the head. Exposed for
    /// inspecting the attention mask.
    pub fn generator_hidden(&self, g: &mut Graph<'_>, shared: Var, memory: Var, path: &[LabelId], id: TaskId) -> Result<Var, ModelError> {
        let gen = self.generators.get(&id).ok_or(ModelError::UnknownTask(id))?;
        let mask = Self::task_mask(&gen.task, path);
        self.block(g, gen.block, shared, Some(memory), Some(&mask))
    }

    /// Distribution over the next label after `prefix` under task `id`.
    pub fn next_distribution(&self, memory: &Tensor, prefix: &LabelPath, id: TaskId) -> Result<NextLabelDistribution, ModelError> {
        let gen = self.generators.get(&id).ok_or(ModelError::UnknownTask(id))?;
        self.check_path(prefix.labels())?;
        let mut g = Graph::new(&self.store);
        let mem = g.input(memory.clone());
        let shared = self.decode_shared(&mut g, mem, prefix.labels())?;
        let probs = self.generate(&mut g, shared, mem, prefix.labels(), id)?;
        let p = g.value(probs);
        let last = p.row(p.rows() - 1).to_vec();
        Ok(NextLabelDistribution { task: id, labels: gen.task.labels().to_vec(), probs: last })
    }

    pub fn forward(&self, tokens: &[u32], prefix: &LabelPath, id: TaskId) -> Result<NextLabelDistribution, ModelError> {
        if !self.generators.contains_key(&id) {
            return Err(ModelError::UnknownTask(id));
        }
        let memory = self.encode(tokens)?;
        self.next_distribution(&memory, prefix, id)
    }

    pub fn base_table(&self) -> ParamId {
        self.base_table
    }
}

fn causal_mask(n: usize) -> Vec<bool> {
    let mut m = vec![false; n * n];
    for q in 0..n {
        for k in q + 1..n {
            m[q * n + k] = true;
        }
    }
    m
}


#[cfg(test)]
mod tests {
    use super::testing::tiny_config;
    use super::*;
    use crate::checkpoint::encode_store;
    use crate::tat::decompose;
    use crate::taxonomy::fixtures::{cs_taxonomy, ids};
    use crate::taxonomy::Taxonomy;

    fn cs_model(seed: u64) -> (Taxonomy, TatDecomposition, Model) {
        let t = cs_taxonomy();
        let d = decompose(&t).unwrap();
        let m = Model::new(tiny_config(10), &d, t.root(), t.len(), seed).unwrap();
        (t, d, m)
    }

    fn task_of(t: &Taxonomy, d: &TatDecomposition, root: &str) -> TaskId {
        d.tasks().iter().find(|x| x.root == t.id(root).unwrap()).unwrap().id
    }

    fn path(t: &Taxonomy, names: &[&str]) -> LabelPath {
        LabelPath::new(t, ids(t, names)).unwrap()
    }

    #[test]
    fn same_seed_same_parameters() {
        let (_, _, a) = cs_model(3);
        let (_, _, b) = cs_model(3);
        let (_, _, c) = cs_model(4);
        assert_eq!(encode_store(a.store()), encode_store(b.store()));
        assert_ne!(encode_store(a.store()), encode_store(c.store()));
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config(10);
        c.n_heads = 3;
        assert!(c.validate().is_err());
        assert!(ModelConfig { vocab_size: 10, ..ModelConfig::default() }.validate().is_ok());
    }

    #[test]
    fn pretrained_rows_replace_exactly_those_rows() {
        let (_, _, mut m) = cs_model(1);
        let before = m.store().get(m.text_embedding).clone();
        let v = [0.5; 8];
        assert_eq!(m.set_text_embeddings([(2, &v[..]), (4, &v[..])]).unwrap(), 2);
        let after = m.store().get(m.text_embedding);
        let changed = (0..10).filter(|&r| before.row(r) != after.row(r)).count();
        assert_eq!(changed, 2);
        assert_eq!(
            m.set_text_embeddings([(1, &[0.0; 3][..])]),
            Err(ModelError::EmbeddingDimMismatch { expected: 8, found: 3 })
        );
    }

    #[test]
    fn shapes_and_length_limits() {
        let (t, d, m) = cs_model(1);
        let mut g = Graph::new(m.store());
        let mem = m.encode_text(&mut g, &[2, 3, 4]).unwrap();
        assert_eq!(g.value(mem).shape(), &[3, 8]);
        let p = ids(&t, &["CS", "ML", "LLMs"]);
        let s = m.decode_shared(&mut g, mem, &p).unwrap();
        assert_eq!(g.value(s).shape(), &[3, 8]);
        let ml = task_of(&t, &d, "ML");
        let probs = m.generate(&mut g, s, mem, &p, ml).unwrap();
        assert_eq!(g.value(probs).shape(), &[3, d.task(ml).unwrap().len() + 1]);
        assert!(g.value(probs).all_finite());
        let empty = m.encode(&[]).unwrap();
        assert_eq!(empty.shape(), &[1, 8]);
        assert!(matches!(m.encode(&[2; 17]), Err(ModelError::SequenceTooLong { len: 17, max: 16 })));
        assert!(matches!(m.encode(&[10]), Err(ModelError::UnknownToken(10))));
        assert!(matches!(m.forward(&[2], &path(&t, &["CS"]), TaskId(9)), Err(ModelError::UnknownTask(_))));
    }

    #[test]
    fn path_too_long() {
        let t = Taxonomy::from_named_edges((0..9).map(|i| (format!("n{i}"), format!("n{}", i + 1)))).unwrap();
        let d = decompose(&t).unwrap();
        let m = Model::new(tiny_config(4), &d, t.root(), t.len(), 0).unwrap();
        let long = LabelPath::new(&t, (0..10).map(LabelId::from).collect()).unwrap();
        assert!(matches!(m.forward(&[2], &long, TaskId(0)), Err(ModelError::PathTooLong { len: 10, max: 8 })));
    }

    #[test]
    fn positions_matter() {
        let (_, _, m) = cs_model(2);
        let a = m.encode(&[2, 3, 4]).unwrap();
        let b = m.encode(&[3, 2, 4]).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn untrained_distribution_support() {
        let (t, d, m) = cs_model(5);
        let ml = task_of(&t, &d, "ML");
        let dist = m.forward(&[2, 5], &path(&t, &["CS", "ML"]), ml).unwrap();
        let names: Vec<&str> = dist.labels.iter().map(|&l| t.name(l)).collect();
        assert_eq!(names, ["ML", "LLMs", "RL", "Unsupervised"]);
        assert!((dist.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for &l in &ids(&t, &["LLMs", "RL", "Unsupervised"]) {
            let p = dist.prob(NextLabel::Label(l));
            assert!(p > 0.0 && p < 1.0);
        }
        assert!(dist.stop_prob() > 0.0 && dist.stop_prob() < 1.0);
        assert_eq!(dist.prob(NextLabel::Label(t.id("Database").unwrap())), 0.0);
    }

    #[test]
    fn out_of_task_prefix_positions_are_masked() {
        let (t, d, m) = cs_model(1);
        let ml = task_of(&t, &d, "ML");
        let p = ids(&t, &["CS", "NLP", "LLMs"]);
        let mask = Model::task_mask(d.task(ml).unwrap(), &p);
        // last query row: BOS visible, NLP hidden, LLMs visible
        assert_eq!(&mask[6..9], &[false, true, false]);

        // Changing the generator input at the NLP position leaves the LLMs
        // position untouched.
        let mem = m.encode(&[2, 3]).unwrap();
        let run = |bump: f64| {
            let mut g = Graph::new(m.store());
            let memv = g.input(mem.clone());
            let shared = m.decode_shared(&mut g, memv, &p).unwrap();
            let mut s = g.value(shared).clone();
            s.row_mut(1).iter_mut().for_each(|x| *x += bump);
            let sv = g.input(s);
            let h = m.generator_hidden(&mut g, sv, memv, &p, ml).unwrap();
            g.value(h).row(2).to_vec()
        };
        assert_eq!(run(0.0), run(3.0));
    }

    #[test]
    fn generators_are_isolated() {
        let (t, d, mut m) = cs_model(1);
        let ml = task_of(&t, &d, "ML");
        let nlp = task_of(&t, &d, "NLP");
        let mem = m.encode(&[2, 3]).unwrap();
        let p = path(&t, &["CS", "NLP", "LLMs"]);
        let before = m.next_distribution(&mem, &p, nlp).unwrap();
        for id in m.trainable_parameters(TrainScope::GeneratorOnly(ml)).unwrap() {
            m.store_mut().get_mut(id).data_mut().iter_mut().for_each(|x| *x += 0.3);
        }
        assert_eq!(m.next_distribution(&mem, &p, nlp).unwrap(), before);
        assert_ne!(m.next_distribution(&mem, &p, ml).unwrap().probs, before.probs);
    }

    #[test]
    fn generator_scope_audit() {
        let (t, d, m) = cs_model(1);
        let ml = task_of(&t, &d, "ML");
        let scoped = m.trainable_parameters(TrainScope::GeneratorOnly(ml)).unwrap();
        // self and cross attention (4 linears each), 3 norms, 2 ff linears, head
        assert_eq!(scoped.len(), (4 + 4 + 2 + 1) * 2 + 3 * 2);
        assert!(scoped.iter().all(|&p| m.store().name(p).starts_with(&format!("generator.{}.", ml.0))));
        assert_eq!(m.trainable_parameters(TrainScope::All).unwrap().len(), m.store().len());
        assert!(m.trainable_parameters(TrainScope::GeneratorOnly(TaskId(7))).is_err());
    }

    #[test]
    fn added_task_gets_extension_rows_and_layout_round_trips() {
        let t = cs_taxonomy();
        let d = decompose(&t).unwrap();
        let ml = task_of(&t, &d, "ML");
        let ml_labels = d.task(ml).unwrap().labels().to_vec();
        let others: Vec<TaskId> = d.task_ids().filter(|&i| i != ml).collect();
        let base: Vec<LabelId> = t.labels().filter(|l| *l != t.root() && !ml_labels.contains(l)).collect();
        let mut m = Model::with_tasks(tiny_config(10), &d, t.root(), t.len(), &others, &base, 9).unwrap();
        assert!(m.store().iter().all(|(_, n, _)| !n.contains(&format!("generator.{}", ml.0))));
        let shared_before: Vec<(String, Tensor)> =
            m.store().iter().map(|(_, n, t)| (String::from(n), t.clone())).collect();
        m.add_task(d.task(ml).unwrap().clone()).unwrap();
        let ext = m.store().id(&format!("label_embedding.task{}", ml.0)).unwrap();
        // LLMs already has a row from the NLP generator
        let fresh: Vec<&str> = ml_labels.iter().map(|&l| t.name(l)).filter(|n| *n != "LLMs").collect();
        assert_eq!(m.store().get(ext).rows(), fresh.len());
        for (n, v) in &shared_before {
            assert_eq!(m.store().get(m.store().id(n).unwrap()), v);
        }
        let scoped = m.trainable_parameters(TrainScope::GeneratorOnly(ml)).unwrap();
        assert!(scoped.contains(&ext));
        assert!(m.add_task(d.task(ml).unwrap().clone()).is_err());

        let rebuilt = Model::from_layout(tiny_config(10), &d, &m.layout()).unwrap();
        let names = |m: &Model| m.store().iter().map(|(_, n, t)| (String::from(n), t.shape().to_vec())).collect::<Vec<_>>();
        assert_eq!(names(&rebuilt), names(&m));
    }
}
