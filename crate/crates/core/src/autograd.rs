//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] borrows a [`ParamStore`] read-only and records every operation
//! in creation order, which is already a topological order. [`Graph::backward`]
//! walks the tape in reverse once and returns gradients for the parameters
//! that were touched.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::{ShapeMismatch, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on a duplicate name, which is a
    /// construction bug rather than an input error.
    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        let id = ParamId(self.tensors.len());
        assert!(self.index.insert(name.clone(), id).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        id
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names.iter().zip(&self.tensors).enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// One summand of [`Graph::weighted_log`]: `weight · ln(p)` or, with
/// `complement`, `weight · ln(1 − p)`, where `p` is entry `index` of a row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogTerm {
    pub index: usize,
    pub weight: f64,
    pub complement: bool,
}

/// Floor applied inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var },
    Softmax(Var),
    MaskFill(Var, Vec<bool>),
    Gather { table: Var, ids: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Row { x: Var, index: usize },
    WeightedLog { x: Var, terms: Vec<LogTerm> },
    Sum(Vec<Var>),
}

struct Node {
    op: Op,
    value: Option<Tensor>,
    cache: Vec<f64>,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: BTreeMap<ParamId, Var>,
    clamped: usize,
}

type OpResult = Result<Var, ShapeMismatch>;

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> ShapeMismatch {
    ShapeMismatch { op, left: a.shape().to_vec(), right: b.shape().to_vec() }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph { store, nodes: Vec::new(), param_vars: BTreeMap::new(), clamped: 0 }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    /// Number of logarithm arguments that hit [`LOG_FLOOR`].
    pub fn clamped_logs(&self) -> usize {
        self.clamped
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.push_cached(op, value, Vec::new())
    }

    fn push_cached(&mut self, op: Op, value: Tensor, cache: Vec<f64>) -> Var {
        self.nodes.push(Node { op, value: Some(value), cache });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.get(*id),
            _ => unreachable!("only parameter nodes borrow their value"),
        }
    }

    /// A constant leaf; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    /// The leaf for a stored parameter, created once per graph.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node { op: Op::Param(id), value: None, cache: Vec::new() });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> OpResult {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> OpResult {
        let out = self.value(a).matmul_bt(self.value(b))?;
        Ok(self.push(Op::MatMulBt(a, b), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> OpResult {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("add", ta, tb));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> OpResult {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(mismatch("add_row", ta, tb));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(tb.data()) {
                *o += *b;
            }
        }
        Ok(self.push(Op::AddRow(a, bias), out))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x *= c);
        self.push(Op::Scale(a, c), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(Op::Relu(a), out)
    }

    /// Row-wise normalisation followed by `gamma ⊙ x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> OpResult {
        const EPS: f64 = 1e-5;
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = tx.cols();
        if tg.cols() != d || tb.cols() != d || tg.rows() != 1 || tb.rows() != 1 {
            return Err(mismatch("layer_norm", tx, tg));
        }
        let mut out = Tensor::zeros(tx.rows(), d);
        // cache: x̂ for every entry, then 1/σ per row
        let mut cache = vec![0.0; tx.len() + tx.rows()];
        for r in 0..tx.rows() {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / math::sqrt(var + EPS);
            cache[tx.len() + r] = inv;
            for c in 0..d {
                let xh = (row[c] - mean) * inv;
                cache[r * d + c] = xh;
                out.row_mut(r)[c] = tg.data()[c] * xh + tb.data()[c];
            }
        }
        Ok(self.push_cached(Op::LayerNorm { x, gamma, beta }, out, cache))
    }

    /// Row-wise softmax. Entries equal to −∞ get probability 0.
    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(Op::Softmax(a), out)
    }

    /// Sets entries where `mask` is true to −∞.
    pub fn mask_fill(&mut self, a: Var, mask: Vec<bool>) -> OpResult {
        let ta = self.value(a);
        if mask.len() != ta.len() {
            return Err(ShapeMismatch { op: "mask_fill", left: ta.shape().to_vec(), right: vec![mask.len()] });
        }
        let mut out = ta.clone();
        for (x, &m) in out.data_mut().iter_mut().zip(&mask) {
            if m {
                *x = f64::NEG_INFINITY;
            }
        }
        Ok(self.push(Op::MaskFill(a, mask), out))
    }

    /// Rows `ids` of `table`, stacked.
    pub fn embedding_lookup(&mut self, table: Var, ids: Vec<usize>) -> OpResult {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(ShapeMismatch { op: "embedding_lookup", left: t.shape().to_vec(), right: vec![bad] });
        }
        let d = t.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in &ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(ids.len(), d, data)?;
        Ok(self.push(Op::Gather { table, ids }, out))
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> OpResult {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in &parts {
            let tp = self.value(p);
            if tp.rows() != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), tp));
            }
            for r in 0..rows {
                out.row_mut(r)[off..off + tp.cols()].copy_from_slice(tp.row(r));
            }
            off += tp.cols();
        }
        Ok(self.push(Op::ConcatCols(parts), out))
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>) -> OpResult {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in &parts {
            let tp = self.value(p);
            if tp.cols() != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]), tp));
            }
            data.extend_from_slice(tp.data());
            rows += tp.rows();
        }
        let out = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts), out))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> OpResult {
        let tx = self.value(x);
        if start + len > tx.cols() {
            return Err(ShapeMismatch { op: "slice_cols", left: tx.shape().to_vec(), right: vec![start, len] });
        }
        let mut out = Tensor::zeros(tx.rows(), len);
        for r in 0..tx.rows() {
            out.row_mut(r).copy_from_slice(&tx.row(r)[start..start + len]);
        }
        Ok(self.push(Op::SliceCols { x, start }, out))
    }

    pub fn row(&mut self, x: Var, index: usize) -> OpResult {
        let tx = self.value(x);
        if index >= tx.rows() {
            return Err(ShapeMismatch { op: "row", left: tx.shape().to_vec(), right: vec![index] });
        }
        let out = Tensor::row_vector(tx.row(index).to_vec());
        Ok(self.push(Op::Row { x, index }, out))
    }

    /// `Σ weight · ln(p)` (or `ln(1 − p)`) over entries of a `1 × n` row,
    /// with the log argument floored at [`LOG_FLOOR`].
    pub fn weighted_log(&mut self, x: Var, terms: Vec<LogTerm>) -> OpResult {
        let tx = self.value(x);
        if tx.rows() != 1 || terms.iter().any(|t| t.index >= tx.cols()) {
            return Err(ShapeMismatch { op: "weighted_log", left: tx.shape().to_vec(), right: vec![terms.len()] });
        }
        let mut total = 0.0;
        let mut clamped = 0;
        for t in &terms {
            let p = tx.data()[t.index];
            let arg = if t.complement { 1.0 - p } else { p };
            if arg < LOG_FLOOR {
                clamped += 1;
            }
            total += t.weight * math::ln(arg.max(LOG_FLOOR));
        }
        self.clamped += clamped;
        Ok(self.push(Op::WeightedLog { x, terms }, Tensor::scalar(total)))
    }

    pub fn sum(&mut self, parts: Vec<Var>) -> OpResult {
        let mut out = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            let tp = self.value(p);
            if tp.shape() != out.shape() {
                return Err(mismatch("sum", &out, tp));
            }
            out.add_assign(tp);
        }
        Ok(self.push(Op::Sum(parts), out))
    }

    /// Gradients of the scalar `out` with respect to every parameter leaf
    /// reachable from it.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::filled(1, 1, 1.0));

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(_) => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_bt(self.value(*b)).expect("shapes recorded");
                    let db = self.value(*a).matmul_at(&g).expect("shapes recorded");
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulBt(a, b) => {
                    let da = g.matmul(self.value(*b)).expect("shapes recorded");
                    let db = g.matmul_at(self.value(*a)).expect("shapes recorded");
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, bias) => {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, x) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += *x;
                        }
                    }
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, c) => {
                    let mut da = g;
                    da.data_mut().iter_mut().for_each(|x| *x *= *c);
                    accumulate(&mut grads, *a, da);
                }
                Op::Relu(a) => {
                    let mut da = g;
                    for (d, x) in da.data_mut().iter_mut().zip(self.value(*a).data()) {
                        if *x <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LayerNorm { x, gamma, beta } => {
                    let tx = self.value(*x);
                    let (rows, d) = (tx.rows(), tx.cols());
                    let gam = self.value(*gamma).data();
                    let mut dx = Tensor::zeros(rows, d);
                    let mut dg = Tensor::zeros(1, d);
                    let mut dbeta = Tensor::zeros(1, d);
                    for r in 0..rows {
                        let inv = node.cache[tx.len() + r];
                        let xh = &node.cache[r * d..(r + 1) * d];
                        let gy = g.row(r);
                        let mut mean_dxh = 0.0;
                        let mut mean_dxh_xh = 0.0;
                        for c in 0..d {
                            let dxh = gy[c] * gam[c];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[c];
                            dg.data_mut()[c] += gy[c] * xh[c];
                            dbeta.data_mut()[c] += gy[c];
                        }
                        mean_dxh /= d as f64;
                        mean_dxh_xh /= d as f64;
                        let out = dx.row_mut(r);
                        for c in 0..d {
                            let dxh = gy[c] * gam[c];
                            out[c] = inv * (dxh - mean_dxh - xh[c] * mean_dxh_xh);
                        }
                    }
                    accumulate(&mut grads, *gamma, dg);
                    accumulate(&mut grads, *beta, dbeta);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().expect("owned");
                    let mut da = Tensor::zeros_like(y);
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for (c, o) in da.row_mut(r).iter_mut().enumerate() {
                            *o = yr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::MaskFill(a, mask) => {
                    let mut da = g;
                    for (d, &m) in da.data_mut().iter_mut().zip(mask) {
                        if m {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut dt = Tensor::zeros(t.rows(), t.cols());
                    for (r, &i) in ids.iter().enumerate() {
                        for (d, x) in dt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *d += *x;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut dp = Tensor::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        off += w;
                        accumulate(&mut grads, p, dp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = self.value(p).rows();
                        let c = g.cols();
                        let dp = Tensor::matrix(h, c, g.data()[off * c..(off + h) * c].to_vec()).expect("shape");
                        off += h;
                        accumulate(&mut grads, p, dp);
                    }
                }
                Op::SliceCols { x, start } => {
                    let tx = self.value(*x);
                    let mut dx = Tensor::zeros(tx.rows(), tx.cols());
                    for r in 0..tx.rows() {
                        dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Row { x, index } => {
                    let tx = self.value(*x);
                    let mut dx = Tensor::zeros(tx.rows(), tx.cols());
                    dx.row_mut(*index).copy_from_slice(g.data());
                    accumulate(&mut grads, *x, dx);
                }
                Op::WeightedLog { x, terms } => {
                    let tx = self.value(*x);
                    let mut dx = Tensor::zeros(1, tx.cols());
                    let up = g.as_scalar();
                    for t in terms {
                        let p = tx.data()[t.index];
                        let arg = if t.complement { 1.0 - p } else { p };
                        if arg >= LOG_FLOOR {
                            let sign = if t.complement { -1.0 } else { 1.0 };
                            dx.data_mut()[t.index] += up * t.weight * sign / arg;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        accumulate(&mut grads, p, g.clone());
                    }
                }
            }
        }

        let mut map = BTreeMap::new();
        for (&id, &v) in &self.param_vars {
            if let Some(g) = grads[v.0].take() {
                map.insert(id, g);
            }
        }
        Gradients { map }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Row-wise softmax on a plain tensor.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        debug_assert!(max > f64::NEG_INFINITY, "softmax over a fully masked row");
        let mut z = 0.0;
        for x in row.iter_mut() {
            *x = math::exp(*x - max);
            z += *x;
        }
        for x in row.iter_mut() {
            *x /= z;
        }
    }
    out
}

/// Parameter gradients produced by one backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.map.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn retain(&mut self, mut keep: impl FnMut(ParamId) -> bool) {
        self.map.retain(|k, _| keep(*k));
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.map.values_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= c);
        }
    }
}

/// Result of comparing reverse-mode gradients to central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: Option<(ParamId, usize)>,
    pub checked: usize,
}

/// Denominator floor of the relative error; entries whose analytic and
/// numeric gradients are both below it are compared absolutely against it.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares `∂f/∂θ` from [`Graph::backward`] with
/// `(f(θ + h·e_i) − f(θ − h·e_i)) / 2h` for every entry of the listed
/// parameters. The error per entry is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<F>(store: &ParamStore, params: &[ParamId], f: F, h: f64) -> GradCheck
where
    F: Fn(&mut Graph<'_>) -> Var,
{
    let analytic = {
        let mut g = Graph::new(store);
        let out = f(&mut g);
        g.backward(out)
    };
    let eval = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let out = f(&mut g);
        g.value(out).as_scalar()
    };
    let mut work = store.clone();
    let mut report = GradCheck { max_rel_error: 0.0, worst: None, checked: 0 };
    for &id in params {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + h;
            let plus = eval(&work);
            work.get_mut(id).data_mut()[i] = orig - h;
            let minus = eval(&work);
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id).map(|t| t.data()[i]).unwrap_or(0.0);
            let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            let err = (a - numeric).abs() / denom;
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                if err >= report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst = Some((id, i));
                }
            }
        }
    }
    report
}
