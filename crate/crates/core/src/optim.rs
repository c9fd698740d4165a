//! Adam with decoupled weight decay.

use alloc::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, ParamId, ParamStore};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { learning_rate: 5e-5, weight_decay: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Tensor,
    v: Tensor,
    step: u64,
}

/// Per-parameter state is created on first update, and the bias correction
/// uses that parameter's own step count, so a tensor that skips batches is
/// not decayed or moved in them.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    state: BTreeMap<ParamId, Moments>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW { cfg, state: BTreeMap::new() }
    }

    /// Applies `grads` to the parameters for which `allowed` holds.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, allowed: impl Fn(ParamId) -> bool) {
        let c = self.cfg;
        for (id, g) in grads.iter() {
            if !allowed(id) {
                continue;
            }
            let p = store.get_mut(id);
            let st = self.state.entry(id).or_insert_with(|| Moments {
                m: Tensor::zeros_like(p),
                v: Tensor::zeros_like(p),
                step: 0,
            });
            st.step += 1;
            let bc1 = 1.0 - math::pow(c.beta1, st.step as f64);
            let bc2 = 1.0 - math::pow(c.beta2, st.step as f64);
            let (m, v) = (st.m.data_mut(), st.v.data_mut());
            for (i, (x, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *x -= c.learning_rate * (mh / (math::sqrt(vh) + c.eps) + c.weight_decay * *x);
            }
        }
    }

    pub fn steps(&self, id: ParamId) -> u64 {
        self.state.get(&id).map_or(0, |s| s.step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use alloc::vec;

    #[test]
    fn minimises_a_quadratic() {
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::row_vector(vec![3.0, -2.0]));
        let mut opt = AdamW::new(AdamWConfig { learning_rate: 0.1, weight_decay: 0.0, ..Default::default() });
        for _ in 0..500 {
            let grads = {
                let mut g = Graph::new(&s);
                let v = g.param(x);
                let sq = g.matmul_bt(v, v).unwrap();
                g.backward(sq)
            };
            opt.step(&mut s, &grads, |_| true);
        }
        assert!(s.get(x).data().iter().all(|v| v.abs() < 1e-2), "{:?}", s.get(x));
    }

    #[test]
    fn zero_rate_and_filtered_params_do_not_move() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::row_vector(vec![1.0, 2.0]));
        let b = s.add("b", Tensor::row_vector(vec![1.0, 2.0]));
        let grads = {
            let mut g = Graph::new(&s);
            let (va, vb) = (g.param(a), g.param(b));
            let y = g.matmul_bt(va, vb).unwrap();
            g.backward(y)
        };
        let before = s.clone();
        AdamW::new(AdamWConfig { learning_rate: 0.0, ..Default::default() }).step(&mut s, &grads, |_| true);
        assert_eq!(s, before);
        let mut opt = AdamW::new(AdamWConfig { learning_rate: 0.1, ..Default::default() });
        opt.step(&mut s, &grads, |p| p == a);
        assert_eq!(s.get(b), before.get(b));
        assert_ne!(s.get(a), before.get(a));
        assert_eq!((opt.steps(a), opt.steps(b)), (1, 0));
    }
}
