//! Width-adaptive label-smoothing loss.
//!
//! For a task of width `w`, smoothing weight `s = ε·w/(1+w)` (or `s = ε` when
//! not adaptive) and target `t` over the task's labels plus STOP:
//!
//! ```text
//! L = −[(1 − s)·ln P(t) + Σ_{ℓ ≠ t} s·ln(1 − P(ℓ))]      form = paper
//! L = −[(1 − s)·ln P(t) + Σ_{ℓ ≠ t} s·ln P(ℓ)]          form = conventional
//! ```

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, LogTerm, Var, LOG_FLOOR};
use crate::math;
use crate::model::{NextLabel, NextLabelDistribution};
use crate::tat::TaskSet;
use crate::tensor::ShapeMismatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingForm {
    Paper,
    Conventional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub epsilon: f64,
    #[serde(rename = "adaptive_smoothing")]
    pub adaptive: bool,
    #[serde(rename = "smoothing_form")]
    pub form: SmoothingForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { epsilon: 0.01, adaptive: true, form: SmoothingForm::Paper }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("target {0:?} is neither STOP nor a member of the task")]
    TargetOutsideTask(NextLabel),
    #[error("epsilon must lie in [0, 1), got {0}")]
    BadEpsilon(f64),
    #[error("target index {index} outside a distribution of {len} entries")]
    BadIndex { index: usize, len: usize },
    #[error("distribution is empty")]
    Empty,
    #[error(transparent)]
    Shape(#[from] ShapeMismatch),
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(LossError::BadEpsilon(self.epsilon));
        }
        Ok(())
    }

    /// Mass moved from the target to the other outcomes for a task of
    /// width `w`.
    pub fn smoothing_weight(&self, width: usize) -> f64 {
        if self.adaptive {
            let w = width as f64;
            self.epsilon * w / (1.0 + w)
        } else {
            self.epsilon
        }
    }

    fn terms(&self, n: usize, target: usize, width: usize) -> Vec<LogTerm> {
        let s = self.smoothing_weight(width);
        let complement = self.form == SmoothingForm::Paper;
        (0..n)
            .map(|i| {
                if i == target {
                    LogTerm { index: i, weight: 1.0 - s, complement: false }
                } else {
                    LogTerm { index: i, weight: s, complement }
                }
            })
            .filter(|t| t.weight != 0.0)
            .collect()
    }
}

/// Loss value and how many log arguments fell below the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub clamped: usize,
}

/// The loss on a plain probability vector. `probs` covers every outcome the
/// generator can emit; `width` is the task width.
pub fn smoothed_loss(probs: &[f64], target: usize, width: usize, cfg: &LossConfig) -> Result<LossValue, LossError> {
    cfg.validate()?;
    if probs.is_empty() {
        return Err(LossError::Empty);
    }
    if target >= probs.len() {
        return Err(LossError::BadIndex { index: target, len: probs.len() });
    }
    let mut value = 0.0;
    let mut clamped = 0;
    for t in cfg.terms(probs.len(), target, width) {
        let arg = if t.complement { 1.0 - probs[t.index] } else { probs[t.index] };
        if arg < LOG_FLOOR {
            clamped += 1;
        }
        value -= t.weight * math::ln(arg.max(LOG_FLOOR));
    }
    Ok(LossValue { value, clamped })
}

/// Position of `target` in a task's output layout (members, then STOP).
pub fn target_index(task: &TaskSet, target: NextLabel) -> Result<usize, LossError> {
    match target {
        NextLabel::Stop => Ok(task.len()),
        NextLabel::Label(l) => task.position(l).ok_or(LossError::TargetOutsideTask(target)),
    }
}

pub fn tat_loss(
    dist: &NextLabelDistribution,
    target: NextLabel,
    task: &TaskSet,
    cfg: &LossConfig,
) -> Result<LossValue, LossError> {
    let idx = target_index(task, target)?;
    smoothed_loss(&dist.probs, idx, task.width, cfg)
}

/// Recorded version of [`smoothed_loss`] on a `1 × n` probability row.
pub fn loss_node(g: &mut Graph<'_>, probs: Var, target: usize, width: usize, cfg: &LossConfig) -> Result<Var, LossError> {
    let n = g.value(probs).cols();
    if target >= n {
        return Err(LossError::BadIndex { index: target, len: n });
    }
    let ll = g.weighted_log(probs, cfg.terms(n, target, width))?;
    Ok(g.scale(ll, -1.0))
}

/// Mean of per-pair losses.
pub fn batch_loss(g: &mut Graph<'_>, losses: &[Var]) -> Result<Var, LossError> {
    if losses.is_empty() {
        return Err(LossError::Empty);
    }
    let s = g.sum(losses.to_vec())?;
    Ok(g.scale(s, 1.0 / losses.len() as f64))
}
