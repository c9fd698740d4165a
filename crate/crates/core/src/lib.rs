//! Taxonomy-aware extreme multi-label completion.
//!
//! The crate is `no_std` (it needs `alloc`). It covers the weak-semilattice
//! algebra of label taxonomies, the decomposition of a taxonomy into
//! taxonomy-aware tasks, label-path extraction, a small reverse-mode autodiff
//! engine with the transformer model built on top of it, the width-adaptive
//! smoothing loss, beam-search path decoding, ranking metrics, and the
//! completion / few-shot experiment protocols.
//!
//! File formats, run manifests and the command-line driver live in the
//! `taxocomplete` companion crate.

#![no_std]

extern crate alloc;

pub mod autograd;
pub mod bitset;
pub mod checkpoint;
pub mod corpus;
pub mod decode;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod path;
pub mod protocol;
pub mod synth;
pub mod tat;
pub mod taxonomy;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use bitset::BitSet;
pub use corpus::Document;
pub use decode::{BeamConfig, LabelScores, ScoredPath};
pub use loss::{LossConfig, SmoothingForm};
pub use model::{Model, ModelConfig, NextLabel, NextLabelDistribution, TrainScope};
pub use path::LabelPath;
pub use tat::{TaskId, TaskSet, TatDecomposition};
pub use taxonomy::{LabelId, Poset, Taxonomy, TaxonomyError};
pub use tensor::Tensor;
