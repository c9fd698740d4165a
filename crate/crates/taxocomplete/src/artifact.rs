//! Trained-model files: a binary checkpoint plus a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use taxocomplete_core::checkpoint::{self, CheckpointError};
use taxocomplete_core::model::{Model, ModelConfig, ModelError, ModelLayout};
use taxocomplete_core::tat::{decompose, TatDecomposition};
use taxocomplete_core::taxonomy::Taxonomy;
use taxocomplete_core::vocab::Vocabulary;

use crate::formats::parse_taxonomy;
use crate::manifest::decomposition_hash;

pub const SIDECAR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub version: u32,
    pub config: ModelConfig,
    pub layout: ModelLayout,
    pub vocab: Vocabulary,
    pub decomposition_hash: String,
    /// The taxonomy in TSV form, so a model can be used on its own.
    pub taxonomy: String,
    pub seed: u64,
    /// Optimizer steps taken.
    pub step: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: bad sidecar: {message}")]
    BadSidecar { path: PathBuf, message: String },
    #[error("model was trained on decomposition {stored}, the taxonomy gives {current}")]
    DecompositionMismatch { stored: String, current: String },
    #[error("stored taxonomy: {0}")]
    Taxonomy(#[from] crate::formats::FormatError),
    #[error("stored taxonomy: {0}")]
    Decomposition(#[from] taxocomplete_core::tat::TatError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("json")
}

/// Writes `<ckpt>` and its sidecar `<ckpt>.json` (extension replaced).
pub fn save_model(ckpt: &Path, model: &Model, sidecar: &Sidecar) -> Result<(), ArtifactError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ArtifactError::Io { path, source }
    };
    fs::write(ckpt, checkpoint::encode_store(model.store())).map_err(io(ckpt))?;
    let side = sidecar_path(ckpt);
    let json = serde_json::to_string_pretty(sidecar).expect("sidecar serializes") + "\n";
    fs::write(&side, json).map_err(io(&side))?;
    Ok(())
}

/// A model with the taxonomy and decomposition it was trained against.
pub struct LoadedModel {
    pub taxonomy: Taxonomy,
    pub decomposition: TatDecomposition,
    pub model: Model,
    pub sidecar: Sidecar,
}

/// Loads `ckpt` and its sidecar. `taxonomy` replaces the stored taxonomy; it
/// must decompose to the same tasks.
pub fn load_model(ckpt: &Path, taxonomy: Option<Taxonomy>) -> Result<LoadedModel, ArtifactError> {
    let side = sidecar_path(ckpt);
    let text = fs::read_to_string(&side).map_err(|source| ArtifactError::Io { path: side.clone(), source })?;
    let sidecar: Sidecar =
        serde_json::from_str(&text).map_err(|e| ArtifactError::BadSidecar { path: side.clone(), message: e.to_string() })?;
    if sidecar.version != SIDECAR_VERSION {
        return Err(ArtifactError::BadSidecar { path: side, message: format!("unsupported version {}", sidecar.version) });
    }
    let taxonomy = match taxonomy {
        Some(t) => t,
        None => parse_taxonomy(&sidecar.taxonomy, false)?,
    };
    let decomposition = decompose(&taxonomy)?;
    let current = decomposition_hash(&taxonomy, &decomposition);
    if sidecar.decomposition_hash != current {
        return Err(ArtifactError::DecompositionMismatch { stored: sidecar.decomposition_hash, current });
    }
    let mut model = Model::from_layout(sidecar.config.clone(), &decomposition, &sidecar.layout)?;
    let bytes = fs::read(ckpt).map_err(|source| ArtifactError::Io { path: ckpt.to_path_buf(), source })?;
    checkpoint::load_into(model.store_mut(), &bytes)?;
    Ok(LoadedModel { taxonomy, decomposition, model, sidecar })
}
