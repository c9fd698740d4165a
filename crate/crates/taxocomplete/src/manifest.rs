//! Run manifests and the output directory they live in.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use taxocomplete_core::math::derive_seed;
use taxocomplete_core::tat::TatDecomposition;
use taxocomplete_core::taxonomy::Taxonomy;

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Build revision. Set `TAXOCOMPLETE_REVISION` at compile time to embed a
/// VCS revision.
pub const REVISION: &str = match option_env!("TAXOCOMPLETE_REVISION") {
    Some(r) => r,
    None => concat!("v", env!("CARGO_PKG_VERSION")),
};

/// Named random streams; each is derived from the run seed.
pub const SEED_STREAMS: [&str; 8] =
    ["split", "expand", "model", "train", "finetune", "uniform", "synth-taxonomy", "synth-corpus"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Covers label ids as well as task contents, since checkpoints index labels
/// by id.
pub fn decomposition_hash(t: &Taxonomy, d: &TatDecomposition) -> String {
    let mut s = t.names().join("\n");
    s.push_str("\n\n");
    s.push_str(&d.canonical_string(t));
    sha256_hex(s.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    /// File name without directories, so that manifests compare across
    /// checkouts.
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub revision: String,
    pub seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, InputFile>,
    pub decomposition_hash: Option<String>,
    /// How per-step losses are reduced into the training objective.
    pub loss_reduction: String,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Manifest {
            command: command.to_string(),
            revision: REVISION.to_string(),
            seed: config.seed,
            seeds: SEED_STREAMS.iter().map(|s| (s.to_string(), derive_seed(config.seed, s.as_bytes()))).collect(),
            config: config.clone(),
            inputs: BTreeMap::new(),
            decomposition_hash: None,
            loss_reduction: "mean over (prefix, next label, task) triples".to_string(),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path, bytes: &[u8]) {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.inputs.insert(role.to_string(), InputFile { name, sha256: sha256_hex(bytes) });
    }
}

/// An output directory that receives the manifest before anything else.
#[derive(Debug)]
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path, manifest: &Manifest) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        fs::write(root.join(MANIFEST_FILE), json + "\n")?;
        Ok(OutDir { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> io::Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, contents)?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> io::Result<PathBuf> {
        let json = serde_json::to_string_pretty(value).expect("report serializes");
        self.write(name, json + "\n")
    }
}
