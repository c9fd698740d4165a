//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//!
//! [model]     # d_text, d_label, n_encoders, n_decoders, n_heads, ff_mult,
//!             # max_text_len, max_path_len, positional_encoding
//! [loss]      # epsilon, adaptive_smoothing, smoothing_form = "paper" | "conventional"
//! [train]     # learning_rate, weight_decay, epochs, batch_size, finetune_epochs
//! [beam]      # beam_width, max_extension_len, score_interior
//! [data]      # test_fraction, min_freq, ks, chance_draws
//! [synth]     # depth, branching, multi_parent_prob, docs_per_task, noise_vocab,
//!             # keywords_per_label, signal, doc_len, second_path_prob
//! ```
//!
//! Every key is optional. `vocab_size` is derived from the training corpus.

use serde::{Deserialize, Serialize};
use taxocomplete_core::decode::BeamConfig;
use taxocomplete_core::loss::LossConfig;
use taxocomplete_core::model::ModelConfig;
use taxocomplete_core::protocol::ExperimentConfig;
use taxocomplete_core::synth::SyntheticSpec;
use taxocomplete_core::train::TrainConfig;
use taxocomplete_core::vocab::DEFAULT_MIN_FREQ;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub finetune_epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            epochs: t.epochs,
            batch_size: t.batch_size,
            finetune_epochs: t.finetune_epochs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub test_fraction: f64,
    pub min_freq: usize,
    pub ks: Vec<usize>,
    pub chance_draws: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        DataSection { test_fraction: e.test_fraction, min_freq: DEFAULT_MIN_FREQ, ks: e.ks, chance_draws: e.chance_draws }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainSection,
    pub beam: BeamConfig,
    pub data: DataSection,
    pub synth: SyntheticSpec,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model.clone(),
            train: TrainConfig {
                learning_rate: self.train.learning_rate,
                weight_decay: self.train.weight_decay,
                epochs: self.train.epochs,
                batch_size: self.train.batch_size,
                finetune_epochs: self.train.finetune_epochs,
                loss: self.loss,
            },
            beam: self.beam,
            ks: self.data.ks.clone(),
            seed: self.seed,
            test_fraction: self.data.test_fraction,
            min_freq: self.data.min_freq,
            chance_draws: self.data.chance_draws,
        }
    }
}
