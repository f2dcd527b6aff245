use std::path::{Path, PathBuf};

use chae::corpus::DEFAULT_TAU;
use chae::decoding::DecodingConfig;
use chae::model::ModelConfig;
use chae::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Architecture settings; the vocabulary size comes from the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub k: usize,
    pub lambda: f64,
    pub enable_copy: bool,
    pub enable_emotion_loss: bool,
    pub max_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = ModelConfig::new(0);
        Self {
            d_model: c.d_model,
            n_heads: c.n_heads,
            n_enc_layers: c.n_enc_layers,
            n_dec_layers: c.n_dec_layers,
            d_ff: c.d_ff,
            k: c.k,
            lambda: c.lambda,
            enable_copy: c.enable_copy,
            enable_emotion_loss: c.enable_emotion_loss,
            max_len: c.max_len,
        }
    }
}

impl ModelSection {
    pub fn build(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_enc_layers: self.n_enc_layers,
            n_dec_layers: self.n_dec_layers,
            d_ff: self.d_ff,
            k: self.k,
            lambda: self.lambda,
            enable_copy: self.enable_copy,
            enable_emotion_loss: self.enable_emotion_loss,
            max_len: self.max_len,
            ..ModelConfig::new(vocab_size)
        }
    }
}

/// One training stage. Later stages start from the previous stage's best
/// checkpoint with a fresh optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    #[serde(default)]
    pub name: Option<String>,
    pub corpus: PathBuf,
    /// Train the emotion heads in this stage.
    #[serde(default = "yes")]
    pub emotion_loss: bool,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub lr: Option<f64>,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub seed: Option<u64>,
    pub tau: f64,
    /// Train / validation / test fractions of each corpus, by story.
    pub split: [f64; 3],
    pub min_count: usize,
    /// Tokens added to the vocabulary besides the corpus.
    pub vocab_extra: Vec<String>,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub decoding: DecodingConfig,
    pub stages: Vec<Stage>,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            seed: None,
            tau: DEFAULT_TAU,
            split: [0.8, 0.1, 0.1],
            min_count: 1,
            vocab_extra: Vec::new(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            decoding: DecodingConfig::default(),
            stages: Vec::new(),
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Writes the resolved seed into every component.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.train.seed = seed;
        self.decoding.seed = seed;
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// One line with the settings that matter most, shown at startup.
    pub fn summary(&self) -> String {
        format!(
            "batch={} lr={:e} lambda={} k={} top_k={} temperature={} strategy={} seed={}",
            self.train.batch_size,
            self.train.lr,
            self.model.lambda,
            self.model.k,
            self.decoding.top_k,
            self.decoding.temperature,
            serde_json::to_value(self.decoding.strategy)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
            self.seed()
        )
    }
}
