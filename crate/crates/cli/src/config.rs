//! Run configuration: one TOML document covering data source, model kind,
//! architecture sizes, and the training loop. Unknown keys are rejected so a
//! typo fails fast instead of silently using a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use adnfm_core::data::Task;
use adnfm_core::model::{HyperParams, ModelKind};
use adnfm_core::train::{EvalMetric, TrainConfig};
use adnfm_core::{Error, Result};

/// Criteo files default to a 500k-row subsample.
pub const CRITEO_DEFAULT_MAX_ROWS: usize = 500_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// "criteo" | "movielens" | "tsv"
    pub format: String,
    /// File path; for movielens, the directory holding ratings.csv and
    /// movies.csv.
    pub path: PathBuf,
    /// "ctr" | "regression"
    pub task: String,
    #[serde(default)]
    pub max_rows: Option<usize>,
    /// Vocabulary threshold for categorical fields.
    #[serde(default = "default_min_count")]
    pub min_count: usize,
}

fn default_min_count() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// "lr" | "fm" | "dnn" | "deepfm" | "densefm" | "adnfm"
    pub kind: String,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_attn_dim")]
    pub attn_dim: usize,
}

fn default_embedding_dim() -> usize {
    10
}
fn default_hidden_dim() -> usize {
    32
}
fn default_depth() -> usize {
    2
}
fn default_attn_dim() -> usize {
    32
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs_max: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub patience: usize,
    pub seed: u64,
    /// "logloss" | "auc" | "rmse"; defaults by task.
    pub eval_metric: Option<String>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs_max: 20,
            batch_size: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 3,
            seed: 42,
            eval_metric: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn task(&self) -> Result<Task> {
        Task::parse(&self.data.task)
    }

    pub fn kind(&self) -> Result<ModelKind> {
        ModelKind::parse(&self.model.kind)
    }

    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            embedding_dim: self.model.embedding_dim,
            hidden_dim: self.model.hidden_dim,
            depth: self.model.depth,
            attn_dim: self.model.attn_dim,
        }
    }

    pub fn effective_max_rows(&self) -> Option<usize> {
        match self.data.max_rows {
            Some(n) => Some(n),
            None if self.data.format == "criteo" => Some(CRITEO_DEFAULT_MAX_ROWS),
            None => None,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let task = self.task()?;
        let mut cfg = TrainConfig::new(self.kind()?, self.hyper(), task);
        cfg.epochs_max = self.train.epochs_max;
        cfg.batch_size = self.train.batch_size;
        cfg.learning_rate = self.train.learning_rate;
        cfg.beta1 = self.train.beta1;
        cfg.beta2 = self.train.beta2;
        cfg.epsilon = self.train.epsilon;
        cfg.early_stop_patience = self.train.patience;
        cfg.seed = self.train.seed;
        cfg.eval_metric = match &self.train.eval_metric {
            Some(name) => EvalMetric::parse(name)?,
            None => EvalMetric::for_task(task),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Stable fingerprint of the training-relevant configuration. Paths and
    /// the output directory are excluded so relocating a run does not change
    /// its identity.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            format: &'a str,
            task: &'a str,
            max_rows: Option<usize>,
            min_count: usize,
            model: &'a ModelSection,
            train: &'a TrainSection,
        }
        let view = View {
            format: &self.data.format,
            task: &self.data.task,
            max_rows: self.data.max_rows,
            min_count: self.data.min_count,
            model: &self.model,
            train: &self.train,
        };
        let canonical = serde_json::to_string(&view).expect("config serializes");
        format!("{:016x}", fnv1a64(canonical.as_bytes()))
    }
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
