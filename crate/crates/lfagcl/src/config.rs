//! Flat TOML run configuration.

use std::path::{Path, PathBuf};

use lfagcl_core::{ClNegatives, LfaConfig, LfaSolver, NdcgVariant, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("override `{0}` is not of the form key=value")]
    OverrideSyntax(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Als,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Negatives {
    Batch,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ndcg {
    Literal,
    Standard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_max: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    pub dropout_rate: f64,
    pub layers: usize,
    pub embed_dim: usize,
    pub validate_every: usize,
    pub patience: usize,
    pub eval_k: Vec<usize>,
    pub cl_negatives: Negatives,

    pub lfa_f: usize,
    pub lfa_lambda: f64,
    pub lfa_max_iters: usize,
    pub lfa_rel_tol: f64,
    pub lfa_init_scale: f64,
    pub lfa_solver: Solver,
    pub lfa_sgd_learning_rate: f64,

    pub ndcg: Ndcg,
    /// Also exclude validation positives when ranking the test split.
    pub mask_validation: bool,
    pub n_groups: usize,

    pub delimiter: String,
    pub input: Option<String>,
    pub bundle: String,
    pub stats: String,
    pub lfa_checkpoint: String,
    pub checkpoint: String,
    pub log: String,
    pub report: String,
    pub table: String,
    pub sweep_table: String,

    pub lambda1_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
    pub dropout_grid: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let lfa = LfaConfig::default();
        Self {
            seed: train.seed,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            epochs_max: train.epochs_max,
            lambda1: train.lambda1,
            lambda2: train.lambda2,
            tau: train.tau,
            dropout_rate: train.dropout_rate,
            layers: train.layers,
            embed_dim: train.embed_dim,
            validate_every: train.validate_every,
            patience: train.patience,
            eval_k: train.eval_k,
            cl_negatives: Negatives::Batch,
            lfa_f: lfa.f,
            lfa_lambda: lfa.lambda,
            lfa_max_iters: lfa.max_iters,
            lfa_rel_tol: lfa.rel_tol,
            lfa_init_scale: lfa.init_scale,
            lfa_solver: Solver::Als,
            lfa_sgd_learning_rate: 0.01,
            ndcg: Ndcg::Literal,
            mask_validation: false,
            n_groups: 5,
            delimiter: "\t".into(),
            input: None,
            bundle: "dataset.bundle".into(),
            stats: "dataset_stats.toml".into(),
            lfa_checkpoint: "lfa.ckpt".into(),
            checkpoint: "model.ckpt".into(),
            log: "train_log.tsv".into(),
            report: "report.toml".into(),
            table: "report.tsv".into(),
            sweep_table: "sweep.tsv".into(),
            lambda1_grid: vec![0.1, 0.01, 0.001, 0.0001, 0.00001],
            tau_grid: vec![0.2, 0.5, 0.8, 1.0, 3.0],
            dropout_grid: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
        }
    }
}

/// Keys that only name files or sweep grids; they do not affect a trained model.
const NON_TRAINING_KEYS: &[&str] = &[
    "ndcg",
    "mask_validation",
    "n_groups",
    "delimiter",
    "input",
    "bundle",
    "stats",
    "lfa_checkpoint",
    "checkpoint",
    "log",
    "report",
    "table",
    "sweep_table",
    "lambda1_grid",
    "tau_grid",
    "dropout_grid",
];

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key=value` overrides. Values are read as TOML, falling back
    /// to a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut table = toml::Table::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let known = toml::Table::try_from(Self::default()).expect("defaults serialize");
        for item in overrides {
            let item = item.as_ref();
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| ConfigError::OverrideSyntax(item.to_string()))?;
            let key = key.trim();
            if !known.contains_key(key) && key != "input" {
                return Err(ConfigError::UnknownKey(key.to_string()));
            }
            let value = parse_value(value.trim());
            table.insert(key.to_string(), value);
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    pub fn delimiter_char(&self) -> Result<char, ConfigError> {
        let mut chars = self.delimiter.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Ok(c),
            _ => Err(ConfigError::Invalid(format!(
                "delimiter must be a single character, got {:?}",
                self.delimiter
            ))),
        }
    }

    pub fn lfa_config(&self) -> LfaConfig {
        LfaConfig {
            f: self.lfa_f,
            lambda: self.lfa_lambda,
            max_iters: self.lfa_max_iters,
            rel_tol: self.lfa_rel_tol,
            init_scale: self.lfa_init_scale,
            seed: self.seed,
            solver: match self.lfa_solver {
                Solver::Als => LfaSolver::Als,
                Solver::Sgd => LfaSolver::Sgd {
                    learning_rate: self.lfa_sgd_learning_rate,
                },
            },
        }
    }

    pub fn ndcg_variant(&self) -> NdcgVariant {
        match self.ndcg {
            Ndcg::Literal => NdcgVariant::Literal,
            Ndcg::Standard => NdcgVariant::Standard,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs_max: self.epochs_max,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            tau: self.tau,
            dropout_rate: self.dropout_rate,
            layers: self.layers,
            embed_dim: self.embed_dim,
            lfa: self.lfa_config(),
            seed: self.seed,
            validate_every: self.validate_every,
            patience: self.patience,
            eval_k: self.eval_k.clone(),
            cl_negatives: match self.cl_negatives {
                Negatives::Batch => ClNegatives::Batch,
                Negatives::Full => ClNegatives::Full,
            },
            ndcg: self.ndcg_variant(),
        }
    }

    /// Checks everything the core validators check plus the CLI-only fields.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.delimiter_char()?;
        if self.n_groups < 2 {
            return Err(ConfigError::Invalid("n_groups must be at least 2".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical TOML of the fields that shape training.
    pub fn training_hash(&self) -> [u8; 32] {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        for key in NON_TRAINING_KEYS {
            table.remove(*key);
        }
        let text = toml::to_string(&table).expect("table serializes");
        Sha256::digest(text.as_bytes()).into()
    }
}

fn parse_value(text: &str) -> toml::Value {
    let doc = format!("v = {text}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
