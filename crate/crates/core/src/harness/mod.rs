//! Experiment orchestration: configuration, per-seed training and
//! evaluation runs, on-disk artifacts and the results table.
//!
//! A run directory holds `config.json`, `checkpoint.bin`,
//! `train_log.jsonl` (one line per validation), `eval.json` (per-task test
//! accuracies) and `timing.json`. Everything except `timing.json` is a
//! deterministic function of the config and seed.

mod config;
mod report;
mod run;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgoError, Am3, Fumi, Learner, Maml, ProtoNet};
use crate::episodes::{load_dataset, synthetic_dataset, DataError, Dataset};
use crate::models::{Algorithm, Am3Params, CheckpointError, HeadParams, MixMode, Mlp};
use crate::rng;

pub use config::{ExperimentConfig, SYNTHETIC};
pub use report::{format_cell, report, write_report, Cell, Report};
pub use run::{
    evaluate_checkpoint, evaluate_learner, run_seed, test_tasks, train, train_seed, validation_tasks, seed_dir, LogRecord,
    SeedResult, Timing, TrainOutcome,
};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const EVAL_FILE: &str = "eval.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(#[from] DataError),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("checkpoint holds {found} but {expected} was requested")]
    AlgorithmMismatch { expected: Algorithm, found: Algorithm },
    #[error("class {0} is not in the test split")]
    SplitViolation(u32),
    #[error("missing runs: {}", .0.join(", "))]
    MissingRuns(Vec<String>),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl From<AlgoError> for HarnessError {
    fn from(e: AlgoError) -> Self {
        match e {
            AlgoError::SplitViolation(id) => HarnessError::SplitViolation(id),
            AlgoError::Checkpoint(c) => HarnessError::Checkpoint(c),
            AlgoError::EmptySupport | AlgoError::NoSteps | AlgoError::EmptyBatch => {
                HarnessError::Config(e.to_string())
            }
            AlgoError::Diff(_) | AlgoError::NonFiniteLoss => HarnessError::Numerical(e.to_string()),
        }
    }
}

impl HarnessError {
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "ConfigError",
            HarnessError::Data(_) => "DataError",
            HarnessError::Checkpoint(CheckpointError::ChecksumMismatch) => "ChecksumMismatch",
            HarnessError::Checkpoint(_) => "CheckpointError",
            HarnessError::Numerical(_) => "NumericalFailure",
            HarnessError::AlgorithmMismatch { .. } => "AlgorithmMismatch",
            HarnessError::SplitViolation(_) => "SplitViolation",
            HarnessError::MissingRuns(_) => "MissingRuns",
            HarnessError::Io { .. } => "IoError",
        }
    }

    /// 2 for configuration problems, 3 for data and artifact problems,
    /// 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::AlgorithmMismatch { .. } | HarnessError::SplitViolation(_) => 2,
            HarnessError::Data(_)
            | HarnessError::Checkpoint(_)
            | HarnessError::MissingRuns(_)
            | HarnessError::Io { .. } => 3,
            HarnessError::Numerical(_) => 4,
        }
    }

    /// Machine-readable form printed by the CLI.
    pub fn to_json(&self) -> serde_json::Value {
        let mut value = serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        if let HarnessError::MissingRuns(cells) = self {
            value["missing"] = serde_json::json!(cells);
        }
        value
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

/// How fresh parameters are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// Uniform fan-in scaled weights, zero biases.
    #[default]
    Random,
    /// All parameters zero: every class looks the same to the model.
    Zero,
}

/// The dataset named by `config.data`.
pub fn load_data(config: &ExperimentConfig) -> Result<Dataset, HarnessError> {
    if config.data == SYNTHETIC {
        return Ok(synthetic_dataset(&config.synthetic)?);
    }
    let mut path = PathBuf::from(&config.data);
    if path.is_dir() {
        path.push("manifest.json");
    }
    let split_seed = config.seeds.first().copied().unwrap_or(0);
    Ok(load_dataset(&path, split_seed)?)
}

/// A fresh learner for `config` on data of the given dimensions.
pub fn build_learner(
    config: &ExperimentConfig,
    image_dim: usize,
    text_dim: usize,
    seed: u64,
) -> Result<Box<dyn Learner>, HarnessError> {
    config.validate()?;
    let mut rng = rng::stream(seed, "init");
    let outer = config.outer_config();
    let dropout = config.dropout();
    let feature_dim = *config.body_hidden.last().expect("validated non-empty");
    let init = config.init;
    let mlp = |widths: &[usize], activate: bool, rng: &mut rng::Rng| match init {
        Init::Random => Mlp::new(widths, activate, rng),
        Init::Zero => Mlp::zeros(widths, activate),
    };
    let mut body_widths = vec![image_dim];
    body_widths.extend(&config.body_hidden);
    let learner: Box<dyn Learner> = match config.algorithm {
        Algorithm::Fumi => {
            let body = mlp(&body_widths, true, &mut rng);
            let hyper = mlp(&[text_dim, config.hyper_hidden, feature_dim + 1], false, &mut rng);
            let mut fumi = Fumi::new(body, hyper, config.inner.clone(), outer);
            fumi.dropout = dropout;
            Box::new(fumi)
        }
        Algorithm::Maml => {
            let body = mlp(&body_widths, true, &mut rng);
            let head = match init {
                Init::Random => HeadParams::init(config.ways, feature_dim, &mut rng),
                Init::Zero => HeadParams {
                    rows: crate::diffcore::Tensor::zeros(config.ways, feature_dim + 1),
                },
            };
            let mut maml = Maml::new(body, head, config.inner.clone(), outer);
            maml.dropout = dropout;
            Box::new(maml)
        }
        Algorithm::ProtoNet => {
            let projection = mlp(&[image_dim, config.prototype_dim], false, &mut rng);
            let mut net = ProtoNet::new(projection, outer);
            net.dropout = dropout;
            Box::new(net)
        }
        Algorithm::Am3 | Algorithm::Am3Zero => {
            let params = match init {
                Init::Random => Am3Params::new(image_dim, text_dim, config.prototype_dim, config.am3_hidden, &mut rng),
                Init::Zero => Am3Params::zeros(image_dim, text_dim, config.prototype_dim, config.am3_hidden),
            };
            let mix = if config.algorithm == Algorithm::Am3Zero {
                MixMode::ForceTextOnly
            } else {
                MixMode::Learned
            };
            let mut am3 = Am3::new(params, mix, outer);
            am3.dropout = dropout;
            Box::new(am3)
        }
    };
    Ok(learner)
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    std::fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| DataError::Format(format!("{}: {e}", path.display())).into())
}
