use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algorithms::{InnerLoopConfig, OuterLoopConfig};
use crate::episodes::SyntheticConfig;
use crate::models::{Algorithm, DEFAULT_AM3_HIDDEN, DEFAULT_BODY_HIDDEN, DEFAULT_HYPER_HIDDEN, DEFAULT_PROTOTYPE_DIM};

use super::{HarnessError, Init};

pub const SYNTHETIC: &str = "synthetic";

/// Everything that determines a run. Serialized as the JSON config file;
/// CLI flags override individual fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub ways: usize,
    pub shots: usize,
    /// `"synthetic"` or a path to an MMFS manifest (or its directory).
    pub data: String,
    pub synthetic: SyntheticConfig,
    pub seeds: Vec<u64>,
    /// Meta-training budget in tasks.
    pub episodes: usize,
    /// Validate after every this many training tasks.
    pub val_every: usize,
    pub val_tasks: usize,
    pub eval_tasks: usize,
    pub query_per_class: usize,
    /// Meta-train query images per class; `None` picks the per-algorithm value.
    pub train_queries: Option<usize>,
    pub inner: InnerLoopConfig,
    /// `None` picks the per-algorithm defaults.
    pub outer: Option<OuterLoopConfig>,
    pub dropout: Option<f64>,
    pub body_hidden: Vec<usize>,
    pub hyper_hidden: usize,
    pub prototype_dim: usize,
    pub am3_hidden: usize,
    pub init: Init,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Fumi,
            ways: 5,
            shots: 1,
            data: SYNTHETIC.to_owned(),
            synthetic: SyntheticConfig::default(),
            seeds: (0..5).collect(),
            episodes: 30_000,
            val_every: 500,
            val_tasks: 200,
            eval_tasks: 1000,
            query_per_class: 20,
            train_queries: None,
            inner: InnerLoopConfig::default(),
            outer: None,
            dropout: None,
            body_hidden: DEFAULT_BODY_HIDDEN.to_vec(),
            hyper_hidden: DEFAULT_HYPER_HIDDEN,
            prototype_dim: DEFAULT_PROTOTYPE_DIM,
            am3_hidden: DEFAULT_AM3_HIDDEN,
            init: Init::Random,
            out: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        match (self.algorithm, self.shots) {
            (Algorithm::Am3Zero, 0) => {}
            (Algorithm::Am3Zero, n) => return bad(format!("am3-zero is zero-shot, got --shots {n}")),
            (a, 0) => return bad(format!("{a} needs at least one shot")),
            _ => {}
        }
        if self.ways < 2 {
            return bad("need at least 2 ways".into());
        }
        if self.seeds.is_empty() {
            return bad("need at least one seed".into());
        }
        if self.query_per_class == 0 || self.train_queries == Some(0) {
            return bad("query sets must be non-empty".into());
        }
        if self.inner.alpha.is_nan() || self.inner.alpha < 0.0 || self.inner.train_steps == 0 {
            return bad("inner loop needs alpha >= 0 and at least one step".into());
        }
        let outer = self.outer_config();
        if outer.lr.is_nan() || outer.lr <= 0.0 || !(0.0..1.0).contains(&outer.beta1) || !(0.0..1.0).contains(&outer.beta2) {
            return bad("outer optimizer needs lr > 0 and decay rates in [0, 1)".into());
        }
        if outer.tasks_per_batch == 0 {
            return bad("tasks_per_batch must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout()) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout()));
        }
        if self.val_every == 0 {
            return bad("val_every must be at least 1".into());
        }
        if self.body_hidden.is_empty() {
            return bad("body needs at least one hidden layer".into());
        }
        Ok(())
    }

    pub fn outer_config(&self) -> OuterLoopConfig {
        self.outer.clone().unwrap_or_else(|| {
            if self.algorithm.is_gradient_based() {
                OuterLoopConfig::gradient_based()
            } else {
                OuterLoopConfig::metric_based(self.shots)
            }
        })
    }

    pub fn dropout(&self) -> f64 {
        self.dropout.unwrap_or(if self.algorithm.is_gradient_based() {
            crate::algorithms::GRADIENT_DROPOUT
        } else {
            crate::algorithms::METRIC_DROPOUT
        })
    }

    pub fn train_queries(&self) -> usize {
        self.train_queries
            .unwrap_or_else(|| crate::algorithms::train_queries(self.algorithm, self.shots))
    }

    /// The same config pinned to one seed.
    pub fn for_seed(&self, seed: u64) -> Self {
        Self {
            seeds: vec![seed],
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical JSON of everything except the output
    /// directory.
    pub fn digest(&self) -> [u8; 32] {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("out");
        }
        let bytes = serde_json::to_vec(&value).expect("value serializes");
        Sha256::digest(bytes).into()
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("config file: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shot_rules() {
        let mut cfg = ExperimentConfig {
            algorithm: Algorithm::Am3Zero,
            shots: 1,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
        cfg.shots = 0;
        assert!(cfg.validate().is_ok());
        cfg.algorithm = Algorithm::Fumi;
        assert!(cfg.validate().is_err());
        cfg.shots = 3;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn per_algorithm_defaults() {
        let fumi = ExperimentConfig::default();
        assert_eq!(fumi.outer_config().lr, 3e-5);
        assert_eq!(fumi.outer_config().tasks_per_batch, 4);
        assert_eq!(fumi.dropout(), 0.25);
        assert_eq!(fumi.train_queries(), 32);
        let am3 = ExperimentConfig {
            algorithm: Algorithm::Am3,
            shots: 5,
            ..Default::default()
        };
        assert_eq!(am3.outer_config().lr, 1e-3);
        assert_eq!(am3.outer_config().tasks_per_batch, 2);
        assert_eq!(am3.dropout(), 0.2);
        assert_eq!(am3.train_queries(), 8);
    }

    #[test]
    fn json_round_trip_and_partial_files() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        let partial = ExperimentConfig::from_json(r#"{"algorithm": "maml", "shots": 5}"#).unwrap();
        assert_eq!(partial.algorithm, Algorithm::Maml);
        assert_eq!(partial.shots, 5);
        assert_eq!(partial.ways, 5);
        assert!(ExperimentConfig::from_json(r#"{"algorithm": "reptile"}"#).is_err());
    }

    #[test]
    fn digest_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            out: "elsewhere".into(),
            ..a.clone()
        };
        let c = ExperimentConfig { shots: 3, ..a.clone() };
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }
}
