//! The four meta-learners and the evaluation loop.
//!
//! FuMI and MAML share the gradient-based machinery in [`gradient`]: an
//! inner loop of plain full-batch gradient descent on the support set,
//! differentiated through (to second order by default) by the outer
//! Adam update. ProtoNet and AM3 in [`metric`] classify by distance to
//! class prototypes and have no inner loop.

pub mod evaluate;
pub mod gradient;
pub mod metric;
mod optim;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffError, GradMode, Tensor};
use crate::episodes::Task;
use crate::models::{Algorithm, Checkpoint, CheckpointError, ModelError};
use crate::rng::Rng;

pub use evaluate::{accuracy, evaluate, evaluate_with, TaskScore};
pub use gradient::{adapt_values, fumi_init, inner_adapt, Fumi, Maml, ModelVars};
pub use metric::{am3_predict, protonet_predict, Am3, ProtoNet};
pub use optim::Adam;

#[derive(Debug, thiserror::Error)]
pub enum AlgoError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("class {0} is not in the test split")]
    SplitViolation(u32),
    #[error("support set is empty")]
    EmptySupport,
    #[error("inner loop needs at least one step")]
    NoSteps,
    #[error("empty task batch")]
    EmptyBatch,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl From<ModelError> for AlgoError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Diff(d) => AlgoError::Diff(d),
            ModelError::MissingInput(_) => AlgoError::EmptySupport,
        }
    }
}

/// Inner-loop settings for FuMI and MAML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnerLoopConfig {
    pub alpha: f64,
    pub train_steps: usize,
    /// Meta-test inner steps keyed by shot count.
    pub test_steps_by_shot: BTreeMap<usize, usize>,
    pub grad_mode: GradMode,
}

impl Default for InnerLoopConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            train_steps: 5,
            test_steps_by_shot: [(1, 50), (3, 50), (5, 100), (10, 100)].into_iter().collect(),
            grad_mode: GradMode::SecondOrder,
        }
    }
}

impl InnerLoopConfig {
    /// Steps for `shots`: the entry with the largest key not above it, or
    /// the smallest entry.
    pub fn test_steps(&self, shots: usize) -> usize {
        self.test_steps_by_shot
            .range(..=shots)
            .next_back()
            .or_else(|| self.test_steps_by_shot.iter().next())
            .map_or(self.train_steps, |(_, &s)| s)
    }
}

/// Outer-loop Adam settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OuterLoopConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub tasks_per_batch: usize,
    /// Separate learning rate for the body; `None` shares `lr`.
    pub body_lr: Option<f64>,
}

impl Default for OuterLoopConfig {
    fn default() -> Self {
        Self::gradient_based()
    }
}

impl OuterLoopConfig {
    pub fn gradient_based() -> Self {
        Self {
            lr: 3e-5,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            tasks_per_batch: 4,
            body_lr: None,
        }
    }

    pub fn metric_based(shots: usize) -> Self {
        Self {
            lr: 1e-3,
            tasks_per_batch: metric_tasks_per_batch(shots),
            ..Self::gradient_based()
        }
    }

    pub fn adam(&self) -> Adam {
        Adam::new(self.lr, self.weight_decay, self.beta1, self.beta2, self.eps)
    }

    pub fn body_adam(&self) -> Adam {
        Adam::new(
            self.body_lr.unwrap_or(self.lr),
            self.weight_decay,
            self.beta1,
            self.beta2,
            self.eps,
        )
    }
}

/// Tasks per batch for ProtoNet/AM3 by shot count.
pub fn metric_tasks_per_batch(shots: usize) -> usize {
    match shots {
        0 | 1 => 5,
        2 | 3 => 3,
        4 | 5 => 2,
        _ => 1,
    }
}

/// Meta-train query images per class.
pub fn train_queries(algorithm: Algorithm, shots: usize) -> usize {
    if algorithm.is_gradient_based() {
        32
    } else if shots <= 1 {
        10
    } else {
        8
    }
}

pub const GRADIENT_DROPOUT: f64 = 0.25;
pub const METRIC_DROPOUT: f64 = 0.2;

/// Averages over one outer batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub query_loss: f64,
    pub query_accuracy: f64,
}

/// A trainable few-shot classifier.
pub trait Learner {
    fn algorithm(&self) -> Algorithm;

    /// Query logits (`K*M x K`) after whatever test-time adaptation the
    /// learner performs. Deterministic.
    fn predict(&self, task: &Task) -> Result<Tensor, AlgoError>;

    /// Query logits before any test-time adaptation. Learners without an
    /// inner loop return [`Learner::predict`].
    fn predict_unadapted(&self, task: &Task) -> Result<Tensor, AlgoError> {
        self.predict(task)
    }

    /// One outer update from a batch of training tasks.
    fn train_step(&mut self, batch: &[Task], rng: &mut Rng) -> Result<StepMetrics, AlgoError>;

    fn named_tensors(&self) -> Vec<(String, Tensor)>;

    fn load(&mut self, checkpoint: &Checkpoint) -> Result<(), AlgoError>;

    /// Query loss and accuracy on one task in evaluation mode.
    fn score(&self, task: &Task) -> Result<(f64, f64), AlgoError> {
        let logits = self.predict(task)?;
        let loss = cross_entropy(&logits, &task.query_labels)?;
        Ok((loss, accuracy(&logits, &task.query_labels)))
    }
}

fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64, AlgoError> {
    let mut g = crate::diffcore::Graph::new();
    let l = g.leaf(logits.clone());
    let ce = g.softmax_cross_entropy(l, labels)?;
    let v = g.value(ce).data()[0];
    if !v.is_finite() {
        return Err(AlgoError::NonFiniteLoss);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_step_schedule() {
        let cfg = InnerLoopConfig::default();
        assert_eq!(cfg.test_steps(1), 50);
        assert_eq!(cfg.test_steps(3), 50);
        assert_eq!(cfg.test_steps(4), 50);
        assert_eq!(cfg.test_steps(5), 100);
        assert_eq!(cfg.test_steps(10), 100);
        assert_eq!(cfg.test_steps(0), 50);
    }

    #[test]
    fn metric_batches() {
        assert_eq!(
            [1, 3, 5, 10].map(metric_tasks_per_batch),
            [5, 3, 2, 1]
        );
        assert_eq!([1, 3, 5, 10].map(|s| train_queries(Algorithm::Am3, s)), [10, 8, 8, 8]);
        assert_eq!(train_queries(Algorithm::Fumi, 10), 32);
    }
}
