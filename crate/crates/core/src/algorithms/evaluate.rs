use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::episodes::{MetaSplit, SplitRole, Task};

use super::{AlgoError, Learner};

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = logits
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    correct as f64 / labels.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub accuracy: f64,
    pub predictions: usize,
}

fn check_split(task: &Task, split: &MetaSplit) -> Result<(), AlgoError> {
    for &id in &task.class_ids {
        if split.role_of(id) != Some(SplitRole::Test) {
            return Err(AlgoError::SplitViolation(id));
        }
    }
    Ok(())
}

/// Scores `learner` on every task, in order. Every class of every task
/// must belong to the test split.
pub fn evaluate(
    learner: &dyn Learner,
    tasks: &[Task],
    split: &MetaSplit,
) -> Result<Vec<TaskScore>, AlgoError> {
    evaluate_with(tasks, split, |task| learner.predict(task))
}

/// [`evaluate`] with an arbitrary predictor.
pub fn evaluate_with(
    tasks: &[Task],
    split: &MetaSplit,
    mut predict: impl FnMut(&Task) -> Result<Tensor, AlgoError>,
) -> Result<Vec<TaskScore>, AlgoError> {
    for task in tasks {
        check_split(task, split)?;
    }
    tasks
        .iter()
        .map(|task| {
            let logits = predict(task)?;
            Ok(TaskScore {
                accuracy: accuracy(&logits, &task.query_labels),
                predictions: task.query_labels.len(),
            })
        })
        .collect()
}
