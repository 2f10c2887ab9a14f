use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::algorithms::{evaluate, Learner};
use crate::episodes::{sample_task, Dataset, SplitRole, Task};
use crate::models::{Algorithm, Checkpoint};
use crate::rng;

use super::{
    build_learner, load_data, read_json, write_json, ExperimentConfig, HarnessError, CHECKPOINT_FILE,
    CONFIG_FILE, EVAL_FILE, LOG_FILE, TIMING_FILE,
};

/// One line of `train_log.jsonl`, written at every validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// Training tasks consumed so far.
    pub episode: usize,
    /// Mean outer-batch query loss since the previous record.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

pub struct TrainOutcome {
    /// Parameters at the best validation loss (the final parameters when
    /// validation is disabled).
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRecord>,
    pub learner: Box<dyn Learner>,
}

/// Test accuracies of one seed: the `eval.json` artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub algorithm: Algorithm,
    pub ways: usize,
    pub shots: usize,
    pub seed: u64,
    pub n_tasks: usize,
    pub n_predictions: usize,
    pub mean_accuracy: f64,
    pub per_task: Vec<f64>,
    pub validation: Vec<LogRecord>,
    pub config_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

fn sample_tasks(
    dataset: &Dataset,
    role: SplitRole,
    config: &ExperimentConfig,
    count: usize,
    queries: usize,
    rng: &mut rng::Rng,
) -> Result<Vec<Task>, HarnessError> {
    let classes = dataset.classes_in(role);
    (0..count)
        .map(|_| Ok(sample_task(&classes, config.ways, config.shots, queries, rng)?))
        .collect()
}

/// The fixed validation tasks of `seed`.
pub fn validation_tasks(config: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<Vec<Task>, HarnessError> {
    let mut rng = rng::stream(seed, "validation");
    sample_tasks(dataset, SplitRole::Val, config, config.val_tasks, config.query_per_class, &mut rng)
}

/// The `config.eval_tasks` test tasks of `seed`.
pub fn test_tasks(config: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<Vec<Task>, HarnessError> {
    let mut rng = rng::stream(seed, "test-episodes");
    sample_tasks(dataset, SplitRole::Test, config, config.eval_tasks, config.query_per_class, &mut rng)
}

fn validate(learner: &dyn Learner, tasks: &[Task]) -> Result<(f64, f64), HarnessError> {
    let mut loss = 0.0;
    let mut acc = 0.0;
    for task in tasks {
        let (l, a) = learner.score(task)?;
        loss += l;
        acc += a;
    }
    let n = tasks.len() as f64;
    Ok((loss / n, acc / n))
}

fn snapshot(learner: &dyn Learner, digest: [u8; 32]) -> Checkpoint {
    Checkpoint {
        algorithm: learner.algorithm(),
        config_digest: digest,
        tensors: learner.named_tensors(),
    }
}

/// Meta-trains a fresh learner for `seed` to the episode budget.
///
/// Training tasks, dropout masks, initialization and validation tasks each
/// come from their own stream of `seed`. The checkpoint keeps the
/// parameters with the lowest validation loss; ties keep the earlier.
pub fn train(config: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<TrainOutcome, HarnessError> {
    let config = config.for_seed(seed);
    config.validate()?;
    let digest = config.digest();
    let mut learner = build_learner(&config, dataset.image_dim, dataset.text_dim, seed)?;
    let mut episode_rng = rng::stream(seed, "train-episodes");
    let mut dropout_rng = rng::stream(seed, "dropout");
    let val = validation_tasks(&config, dataset, seed)?;
    let batch_size = config.outer_config().tasks_per_batch;
    let queries = config.train_queries();

    let mut log = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let (mut loss_sum, mut acc_sum, mut batches) = (0.0, 0.0, 0usize);
    let mut done = 0;
    while done < config.episodes {
        let n = batch_size.min(config.episodes - done);
        let batch = sample_tasks(dataset, SplitRole::Train, &config, n, queries, &mut episode_rng)?;
        let metrics = learner.train_step(&batch, &mut dropout_rng)?;
        loss_sum += metrics.query_loss;
        acc_sum += metrics.query_accuracy;
        batches += 1;
        let before = done;
        done += n;
        let crossed = done / config.val_every > before / config.val_every;
        if !val.is_empty() && (crossed || done == config.episodes) {
            let (val_loss, val_accuracy) = validate(learner.as_ref(), &val)?;
            log.push(LogRecord {
                episode: done,
                train_loss: loss_sum / batches as f64,
                train_accuracy: acc_sum / batches as f64,
                val_loss,
                val_accuracy,
            });
            (loss_sum, acc_sum, batches) = (0.0, 0.0, 0);
            if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
                best = Some((val_loss, snapshot(learner.as_ref(), digest)));
            }
        }
    }
    let checkpoint = match best {
        Some((_, c)) => c,
        None => snapshot(learner.as_ref(), digest),
    };
    learner.load(&checkpoint)?;
    Ok(TrainOutcome {
        checkpoint,
        log,
        learner,
    })
}

/// Scores `learner` on the test tasks of `seed`.
pub fn evaluate_learner(
    learner: &dyn Learner,
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    validation: Vec<LogRecord>,
) -> Result<SeedResult, HarnessError> {
    let config = config.for_seed(seed);
    let tasks = test_tasks(&config, dataset, seed)?;
    let scores = evaluate(learner, &tasks, &dataset.split)?;
    let per_task: Vec<f64> = scores.iter().map(|s| s.accuracy).collect();
    Ok(SeedResult {
        algorithm: learner.algorithm(),
        ways: config.ways,
        shots: config.shots,
        seed,
        n_tasks: per_task.len(),
        n_predictions: scores.iter().map(|s| s.predictions).sum(),
        mean_accuracy: mean(&per_task),
        per_task,
        validation,
        config_digest: hex::encode(config.digest()),
    })
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn write_log(path: &Path, log: &[LogRecord]) -> Result<(), HarnessError> {
    let mut text = String::new();
    for record in log {
        text.push_str(&serde_json::to_string(record).expect("record serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn read_log(path: &Path) -> Result<Vec<LogRecord>, HarnessError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| crate::episodes::DataError::Format(format!("{}: {e}", path.display())).into())
        })
        .collect()
}

/// Trains one seed into `dir`: `config.json`, `checkpoint.bin`,
/// `train_log.jsonl` and the training time in `timing.json`.
pub fn train_seed(config: &ExperimentConfig, dataset: &Dataset, seed: u64, dir: &Path) -> Result<TrainOutcome, HarnessError> {
    create_dir(dir)?;
    let pinned = config.for_seed(seed);
    write_json(&dir.join(CONFIG_FILE), &pinned)?;
    let start = Instant::now();
    let outcome = train(&pinned, dataset, seed)?;
    let train_seconds = start.elapsed().as_secs_f64();
    outcome.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    write_log(&dir.join(LOG_FILE), &outcome.log)?;
    write_json(
        &dir.join(TIMING_FILE),
        &Timing {
            train_seconds,
            eval_seconds: 0.0,
        },
    )?;
    Ok(outcome)
}

/// Loads `checkpoint` into a learner built from `config` and scores it on
/// the test tasks of the config's first seed. The checkpoint's algorithm
/// must match the config's.
pub fn evaluate_checkpoint(config: &ExperimentConfig, checkpoint: &Path) -> Result<SeedResult, HarnessError> {
    config.validate()?;
    let seed = config.seeds[0];
    let ckpt = Checkpoint::load(checkpoint)?;
    if ckpt.algorithm != config.algorithm {
        return Err(HarnessError::AlgorithmMismatch {
            expected: config.algorithm,
            found: ckpt.algorithm,
        });
    }
    let dataset = load_data(config)?;
    let mut learner = build_learner(config, dataset.image_dim, dataset.text_dim, seed)?;
    learner.load(&ckpt)?;
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let validation = read_log(&dir.join(LOG_FILE))?;
    evaluate_learner(learner.as_ref(), config, &dataset, seed, validation)
}

/// Trains and evaluates one seed into `dir`, writing every artifact.
pub fn run_seed(config: &ExperimentConfig, dataset: &Dataset, seed: u64, dir: &Path) -> Result<SeedResult, HarnessError> {
    let start = Instant::now();
    let outcome = train_seed(config, dataset, seed, dir)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let result = evaluate_learner(outcome.learner.as_ref(), config, dataset, seed, outcome.log)?;
    let eval_seconds = start.elapsed().as_secs_f64();
    write_json(&dir.join(EVAL_FILE), &result)?;
    write_json(
        &dir.join(TIMING_FILE),
        &Timing {
            train_seconds,
            eval_seconds,
        },
    )?;
    Ok(result)
}

/// Directory of `seed` under `out`.
pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

pub(crate) fn load_seed_result(path: &Path) -> Result<SeedResult, HarnessError> {
    read_json(path)
}
