//! Saving and restoring learners, and what a damaged checkpoint looks like.

use fumi::harness::{build_learner, load_data, test_tasks, ExperimentConfig};
use fumi::models::{Checkpoint, CheckpointError};

fn main() {
    let config = ExperimentConfig {
        eval_tasks: 1,
        ..Default::default()
    };
    let data = load_data(&config).unwrap();
    let learner = build_learner(&config, data.image_dim, data.text_dim, 0).unwrap();
    let checkpoint = Checkpoint {
        algorithm: learner.algorithm(),
        config_digest: config.digest(),
        tensors: learner.named_tensors(),
    };
    let bytes = checkpoint.to_bytes();
    println!("{} tensors, {} bytes", checkpoint.tensors.len(), bytes.len());
    for (name, t) in &checkpoint.tensors {
        println!("  {name} {:?}", t.shape());
    }

    let mut restored = build_learner(&config, data.image_dim, data.text_dim, 99).unwrap();
    restored.load(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    let task = &test_tasks(&config, &data, 0).unwrap()[0];
    assert_eq!(restored.predict(task).unwrap(), learner.predict(task).unwrap());
    println!("restored learner predicts identically");

    let mut damaged = bytes.clone();
    damaged[100] ^= 0x10;
    match Checkpoint::from_bytes(&damaged) {
        Err(CheckpointError::ChecksumMismatch) => println!("flipped bit detected"),
        other => println!("unexpected: {other:?}"),
    }
}
