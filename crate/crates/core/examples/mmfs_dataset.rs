//! Writing a dataset in the MMFS v1 cached-embedding format and training
//! from it. Usage: `mmfs_dataset [dir]` (defaults to a temporary directory).

use fumi::episodes::{load_dataset, synthetic_dataset, write_dataset, SyntheticConfig};
use fumi::harness::{load_data, train, evaluate_learner, ExperimentConfig};
use fumi::models::Algorithm;

fn main() {
    let tmp = std::env::temp_dir().join("fumi-mmfs-example");
    let dir = std::env::args().nth(1).map(Into::into).unwrap_or(tmp);
    let source = synthetic_dataset(&SyntheticConfig::default()).unwrap();
    let manifest = write_dataset(&dir, source.image_dim, source.text_dim, &source.classes, Some(&source.split)).unwrap();
    println!("wrote {} classes to {}", manifest.classes.len(), dir.display());

    let loaded = load_dataset(&dir.join("manifest.json"), 0).unwrap();
    assert_eq!(loaded.split, source.split);
    println!("first text embedding: {:?}", &loaded.classes[0].text[..4]);

    let config = ExperimentConfig {
        algorithm: Algorithm::ProtoNet,
        data: dir.display().to_string(),
        episodes: 500,
        val_tasks: 50,
        eval_tasks: 200,
        ..Default::default()
    };
    let data = load_data(&config).unwrap();
    let outcome = train(&config, &data, 0).unwrap();
    let result = evaluate_learner(outcome.learner.as_ref(), &config, &data, 0, outcome.log).unwrap();
    println!("protonet 5-way 1-shot from disk: {:.1}%", 100.0 * result.mean_accuracy);
}
