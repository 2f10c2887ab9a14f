//! ProtoNet, AM3 and zero-shot AM3, plus the forced-mixing equivalences.

use fumi::algorithms::{Am3, Learner, OuterLoopConfig, ProtoNet};
use fumi::episodes::{sample_task, SplitRole};
use fumi::harness::{evaluate_learner, load_data, train, ExperimentConfig};
use fumi::models::{Algorithm, Am3Params, MixMode};
use fumi::rng;

fn main() {
    let base = ExperimentConfig {
        episodes: 1000,
        val_tasks: 50,
        eval_tasks: 200,
        ..Default::default()
    };
    let data = load_data(&base).unwrap();
    for (algorithm, shots) in [(Algorithm::ProtoNet, 1), (Algorithm::Am3, 1), (Algorithm::Am3Zero, 0)] {
        let config = ExperimentConfig {
            algorithm,
            shots,
            ..base.clone()
        };
        let outcome = train(&config, &data, 0).unwrap();
        let r = evaluate_learner(outcome.learner.as_ref(), &config, &data, 0, outcome.log).unwrap();
        println!("{algorithm} {shots}-shot: {:.2}%", 100.0 * r.mean_accuracy);
    }

    let params = Am3Params::new(data.image_dim, data.text_dim, 512, 512, &mut rng::stream(0, "example"));
    let outer = OuterLoopConfig::metric_based(1);
    let image_only = Am3::new(params.clone(), MixMode::ForceImageOnly, outer.clone());
    let proto = ProtoNet::new(params.projection.clone(), outer);
    let task = sample_task(&data.classes_in(SplitRole::Test), 5, 1, 20, &mut rng::stream(0, "task")).unwrap();
    let same = image_only.predict(&task).unwrap() == proto.predict(&task).unwrap();
    println!("AM3 with lambda forced to 1 reproduces ProtoNet logits exactly: {same}");
}
