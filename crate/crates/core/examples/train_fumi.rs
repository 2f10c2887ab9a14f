//! Meta-training FuMI on the synthetic dataset and scoring it on the test
//! split. Usage: `train_fumi [episodes] [shots]`.

use fumi::harness::{evaluate_learner, load_data, train, ExperimentConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let episodes = args.next().map_or(2000, |a| a.parse().unwrap());
    let shots = args.next().map_or(1, |a| a.parse().unwrap());
    let config = ExperimentConfig {
        shots,
        episodes,
        val_tasks: 50,
        eval_tasks: 200,
        ..Default::default()
    };
    let data = load_data(&config).unwrap();
    let outcome = train(&config, &data, 0).unwrap();
    for record in &outcome.log {
        println!(
            "episode {:>6}  train loss {:.3}  val loss {:.3}  val acc {:.3}",
            record.episode, record.train_loss, record.val_loss, record.val_accuracy
        );
    }
    let result = evaluate_learner(outcome.learner.as_ref(), &config, &data, 0, outcome.log).unwrap();
    println!(
        "fumi 5-way {shots}-shot: {:.2}% over {} test tasks",
        100.0 * result.mean_accuracy,
        result.n_tasks
    );
}
