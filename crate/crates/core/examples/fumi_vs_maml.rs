//! FuMI against MAML at 1 and 10 shots over several seeds, reported in the
//! results-table format. Usage: `fumi_vs_maml [episodes] [seeds] [out_dir]`.

use fumi::harness::{load_data, report, run_seed, seed_dir, ExperimentConfig};
use fumi::models::Algorithm;

fn main() {
    let mut args = std::env::args().skip(1);
    let episodes = args.next().map_or(500, |a| a.parse().unwrap());
    let seeds: u64 = args.next().map_or(2, |a| a.parse().unwrap());
    let out = args.next().map_or_else(|| std::env::temp_dir().join("fumi-vs-maml"), Into::into);
    let base = ExperimentConfig {
        episodes,
        seeds: (0..seeds).collect(),
        val_tasks: 20,
        eval_tasks: 100,
        ..Default::default()
    };
    let data = load_data(&base).unwrap();
    for algorithm in [Algorithm::Fumi, Algorithm::Maml] {
        for shots in [1, 10] {
            let config = ExperimentConfig {
                algorithm,
                shots,
                ..base.clone()
            };
            for &seed in &config.seeds {
                let dir = seed_dir(&out.join(format!("{algorithm}-{shots}shot")), seed);
                let r = run_seed(&config, &data, seed, &dir).unwrap();
                println!("{algorithm} {shots}-shot seed {seed}: {:.2}%", 100.0 * r.mean_accuracy);
            }
        }
    }
    print!("{}", report(&[out]).unwrap().table());
}
