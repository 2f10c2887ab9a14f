use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fumi::diffcore::GradMode;
use fumi::harness::{
    evaluate_checkpoint, load_data, report, run_seed, seed_dir, train_seed, write_report, ExperimentConfig,
    HarnessError, CONFIG_FILE, EVAL_FILE,
};
use fumi::models::Algorithm;

#[derive(Parser)]
#[command(name = "fumi", version, about = "Multi-modal few-shot meta-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train one run per seed; with --eval also score each on the test split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Evaluate every seed right after training.
        #[arg(long)]
        eval: bool,
    },
    /// Score a checkpoint on test-split tasks.
    Eval {
        /// Checkpoint file, or a run directory holding `checkpoint.bin`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Tabulate every evaluated run under the given directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Where to write report.csv and report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<Algorithm>,
    #[arg(long)]
    ways: Option<usize>,
    #[arg(long)]
    shots: Option<usize>,
    /// Repeatable; replaces the config's seed list.
    #[arg(long)]
    seed: Vec<u64>,
    /// `synthetic` or an MMFS manifest path.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_grad_mode)]
    grad_mode: Option<GradMode>,
    /// Training budget for `train`, number of test tasks for `eval`.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    query_per_class: Option<usize>,
}

fn parse_grad_mode(s: &str) -> Result<GradMode, String> {
    match s {
        "first" => Ok(GradMode::FirstOrder),
        "second" => Ok(GradMode::SecondOrder),
        _ => Err(format!("expected first or second, got {s}")),
    }
}

fn read_config(path: &std::path::Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text)
}

impl Common {
    fn resolve(&self, base: Option<ExperimentConfig>, episodes_are_eval: bool) -> Result<ExperimentConfig, HarnessError> {
        let mut config = match &self.config {
            Some(path) => read_config(path)?,
            None => base.unwrap_or_default(),
        };
        if let Some(a) = self.algo {
            config.algorithm = a;
        }
        if let Some(w) = self.ways {
            config.ways = w;
        }
        if let Some(s) = self.shots {
            config.shots = s;
        }
        if !self.seed.is_empty() {
            config.seeds = self.seed.clone();
        }
        if let Some(d) = &self.data {
            config.data = d.clone();
        }
        if let Some(o) = &self.out {
            config.out = o.clone();
        }
        if let Some(m) = self.grad_mode {
            config.inner.grad_mode = m;
        }
        if let Some(e) = self.episodes {
            if episodes_are_eval {
                config.eval_tasks = e;
            } else {
                config.episodes = e;
            }
        }
        if let Some(q) = self.query_per_class {
            config.query_per_class = q;
        }
        config.validate()?;
        Ok(config)
    }
}

fn train(common: &Common, eval: bool) -> Result<(), HarnessError> {
    let config = common.resolve(None, false)?;
    let dataset = load_data(&config)?;
    for &seed in &config.seeds {
        let dir = seed_dir(&config.out, seed);
        if eval {
            let result = run_seed(&config, &dataset, seed, &dir)?;
            println!(
                "{}",
                serde_json::json!({"seed": seed, "dir": dir, "mean_accuracy": result.mean_accuracy})
            );
        } else {
            let outcome = train_seed(&config, &dataset, seed, &dir)?;
            let last = outcome.log.last();
            println!(
                "{}",
                serde_json::json!({"seed": seed, "dir": dir, "val_accuracy": last.map(|r| r.val_accuracy)})
            );
        }
    }
    Ok(())
}

fn eval(checkpoint: &std::path::Path, common: &Common) -> Result<(), HarnessError> {
    let checkpoint = if checkpoint.is_dir() {
        checkpoint.join(fumi::harness::CHECKPOINT_FILE)
    } else {
        checkpoint.to_owned()
    };
    let run_dir = checkpoint.parent().map(|p| p.to_owned()).unwrap_or_default();
    let saved = run_dir.join(CONFIG_FILE);
    let base = if common.config.is_none() && saved.is_file() {
        Some(read_config(&saved)?)
    } else {
        None
    };
    let config = common.resolve(base, true)?;
    let result = evaluate_checkpoint(&config, &checkpoint)?;
    let out = common.out.clone().unwrap_or(run_dir);
    std::fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
    let text = serde_json::to_string_pretty(&result).expect("result serializes");
    let path = out.join(EVAL_FILE);
    std::fs::write(&path, text + "\n").map_err(|e| HarnessError::io(&path, e))?;
    println!(
        "{}",
        serde_json::json!({
            "algorithm": result.algorithm,
            "shots": result.shots,
            "seed": result.seed,
            "n_tasks": result.n_tasks,
            "mean_accuracy": result.mean_accuracy,
            "eval": path,
        })
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train { common, eval: e } => train(&common, e),
        Command::Eval { checkpoint, common } => eval(&checkpoint, &common),
        Command::Report { runs, out } => {
            let table = report(&runs)?;
            if let Some(out) = out {
                write_report(&table, &out)?;
            }
            print!("{}", table.table());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = HarnessError::Config(e.to_string().trim().to_owned());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
