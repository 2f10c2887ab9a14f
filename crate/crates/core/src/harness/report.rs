use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::models::Algorithm;

use super::run::{load_seed_result, mean};
use super::{read_json, ExperimentConfig, HarnessError, CONFIG_FILE, EVAL_FILE};

/// Sample standard deviation; zero for fewer than two values.
fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Table cell for per-seed mean accuracies in `[0, 1]`.
///
/// The mean is shown in percent with the seed standard deviation in
/// parentheses, in units of the last displayed digit: one decimal place
/// when the deviation is under one point, whole points otherwise. A single
/// seed has no deviation and shows `(–)`.
pub fn format_cell(seed_means: &[f64]) -> String {
    let m = 100.0 * mean(seed_means);
    if seed_means.len() < 2 {
        return format!("{m:.1}(–)");
    }
    let s = 100.0 * sample_std(seed_means);
    if s < 1.0 {
        format!("{m:.1}({})", (s * 10.0).round() as u64)
    } else {
        format!("{m:.0}({})", s.round() as u64)
    }
}

/// One (algorithm, shots) entry of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub algorithm: Algorithm,
    pub shots: usize,
    /// Per-seed means recomputed from the stored per-task accuracies, in
    /// seed order.
    pub seed_means: Vec<(u64, f64)>,
    /// Percentage points.
    pub mean: f64,
    /// Percentage points; zero for a single seed.
    pub std: f64,
    pub text: String,
}

impl Cell {
    pub fn n_seeds(&self) -> usize {
        self.seed_means.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub cells: Vec<Cell>,
}

impl Report {
    pub fn cell(&self, algorithm: Algorithm, shots: usize) -> Option<&Cell> {
        self.cells.iter().find(|c| c.algorithm == algorithm && c.shots == shots)
    }

    pub fn csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(["algo", "shots", "mean", "std", "n_seeds"]).expect("in-memory write");
        for c in &self.cells {
            writer
                .write_record([
                    c.algorithm.to_string(),
                    c.shots.to_string(),
                    format!("{:.4}", c.mean),
                    format!("{:.4}", c.std),
                    c.n_seeds().to_string(),
                ])
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("ascii fields")
    }

    /// Algorithms down, shot counts across.
    pub fn table(&self) -> String {
        let mut shots: Vec<usize> = self.cells.iter().map(|c| c.shots).collect();
        shots.sort_unstable();
        shots.dedup();
        let mut algorithms: Vec<Algorithm> = self.cells.iter().map(|c| c.algorithm).collect();
        algorithms.sort_by_key(|a| a.tag());
        algorithms.dedup();

        let mut rows = vec![std::iter::once("algorithm".to_owned())
            .chain(shots.iter().map(|s| format!("{s}-shot")))
            .collect::<Vec<_>>()];
        for a in &algorithms {
            let mut row = vec![a.to_string()];
            for &s in &shots {
                row.push(self.cell(*a, s).map_or_else(|| "-".to_owned(), |c| c.text.clone()));
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in rows {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (text, &w))| {
                    let pad = " ".repeat(w - text.chars().count());
                    if i == 0 {
                        format!("{text}{pad}")
                    } else {
                        format!("{pad}{text}")
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

fn collect(dir: &Path, evals: &mut Vec<PathBuf>, pending: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    let walk = walkdir::WalkDir::new(dir).sort_by_file_name();
    for entry in walk {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_owned();
            HarnessError::io(&path, e.into())
        })?;
        if !entry.file_type().is_dir() {
            continue;
        }
        let eval = entry.path().join(EVAL_FILE);
        if eval.is_file() {
            evals.push(eval);
        } else if entry.path().join(CONFIG_FILE).is_file() {
            pending.push(entry.path().to_owned());
        }
    }
    Ok(())
}

/// Builds the results table from every `eval.json` under `dirs`.
///
/// Fails with [`HarnessError::MissingRuns`] when a run directory has a
/// config but no evaluation, or when nothing has been evaluated at all.
pub fn report(dirs: &[PathBuf]) -> Result<Report, HarnessError> {
    let mut evals = Vec::new();
    let mut pending = Vec::new();
    for dir in dirs {
        if !dir.is_dir() {
            return Err(HarnessError::MissingRuns(vec![dir.display().to_string()]));
        }
        collect(dir, &mut evals, &mut pending)?;
    }
    if !pending.is_empty() {
        let missing = pending
            .iter()
            .map(|dir| match read_json::<ExperimentConfig>(&dir.join(CONFIG_FILE)) {
                Ok(c) => format!(
                    "{} {}-shot seed {} ({})",
                    c.algorithm,
                    c.shots,
                    c.seeds.first().copied().unwrap_or(0),
                    dir.display()
                ),
                Err(_) => dir.display().to_string(),
            })
            .collect();
        return Err(HarnessError::MissingRuns(missing));
    }
    if evals.is_empty() {
        let names = dirs.iter().map(|d| format!("no evaluated runs under {}", d.display())).collect();
        return Err(HarnessError::MissingRuns(names));
    }
    let mut grouped: BTreeMap<(u8, usize), Vec<(u64, f64)>> = BTreeMap::new();
    for path in &evals {
        let r = load_seed_result(path)?;
        if r.per_task.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(crate::episodes::DataError::Format(format!(
                "{}: accuracies must lie in [0, 1]",
                path.display()
            ))
            .into());
        }
        grouped
            .entry((r.algorithm.tag(), r.shots))
            .or_default()
            .push((r.seed, mean(&r.per_task)));
    }
    let cells = grouped
        .into_iter()
        .map(|((tag, shots), mut seed_means)| {
            seed_means.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let values: Vec<f64> = seed_means.iter().map(|(_, m)| *m).collect();
            Cell {
                algorithm: Algorithm::from_tag(tag).expect("tag came from an algorithm"),
                shots,
                mean: 100.0 * mean(&values),
                std: 100.0 * sample_std(&values),
                text: format_cell(&values),
                seed_means,
            }
        })
        .collect();
    Ok(Report { cells })
}

/// Writes `report.csv` and `report.txt` into `out`.
pub fn write_report(report: &Report, out: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let csv = out.join("report.csv");
    fs::write(&csv, report.csv()).map_err(|e| HarnessError::io(&csv, e))?;
    let txt = out.join("report.txt");
    fs::write(&txt, report.table()).map_err(|e| HarnessError::io(&txt, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_formatting() {
        assert_eq!(format_cell(&[0.882, 0.884, 0.883, 0.881, 0.885]), "88.3(2)");
        assert_eq!(format_cell(&[0.71, 0.73, 0.72, 0.74, 0.70]), "72(2)");
        assert_eq!(format_cell(&[0.789, 0.789]), "78.9(0)");
        assert_eq!(format_cell(&[0.5]), "50.0(–)");
    }

    #[test]
    fn table_layout() {
        let cell = |algorithm, shots, text: &str| Cell {
            algorithm,
            shots,
            seed_means: vec![(0, 0.5)],
            mean: 50.0,
            std: 0.0,
            text: text.into(),
        };
        let report = Report {
            cells: vec![
                cell(Algorithm::Maml, 1, "72(1)"),
                cell(Algorithm::Fumi, 1, "88.3(2)"),
                cell(Algorithm::Fumi, 5, "90.0(1)"),
            ],
        };
        let table = report.table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "algorithm   1-shot   5-shot");
        assert_eq!(lines[1], "maml         72(1)        -");
        assert_eq!(lines[2], "fumi       88.3(2)  90.0(1)");
        assert!(report.csv().starts_with("algo,shots,mean,std,n_seeds\nmaml,1,50.0000,0.0000,1\n"));
    }
}
