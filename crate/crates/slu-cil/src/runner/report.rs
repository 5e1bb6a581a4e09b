//! Result emission: per-run summary JSON and metric-matrix CSVs, plus the
//! cross-run comparison table used by `sweep` and `report`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{MetricMatrices, TaskMatrix};

use super::config::{ExperimentConfig, MethodKind};
use super::train::{run_experiment, RunArtifacts, RunSummary};

/// Single-line JSON record, newline-terminated.
pub fn write_summary(out_dir: &Path, summary: &RunSummary) -> Result<()> {
    let line =
        serde_json::to_string(summary).map_err(|e| Error::Parse(format!("summary: {e}")))?;
    std::fs::write(out_dir.join("summary.json"), format!("{line}\n"))?;
    Ok(())
}

pub fn load_summary(run_dir: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(run_dir.join("summary.json"))?;
    serde_json::from_str(text.trim())
        .map_err(|e| Error::Parse(format!("summary in {}: {e}", run_dir.display())))
}

fn matrix_csv(matrix: &TaskMatrix) -> String {
    let t = matrix.task_count();
    let mut out = String::from("trained_task");
    for s in 0..t {
        out.push_str(&format!(",upto_{s}"));
    }
    out.push('\n');
    for (row_idx, row) in matrix.rows().iter().enumerate() {
        out.push_str(&row_idx.to_string());
        for s in 0..t {
            out.push(',');
            if let Some(v) = row.get(s) {
                out.push_str(&format!("{v:.6}"));
            }
        }
        out.push('\n');
    }
    out
}

/// `matrix_acc.csv`, `matrix_wer.csv`, `matrix_slu_f1.csv`: rows are the
/// trained-task index, columns the cumulative evaluation sets.
pub fn write_matrices(out_dir: &Path, matrices: &MetricMatrices) -> Result<()> {
    std::fs::write(out_dir.join("matrix_acc.csv"), matrix_csv(&matrices.acc))?;
    std::fs::write(out_dir.join("matrix_wer.csv"), matrix_csv(&matrices.wer))?;
    std::fs::write(
        out_dir.join("matrix_slu_f1.csv"),
        matrix_csv(&matrices.slu_f1),
    )?;
    Ok(())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregated metrics for one method across its seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub name: String,
    pub method: String,
    pub runs: usize,
    pub avg_acc: (f64, f64),
    pub last_acc: (f64, f64),
    pub avg_wer: (f64, f64),
    pub slu_f1: (f64, f64),
}

/// Group summaries by experiment name and fold seeds into mean ± stddev.
pub fn comparison_rows(summaries: &[RunSummary]) -> Vec<ComparisonRow> {
    let mut order: Vec<String> = Vec::new();
    for s in summaries {
        if !order.contains(&s.name) {
            order.push(s.name.clone());
        }
    }
    order
        .into_iter()
        .map(|name| {
            let group: Vec<&RunSummary> = summaries.iter().filter(|s| s.name == name).collect();
            let col = |f: fn(&RunSummary) -> f64| {
                let vals: Vec<f64> = group.iter().map(|s| f(s)).collect();
                mean_std(&vals)
            };
            ComparisonRow {
                name,
                method: group[0].method.clone(),
                runs: group.len(),
                avg_acc: col(|s| s.avg_acc),
                last_acc: col(|s| s.last_acc),
                avg_wer: col(|s| s.avg_wer),
                slu_f1: col(|s| s.avg_slu_f1),
            }
        })
        .collect()
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(
        "name,method,runs,avg_acc_mean,avg_acc_std,last_acc_mean,last_acc_std,\
         avg_wer_mean,avg_wer_std,slu_f1_mean,slu_f1_std\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.name,
            r.method,
            r.runs,
            r.avg_acc.0,
            r.avg_acc.1,
            r.last_acc.0,
            r.last_acc.1,
            r.avg_wer.0,
            r.avg_wer.1,
            r.slu_f1.0,
            r.slu_f1.1,
        ));
    }
    out
}

/// Load every `*.toml` config in a directory, sorted by file name.
pub fn load_sweep_configs(dir: &Path) -> Result<Vec<ExperimentConfig>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Usage(format!(
            "no .toml configs found in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| ExperimentConfig::load(p)).collect()
}

/// The sweep precondition: one corpus for all configs, and one schedule
/// shape for all incremental (non-offline) configs.
pub fn check_sweep_compatibility(configs: &[ExperimentConfig]) -> Result<()> {
    let mut corpus_hash: Option<u64> = None;
    let mut cl_tasks: Option<usize> = None;
    for c in configs {
        let hash = c.corpus_spec()?.hash();
        match corpus_hash {
            None => corpus_hash = Some(hash),
            Some(h) if h != hash => {
                return Err(Error::Usage(format!(
                    "config {} uses a different corpus than the rest of the sweep",
                    c.name
                )))
            }
            _ => {}
        }
        if c.method != MethodKind::Offline {
            match cl_tasks {
                None => cl_tasks = Some(c.tasks),
                Some(t) if t != c.tasks => {
                    return Err(Error::Usage(format!(
                        "config {} uses {} tasks, sweep schedule has {}",
                        c.name, c.tasks, t
                    )))
                }
                _ => {}
            }
        }
    }
    Ok(())
}

pub struct SweepOutcome {
    pub rows: Vec<ComparisonRow>,
    pub csv_path: PathBuf,
    pub artifacts: Vec<RunArtifacts>,
}

/// Run every config (times its seeds) and emit `comparison.csv` under the
/// output root.
pub fn sweep(configs: &[ExperimentConfig], out_root: &Path) -> Result<SweepOutcome> {
    if configs.is_empty() {
        return Err(Error::Usage("sweep needs at least one config".into()));
    }
    check_sweep_compatibility(configs)?;
    let mut summaries = Vec::new();
    let mut artifacts = Vec::new();
    for config in configs {
        for seed in config.seeds() {
            let mut per_seed = config.clone();
            per_seed.seed = seed;
            per_seed.seeds = None;
            per_seed.output_dir = Some(PathBuf::from(format!("{}-s{}", config.name, seed)));
            let run = run_experiment(&per_seed, out_root)?;
            summaries.push(run.summary.clone());
            artifacts.push(run);
        }
    }
    let rows = comparison_rows(&summaries);
    let csv_path = out_root.join("comparison.csv");
    std::fs::write(&csv_path, comparison_csv(&rows))?;
    Ok(SweepOutcome {
        rows,
        csv_path,
        artifacts,
    })
}

/// Merge existing run directories into a comparison CSV.
pub fn report(run_dirs: &[PathBuf]) -> Result<String> {
    if run_dirs.is_empty() {
        return Err(Error::Usage("report needs at least one run directory".into()));
    }
    let summaries: Vec<RunSummary> = run_dirs
        .iter()
        .map(|d| load_summary(d))
        .collect::<Result<_>>()?;
    Ok(comparison_csv(&comparison_rows(&summaries)))
}
