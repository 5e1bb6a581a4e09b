//! Experiment CLI: corpus generation, runs, sweeps, evaluation, reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use slu_cil::data::{
    build_vocabulary, default_catalog, generate_corpus, load_corpus_spec, save_corpus_dir,
    save_corpus_spec,
};
use slu_cil::error::Result;
use slu_cil::metrics::{evaluate_ids, intent_accuracy, set_wer, slu_f1, EvalOptions};
use slu_cil::model::load_checkpoint;
use slu_cil::runner::{
    load_sweep_configs, report, resolve_output_root, resume, run_experiment, sweep,
    ExperimentConfig, ResumeOutcome,
};

#[derive(Parser)]
#[command(
    name = "slu-cil",
    about = "Class-incremental continual learning for seq2seq spoken language understanding",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutRoot {
    /// Output root; falls back to $SLU_CIL_OUT_ROOT, then the current dir.
    #[arg(long)]
    out_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus into a directory (records + features).
    GenData {
        /// Corpus spec TOML, or the literal `default` for the built-in
        /// 18-scenario catalog.
        spec: String,
        /// Output directory.
        out: PathBuf,
        /// Samples per unit frequency (default catalog only).
        #[arg(long, default_value_t = 180)]
        samples: usize,
        /// Feature noise sigma (default catalog only).
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        /// Corpus seed (default catalog only).
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Run one experiment from a config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        out: OutRoot,
    },
    /// Run every config in a directory and emit a comparison table.
    Sweep {
        config_dir: PathBuf,
        #[command(flatten)]
        out: OutRoot,
    },
    /// Evaluate a checkpoint on a corpus split.
    Eval {
        checkpoint: PathBuf,
        /// One of train, valid, test.
        split: String,
        /// Corpus spec TOML, or `default` for the built-in catalog.
        #[arg(long, default_value = "default")]
        spec: String,
        #[arg(long, default_value_t = 4)]
        beam_width: usize,
        #[arg(long, default_value_t = 180)]
        samples: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Merge run directories into a comparison CSV on stdout.
    Report {
        run_dirs: Vec<PathBuf>,
    },
    /// Continue an interrupted run from its directory.
    Resume {
        run_dir: PathBuf,
    },
}

fn corpus_spec_from_arg(
    spec: &str,
    seed: u64,
    samples: usize,
    sigma: f64,
) -> Result<slu_cil::data::CorpusSpec> {
    if spec == "default" {
        Ok(default_catalog(seed, samples, sigma))
    } else {
        load_corpus_spec(&PathBuf::from(spec))
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            spec,
            out,
            samples,
            sigma,
            seed,
        } => {
            let spec = corpus_spec_from_arg(&spec, seed, samples, sigma)?;
            let corpus = generate_corpus(&spec)?;
            save_corpus_dir(&corpus, &out)?;
            save_corpus_spec(&spec, &out.join("corpus_spec.toml"))?;
            println!(
                "generated {} utterances across {} scenarios into {}",
                corpus.len(),
                corpus.scenarios().len(),
                out.display()
            );
            println!(
                "splits: {} train / {} valid / {} test",
                corpus.splits.train.len(),
                corpus.splits.valid.len(),
                corpus.splits.test.len()
            );
        }
        Command::Run { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            let root = resolve_output_root(out.out_root.as_deref());
            let run = run_experiment(&config, &root)?;
            println!(
                "run {} complete: avg_acc={:.4} last_acc={:.4} avg_wer={:.4} slu_f1={:.4}",
                run.summary.name,
                run.summary.avg_acc,
                run.summary.last_acc,
                run.summary.avg_wer,
                run.summary.avg_slu_f1
            );
            println!("artifacts in {}", run.out_dir.display());
        }
        Command::Sweep { config_dir, out } => {
            let configs = load_sweep_configs(&config_dir)?;
            let root = resolve_output_root(out.out_root.as_deref());
            let outcome = sweep(&configs, &root)?;
            print!("{}", slu_cil::runner::comparison_csv(&outcome.rows));
            println!("comparison table written to {}", outcome.csv_path.display());
        }
        Command::Eval {
            checkpoint,
            split,
            spec,
            beam_width,
            samples,
            sigma,
            seed,
        } => {
            let spec = corpus_spec_from_arg(&spec, seed, samples, sigma)?;
            let corpus = generate_corpus(&spec)?;
            let vocab = build_vocabulary(&corpus)?;
            let (model, _) = load_checkpoint(&checkpoint, Some(vocab.hash()))?;
            let ids = match split.as_str() {
                "train" => &corpus.splits.train,
                "valid" => &corpus.splits.valid,
                "test" => &corpus.splits.test,
                other => {
                    return Err(slu_cil::Error::Usage(format!(
                        "unknown split {other:?} (expected train, valid, or test)"
                    )))
                }
            };
            let records = evaluate_ids(
                &model,
                &vocab,
                &corpus,
                ids,
                EvalOptions {
                    beam_width,
                    ..EvalOptions::default()
                },
            )?;
            let line = serde_json::json!({
                "split": split,
                "utterances": records.len(),
                "intent_accuracy": intent_accuracy(&records)?,
                "wer": set_wer(&records)?,
                "slu_f1": slu_f1(&records)?,
            });
            println!("{line}");
        }
        Command::Report { run_dirs } => {
            print!("{}", report(&run_dirs)?);
        }
        Command::Resume { run_dir } => match resume(&run_dir)? {
            ResumeOutcome::AlreadyComplete(dir) => {
                println!("run in {} is already complete; nothing to do", dir.display());
            }
            ResumeOutcome::Resumed(run) => {
                println!(
                    "resumed run {} complete: avg_acc={:.4} last_acc={:.4}",
                    run.summary.name, run.summary.avg_acc, run.summary.last_acc
                );
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
