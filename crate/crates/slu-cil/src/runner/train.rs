//! The continual training loop: per-task training with rehearsal mixing,
//! validation-based checkpoint selection, teacher snapshots, buffer and
//! soft-transcript refresh, cumulative evaluation, and artifact emission.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{clip_global_norm, AdamW, Tape};
use crate::cil::{build_schedule, RehearsalBuffer, TaskSchedule};
use crate::data::{
    build_vocabulary, encode_augmented, generate_corpus, Corpus, UttId, Vocabulary, BOS_ID,
    EOS_ID, SEP_ID,
};
use crate::distill::{
    training_loss, KdConfig, TeacherContext, TeacherSnapshot, TrainSample,
};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate, evaluate_ids, intent_accuracy, set_wer, slu_f1, EvalOptions, EvalRecord,
    MetricMatrices,
};
use crate::model::{save_checkpoint, DropoutCtx, Mode, Seq2SeqModel};
use crate::rng::{derive_seed, derive_seed_n, rng_from};

use super::config::{ExperimentConfig, MethodKind, TeacherFrom};
use super::report::{write_matrices, write_summary};
use super::state::{Counters, RunState};

/// One line of `summary.json`; byte-identical across reruns of the same
/// (config, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub method: String,
    pub seed: u64,
    pub tasks: usize,
    pub config_hash: String,
    pub avg_acc: f64,
    pub last_acc: f64,
    pub avg_wer: f64,
    pub avg_slu_f1: f64,
    pub final_wer: f64,
    pub final_slu_f1: f64,
    pub per_task_acc: Vec<f64>,
    pub unk_tokens: usize,
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub matrices: MetricMatrices,
    pub counters: Counters,
    pub out_dir: PathBuf,
}

pub enum ResumeOutcome {
    AlreadyComplete(PathBuf),
    Resumed(Box<RunArtifacts>),
}

/// Everything derivable from the config before training starts.
struct RunEnv {
    corpus: Corpus,
    vocab: Vocabulary,
    schedule: TaskSchedule,
    /// BOS/EOS-framed target token ids per utterance.
    targets: Vec<Vec<usize>>,
    unk_tokens: usize,
}

fn prepare_env(config: &ExperimentConfig) -> Result<RunEnv> {
    let spec = config.corpus_spec()?;
    let corpus = generate_corpus(&spec)?;
    let vocab = build_vocabulary(&corpus)?;
    let schedule = build_schedule(&corpus, config.effective_tasks())?;
    let model_config = config.model_config(vocab.size())?;

    let mut targets = Vec::with_capacity(corpus.len());
    let mut unk_tokens = 0;
    for u in &corpus.utterances {
        let augmented = encode_augmented(u)?;
        let (ids, unks) = vocab.tokenize(&augmented.tokens);
        unk_tokens += unks;
        let framed = vocab.frame(&ids);
        if framed.len() > model_config.max_target_tokens {
            return Err(Error::Input(format!(
                "utterance {} needs {} target tokens, model allows {}",
                u.id,
                framed.len(),
                model_config.max_target_tokens
            )));
        }
        if u.features.shape()[0] > model_config.max_source_frames {
            return Err(Error::Input(format!(
                "utterance {} has {} frames, model allows {}",
                u.id,
                u.features.shape()[0],
                model_config.max_source_frames
            )));
        }
        targets.push(framed);
    }
    Ok(RunEnv {
        corpus,
        vocab,
        schedule,
        targets,
        unk_tokens,
    })
}

/// Greedy decode that stops as soon as the intent verdict is decided:
/// after the second separator, EOS, or the length budget. Equivalent to
/// judging the full greedy decode, since the intent and the
/// missing-separator flag depend only on that prefix.
fn greedy_intent_correct(
    model: &Seq2SeqModel,
    features: &crate::autodiff::Tensor,
    gold_intent_id: usize,
) -> Result<bool> {
    let tape = Tape::new();
    let bound = model.bind(&tape, false);
    let enc = bound.encode(features, Mode::Eval)?;
    let max_new = model.config.max_target_tokens - 1;
    let mut tokens = vec![BOS_ID];
    let mut seps = 0usize;
    loop {
        let logits = bound.next_token_logits(enc, &tokens, Mode::Eval)?;
        let row = tape.value(logits);
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row.data()[best] {
                best = i;
            }
        }
        tokens.push(best);
        if best == SEP_ID {
            seps += 1;
            if seps == 2 {
                break;
            }
        }
        if best == EOS_ID || tokens.len() > max_new {
            break;
        }
    }
    let generated = &tokens[1..];
    let first_sep = generated.iter().position(|&t| t == SEP_ID);
    Ok(seps >= 2 && first_sep == Some(1) && generated[0] == gold_intent_id)
}

struct Trainer<'a> {
    config: &'a ExperimentConfig,
    env: &'a RunEnv,
    out_dir: PathBuf,
    model: Seq2SeqModel,
    buffer: Option<RehearsalBuffer>,
    teacher_ctx: Option<TeacherContext>,
    matrices: MetricMatrices,
    counters: Counters,
    model_hashes: Vec<String>,
    teacher_hashes: Vec<String>,
}

impl<'a> Trainer<'a> {
    fn new(config: &'a ExperimentConfig, env: &'a RunEnv, out_dir: PathBuf) -> Result<Self> {
        let model_config = config.model_config(env.vocab.size())?;
        let model = Seq2SeqModel::init(&model_config, derive_seed(config.seed, "init"))?;
        let buffer = match config.method {
            MethodKind::Rehearsal | MethodKind::RehearsalKd => Some(RehearsalBuffer::new(
                config.rehearsal.budget,
                config.rehearsal.strategy,
            )?),
            _ => None,
        };
        Ok(Self {
            config,
            env,
            out_dir,
            model,
            buffer,
            teacher_ctx: None,
            matrices: MetricMatrices::new(config.effective_tasks()),
            counters: Counters::default(),
            model_hashes: Vec::new(),
            teacher_hashes: Vec::new(),
        })
    }

    fn kd_for_task(&self, task: usize) -> KdConfig {
        // no KD is defined at task 0: there is no teacher yet
        if task == 0 || self.config.method != MethodKind::RehearsalKd {
            KdConfig::default()
        } else {
            self.config.kd_config()
        }
    }

    fn sample_for(&self, id: UttId, rehearsal: bool) -> TrainSample<'_> {
        TrainSample {
            id,
            features: &self.env.corpus.utterance(id).features,
            target: self.env.targets[id.0 as usize].clone(),
            rehearsal,
        }
    }

    fn run_task(&mut self, task: usize) -> Result<()> {
        let seed = self.config.seed;
        let schedule = &self.env.schedule;
        let kd = self.kd_for_task(task);
        let teacher_before = self
            .teacher_ctx
            .as_ref()
            .map(|ctx| ctx.snapshot.model.params().to_vec());
        self.teacher_hashes.push(match &self.teacher_ctx {
            Some(ctx) if task > 0 => format!("{:016x}", ctx.snapshot.model.param_hash()),
            _ => "-".into(),
        });

        // training pool: current task data plus rehearsal exemplars
        let mut pool: Vec<(UttId, bool)> = schedule.tasks[task]
            .train
            .iter()
            .map(|&id| (id, false))
            .collect();
        if let Some(buffer) = &self.buffer {
            pool.extend(buffer.ids().into_iter().map(|id| (id, true)));
        }

        let valid_ids = schedule.cumulative_valid(task);
        let gold_intent_ids: Vec<usize> = valid_ids
            .iter()
            .map(|&id| {
                self.env
                    .vocab
                    .id(&self.env.corpus.utterance(id).intent())
                    .expect("intent token in vocabulary")
            })
            .collect();

        let mut optimizer = AdamW::new(
            self.config.optimizer_config(),
            &self.model.param_sizes(),
        );
        let mut best: Option<(f64, Vec<crate::autodiff::Tensor>)> = None;
        let mut task_steps = 0usize;
        let epochs = self.config.training.epochs[task];
        let batch_size = self.config.training.batch_size;

        for epoch in 0..epochs {
            let mut order = pool.clone();
            use rand::seq::SliceRandom;
            let mut rng = rng_from(derive_seed_n(seed, "shuffle", &[task as u64, epoch as u64]));
            order.shuffle(&mut rng);

            for (step, chunk) in order.chunks(batch_size).enumerate() {
                let batch: Vec<TrainSample> = chunk
                    .iter()
                    .map(|&(id, rehearsal)| self.sample_for(id, rehearsal))
                    .collect();
                let tape = Tape::new();
                let bound = self.model.bind(&tape, true);
                let dropout = DropoutCtx::new(derive_seed_n(
                    seed,
                    "dropout",
                    &[task as u64, epoch as u64, step as u64],
                ));
                let (total, breakdown) = training_loss(
                    &tape,
                    &bound,
                    &batch,
                    self.teacher_ctx.as_ref(),
                    &kd,
                    self.config.training.reduction,
                    Mode::Train(&dropout),
                )?;
                self.counters.total_batches += 1;
                if breakdown.comp.b_rehe == 0 {
                    self.counters.pure_ce_batches += 1;
                    if breakdown.total.to_bits() == breakdown.ce.to_bits() {
                        self.counters.pure_ce_bitexact += 1;
                    }
                }
                tape.backward(total)?;
                let mut grads = self.model.collect_grads(&tape, &bound);
                clip_global_norm(&mut grads, self.config.training.clip_norm);
                optimizer.step(self.model.params_mut(), &grads)?;
                self.counters.optimizer_steps += 1;
                task_steps += 1;
            }

            // validation selection: intent accuracy on cumulative scenarios
            let mut correct = 0usize;
            for (&id, &gold) in valid_ids.iter().zip(&gold_intent_ids) {
                if greedy_intent_correct(
                    &self.model,
                    &self.env.corpus.utterance(id).features,
                    gold,
                )? {
                    correct += 1;
                }
            }
            let acc = correct as f64 / valid_ids.len().max(1) as f64;
            if std::env::var_os("SLU_CIL_TRACE").is_some() {
                eprintln!("task {task} epoch {epoch}: cumulative valid intent acc {acc:.4}");
            }
            let improved = match &best {
                None => true,
                Some((best_acc, _)) => acc > *best_acc,
            };
            if improved {
                best = Some((acc, self.model.params().to_vec()));
            }
        }
        self.counters.steps_per_task.push(task_steps);

        // restore the validation-selected checkpoint; keep the last
        // epoch's parameters around as the alternative teacher source
        let last_params: Vec<crate::autodiff::Tensor> = self.model.params().to_vec();
        if let Some((_, params)) = best {
            for (dst, src) in self.model.params_mut().iter_mut().zip(params) {
                *dst = src;
            }
        }
        if let Some(before) = teacher_before {
            let ctx = self.teacher_ctx.as_ref().expect("teacher present");
            let delta: f64 = before
                .iter()
                .zip(ctx.snapshot.model.params())
                .map(|(a, b)| {
                    a.iter()
                        .zip(b.iter())
                        .map(|(x, y)| (x - y).abs())
                        .sum::<f64>()
                })
                .sum();
            self.counters.teacher_abs_delta_per_task.push(delta);
        }
        self.model_hashes
            .push(format!("{:016x}", self.model.param_hash()));
        save_checkpoint(
            &self.model,
            self.env.vocab.hash(),
            &self.out_dir.join(format!("model_task{task}.ckpt")),
        )?;

        // teacher snapshot, buffer re-balance, soft-transcript refresh
        let last_task = task + 1 == schedule.task_count();
        if let (Some(buffer), false) = (self.buffer.as_mut(), last_task) {
            let mut candidates: BTreeMap<String, Vec<UttId>> = BTreeMap::new();
            for done in &schedule.tasks[..=task] {
                for &id in &done.train {
                    candidates
                        .entry(self.env.corpus.utterance(id).scenario.clone())
                        .or_default()
                        .push(id);
                }
            }
            let full_train = self.env.corpus.splits.train.len();
            let update_seed = derive_seed_n(seed, "buffer", &[task as u64]);
            let model = &self.model;
            let corpus = &self.env.corpus;
            buffer.update(&candidates, full_train, update_seed, |id| {
                Ok(model
                    .pooled_embedding(&corpus.utterance(id).features)?
                    .data()
                    .to_vec())
            })?;

            if self.config.method == MethodKind::RehearsalKd {
                let exemplars: Vec<TrainSample> = buffer
                    .ids()
                    .into_iter()
                    .map(|id| TrainSample {
                        id,
                        features: &corpus.utterance(id).features,
                        target: self.env.targets[id.0 as usize].clone(),
                        rehearsal: true,
                    })
                    .collect();
                let teacher_model = match self.config.training.teacher_from {
                    TeacherFrom::Best => self.model.clone(),
                    TeacherFrom::Last => {
                        let mut m = self.model.clone();
                        for (dst, src) in m.params_mut().iter_mut().zip(&last_params) {
                            *dst = src.clone();
                        }
                        m
                    }
                };
                self.teacher_ctx = Some(TeacherContext::prepare(
                    TeacherSnapshot::new(&teacher_model, task),
                    &self.config.kd_config(),
                    &exemplars,
                    None,
                )?);
            }
        }

        // cumulative evaluation, one decode pass, rows filled by scenario
        let records = evaluate_ids(
            &self.model,
            &self.env.vocab,
            &self.env.corpus,
            &schedule.cumulative_test(task),
            EvalOptions {
                beam_width: self.config.eval.beam_width,
                full_sequence_wer: self.config.eval.full_sequence_wer,
                length_normalize: self.config.eval.length_normalize,
            },
        )?;
        let mut acc_row = Vec::with_capacity(task + 1);
        let mut wer_row = Vec::with_capacity(task + 1);
        let mut f1_row = Vec::with_capacity(task + 1);
        for s in 0..=task {
            let seen = schedule.seen_scenarios(s);
            let subset: Vec<EvalRecord> = records
                .iter()
                .filter(|r| seen.binary_search(&r.scenario).is_ok())
                .cloned()
                .collect();
            acc_row.push(intent_accuracy(&subset)?);
            wer_row.push(set_wer(&subset)?);
            f1_row.push(slu_f1(&subset)?);
        }
        self.matrices.acc.push_row(acc_row)?;
        self.matrices.wer.push_row(wer_row)?;
        self.matrices.slu_f1.push_row(f1_row)?;

        self.save_state(task + 1)?;
        Ok(())
    }

    fn state(&self, completed: usize) -> RunState {
        RunState {
            config: self.config.clone(),
            config_hash: self.config.hash_hex(),
            completed_tasks: completed,
            task_count: self.env.schedule.task_count(),
            matrices: self.matrices.clone(),
            buffer: self.buffer.clone(),
            soft_store: self
                .teacher_ctx
                .as_ref()
                .and_then(|ctx| ctx.soft.clone()),
            model_hashes: self.model_hashes.clone(),
            teacher_hashes: self.teacher_hashes.clone(),
            counters: self.counters.clone(),
            unk_tokens: self.env.unk_tokens,
        }
    }

    fn save_state(&self, completed: usize) -> Result<()> {
        self.state(completed).save(&self.out_dir.join("state.json"))
    }

    fn finish(self) -> Result<RunArtifacts> {
        let aggregates = aggregate(&self.matrices)?;
        let summary = RunSummary {
            name: self.config.name.clone(),
            method: self.config.method_label(),
            seed: self.config.seed,
            tasks: self.env.schedule.task_count(),
            config_hash: self.config.hash_hex(),
            avg_acc: aggregates.avg_acc,
            last_acc: aggregates.last_acc,
            avg_wer: aggregates.avg_wer,
            avg_slu_f1: aggregates.avg_slu_f1,
            final_wer: aggregates.final_wer,
            final_slu_f1: aggregates.final_slu_f1,
            per_task_acc: aggregates.per_task_acc,
            unk_tokens: self.env.unk_tokens,
        };
        write_summary(&self.out_dir, &summary)?;
        write_matrices(&self.out_dir, &self.matrices)?;
        Ok(RunArtifacts {
            summary,
            matrices: self.matrices,
            counters: self.counters,
            out_dir: self.out_dir,
        })
    }
}

fn run_dir_for(config: &ExperimentConfig, out_root: &Path) -> PathBuf {
    match &config.output_dir {
        Some(dir) => out_root.join(dir),
        None => out_root.join(format!("run-{}-s{}", config.name, config.seed)),
    }
}

/// Run a full experiment, or stop after `stop_after` completed tasks when
/// given (used to exercise resumption).
pub fn run_with_stop(
    config: &ExperimentConfig,
    out_root: &Path,
    stop_after: Option<usize>,
) -> Result<Option<RunArtifacts>> {
    config.validate()?;
    let env = prepare_env(config)?;
    let out_dir = run_dir_for(config, out_root);
    std::fs::create_dir_all(&out_dir)?;
    config.save(&out_dir.join("config.toml"))?;

    let mut trainer = Trainer::new(config, &env, out_dir)?;
    for task in 0..env.schedule.task_count() {
        trainer.run_task(task)?;
        if stop_after == Some(task + 1) && task + 1 < env.schedule.task_count() {
            return Ok(None);
        }
    }
    trainer.finish().map(Some)
}

pub fn run_experiment(config: &ExperimentConfig, out_root: &Path) -> Result<RunArtifacts> {
    Ok(run_with_stop(config, out_root, None)?.expect("no stop requested"))
}

/// Resume a run from its directory. The config stored at run start must
/// hash-match the state; otherwise the resume is refused.
pub fn resume(run_dir: &Path) -> Result<ResumeOutcome> {
    let state = RunState::load(&run_dir.join("state.json"))?;
    let config_on_disk = ExperimentConfig::load(&run_dir.join("config.toml"))?;
    if config_on_disk.hash_hex() != state.config_hash {
        return Err(Error::Integrity(
            "config.toml was edited since the run started; refusing to resume".into(),
        ));
    }
    if state.completed_tasks >= state.task_count {
        return Ok(ResumeOutcome::AlreadyComplete(run_dir.to_path_buf()));
    }
    if state.config.method == MethodKind::RehearsalKd
        && state.config.training.teacher_from == TeacherFrom::Last
    {
        return Err(Error::Usage(
            "cannot resume with teacher_from = \"last\": last-epoch parameters are not persisted"
                .into(),
        ));
    }
    let config = state.config.clone();
    let env = prepare_env(&config)?;

    let last_done = state.completed_tasks - 1;
    let (model, _) = crate::model::load_checkpoint(
        &run_dir.join(format!("model_task{last_done}.ckpt")),
        Some(env.vocab.hash()),
    )?;

    let mut trainer = Trainer::new(&config, &env, run_dir.to_path_buf())?;
    trainer.model = model;
    trainer.buffer = state.buffer.clone();
    trainer.matrices = state.matrices.clone();
    trainer.counters = state.counters.clone();
    trainer.model_hashes = state.model_hashes.clone();
    trainer.teacher_hashes = state.teacher_hashes.clone();
    if config.method == MethodKind::RehearsalKd {
        if let Some(buffer) = &trainer.buffer {
            let exemplars: Vec<TrainSample> = buffer
                .ids()
                .into_iter()
                .map(|id| TrainSample {
                    id,
                    features: &env.corpus.utterance(id).features,
                    target: env.targets[id.0 as usize].clone(),
                    rehearsal: true,
                })
                .collect();
            trainer.teacher_ctx = Some(TeacherContext::prepare(
                TeacherSnapshot::new(&trainer.model, last_done),
                &config.kd_config(),
                &exemplars,
                state.soft_store.clone(),
            )?);
        }
    }

    for task in state.completed_tasks..env.schedule.task_count() {
        trainer.run_task(task)?;
    }
    trainer.finish().map(|a| ResumeOutcome::Resumed(Box::new(a)))
}
