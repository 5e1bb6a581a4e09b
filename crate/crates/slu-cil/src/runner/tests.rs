use super::*;
use crate::data::{save_corpus_spec, CorpusSpec, EntityTypeSpec, ScenarioSpec, TemplateSpec};
use crate::distill::KdKind;
use std::path::{Path, PathBuf};

fn tiny_corpus_spec() -> CorpusSpec {
    let scenario = |name: &str, freq: f64, action: &str, etype: &str, vals: &[&str], tpl: &str| {
        ScenarioSpec {
            name: name.into(),
            frequency: freq,
            actions: vec![action.into()],
            entity_types: vec![EntityTypeSpec {
                name: etype.into(),
                values: vals.iter().map(|v| v.to_string()).collect(),
            }],
            templates: vec![TemplateSpec {
                action: action.into(),
                text: tpl.into(),
            }],
        }
    };
    CorpusSpec {
        seed: 5,
        samples_per_scenario: 30,
        noise_sigma: 0.05,
        feature_dim: 16,
        scenarios: vec![
            scenario("music", 1.0, "likeness", "music_genre", &["jazz", "rock"], "i like {music_genre}"),
            scenario("iot", 2.0 / 3.0, "on", "iot_device", &["lights", "fan"], "turn on the {iot_device}"),
            scenario("alarm", 7.0 / 15.0, "wake", "alarm_time", &["noon", "six"], "set an alarm for {alarm_time}"),
            scenario("news", 1.0 / 3.0, "headlines", "news_topic", &["sports", "finance"], "whats the latest on {news_topic}"),
        ],
    }
}

struct TestDir(PathBuf);

impl TestDir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!(
            "slu-cil-runner-{tag}-{}",
            std::process::id()
        ));
        std::fs::remove_dir_all(&dir).ok();
        std::fs::create_dir_all(&dir).unwrap();
        Self(dir)
    }

    fn path(&self) -> &Path {
        &self.0
    }
}

impl Drop for TestDir {
    fn drop(&mut self) {
        std::fs::remove_dir_all(&self.0).ok();
    }
}

fn tiny_config(dir: &Path, name: &str, method: MethodKind) -> ExperimentConfig {
    let spec_path = dir.join("corpus_spec.toml");
    if !spec_path.exists() {
        save_corpus_spec(&tiny_corpus_spec(), &spec_path).unwrap();
    }
    let epochs = if method == MethodKind::Offline {
        vec![2]
    } else {
        vec![2, 1]
    };
    ExperimentConfig {
        name: name.into(),
        seed: 1,
        seeds: None,
        tasks: 2,
        method,
        corpus: CorpusSection {
            spec_path: Some(spec_path),
            ..CorpusSection::default()
        },
        model: ModelSection {
            hidden_size: Some(16),
            encoder_layers: Some(1),
            decoder_layers: Some(1),
            heads: Some(2),
            ffn_size: Some(32),
            dropout: Some(0.0),
            ..ModelSection::default()
        },
        training: TrainingSection {
            epochs,
            batch_size: 8,
            learning_rate: 2e-3,
            ..TrainingSection::default()
        },
        rehearsal: RehearsalSection {
            budget: 0.1,
            ..RehearsalSection::default()
        },
        kd: if method == MethodKind::RehearsalKd {
            KdSection {
                kinds: vec![KdKind::Seq],
                soft_beam_width: Some(2),
                lambda: None,
            }
        } else {
            KdSection::default()
        },
        eval: EvalSection {
            beam_width: 2,
            ..EvalSection::default()
        },
        output_dir: None,
    }
}

#[test]
fn fine_tuning_run_completes_with_expected_step_counts() {
    let dir = TestDir::new("ft");
    let config = tiny_config(dir.path(), "ft", MethodKind::FineTuning);
    let run = run_experiment(&config, dir.path()).unwrap();

    assert!(run.matrices.acc.is_complete());
    assert_eq!(run.summary.per_task_acc.len(), 2);
    assert!(run.out_dir.join("summary.json").exists());
    assert!(run.out_dir.join("matrix_acc.csv").exists());
    assert!(run.out_dir.join("matrix_wer.csv").exists());
    assert!(run.out_dir.join("matrix_slu_f1.csv").exists());
    assert!(run.out_dir.join("state.json").exists());
    assert!(run.out_dir.join("model_task0.ckpt").exists());
    assert!(run.out_dir.join("model_task1.ckpt").exists());

    // epochs × ceil(pool / batch): task sizes are fixed by the tiny corpus
    let state = RunState::load(&run.out_dir.join("state.json")).unwrap();
    assert_eq!(state.completed_tasks, 2);
    let pool0 = 35usize; // train(music)=21 + train(iot)=14
    let pool1 = 17usize; // train(alarm)=10 + train(news)=7
    assert_eq!(run.counters.steps_per_task[0], 2 * pool0.div_ceil(8));
    assert_eq!(run.counters.steps_per_task[1], pool1.div_ceil(8));
}

#[test]
fn offline_run_yields_a_one_by_one_matrix() {
    let dir = TestDir::new("offline");
    let config = tiny_config(dir.path(), "offline", MethodKind::Offline);
    let run = run_experiment(&config, dir.path()).unwrap();
    assert_eq!(run.matrices.acc.task_count(), 1);
    assert_eq!(run.summary.per_task_acc.len(), 1);
    assert_eq!(run.summary.avg_acc, run.summary.last_acc);
}

#[test]
fn identical_config_and_seed_reproduce_byte_identical_artifacts() {
    let dir = TestDir::new("determinism");
    let mut config = tiny_config(dir.path(), "det", MethodKind::Rehearsal);
    config.output_dir = Some(PathBuf::from("run"));

    run_experiment(&config, dir.path()).unwrap();
    let files = ["summary.json", "matrix_acc.csv", "matrix_wer.csv", "matrix_slu_f1.csv"];
    let first: Vec<Vec<u8>> = files
        .iter()
        .map(|f| std::fs::read(dir.path().join("run").join(f)).unwrap())
        .collect();

    run_experiment(&config, dir.path()).unwrap();
    for (f, before) in files.iter().zip(&first) {
        let after = std::fs::read(dir.path().join("run").join(f)).unwrap();
        assert_eq!(&after, before, "{f} differs between identical runs");
    }
}

#[test]
fn rehearsal_kd_run_keeps_teacher_frozen_and_pure_batches_bit_exact() {
    let dir = TestDir::new("kd");
    let config = tiny_config(dir.path(), "kd", MethodKind::RehearsalKd);
    let run = run_experiment(&config, dir.path()).unwrap();

    assert!(run.counters.pure_ce_batches > 0, "expected pure-CE batches");
    assert_eq!(
        run.counters.pure_ce_bitexact, run.counters.pure_ce_batches,
        "pure-new batches must contribute exactly CE"
    );
    for delta in &run.counters.teacher_abs_delta_per_task {
        assert_eq!(*delta, 0.0, "teacher parameters moved during a task");
    }

    // teacher causality: the teacher of task t is the selected checkpoint
    // of task t−1
    let state = RunState::load(&run.out_dir.join("state.json")).unwrap();
    assert_eq!(state.teacher_hashes[0], "-");
    assert_eq!(state.teacher_hashes[1], state.model_hashes[0]);
    assert!(state.soft_store.is_some());
}

#[test]
fn buffer_only_holds_ids_from_completed_tasks() {
    let dir = TestDir::new("buffer");
    let config = tiny_config(dir.path(), "buf", MethodKind::Rehearsal);
    assert!(run_with_stop(&config, dir.path(), Some(1)).unwrap().is_none());

    let run_dir = dir.path().join("run-buf-s1");
    let state = RunState::load(&run_dir.join("state.json")).unwrap();
    assert_eq!(state.completed_tasks, 1);
    let buffer = state.buffer.unwrap();
    assert!(!buffer.is_empty());
    // scenarios of task 0 are music and iot (largest train cardinality)
    for scenario in buffer.per_scenario.keys() {
        assert!(
            scenario == "music" || scenario == "iot",
            "buffer leaked scenario {scenario} from an unfinished task"
        );
    }
}

#[test]
fn resumed_run_matches_the_uninterrupted_one_byte_for_byte() {
    let dir = TestDir::new("resume");
    let mut full = tiny_config(dir.path(), "res", MethodKind::RehearsalKd);
    full.output_dir = Some(PathBuf::from("full"));
    run_experiment(&full, dir.path()).unwrap();

    let mut halted = full.clone();
    halted.output_dir = Some(PathBuf::from("halted"));
    assert!(run_with_stop(&halted, dir.path(), Some(1)).unwrap().is_none());
    let outcome = resume(&dir.path().join("halted")).unwrap();
    let resumed = match outcome {
        ResumeOutcome::Resumed(a) => a,
        ResumeOutcome::AlreadyComplete(_) => panic!("run was not complete"),
    };
    assert_eq!(resumed.summary.per_task_acc.len(), 2);

    // the summary line must be identical except for the differing
    // config-dependent fields (name/output dir are part of the config, so
    // compare the numeric payload)
    let full_summary = load_summary(&dir.path().join("full")).unwrap();
    assert_eq!(resumed.summary.avg_acc, full_summary.avg_acc);
    assert_eq!(resumed.summary.last_acc, full_summary.last_acc);
    assert_eq!(resumed.summary.avg_wer, full_summary.avg_wer);
    assert_eq!(resumed.summary.avg_slu_f1, full_summary.avg_slu_f1);
    assert_eq!(resumed.summary.per_task_acc, full_summary.per_task_acc);

    let ma = std::fs::read(dir.path().join("full").join("matrix_acc.csv")).unwrap();
    let mb = std::fs::read(dir.path().join("halted").join("matrix_acc.csv")).unwrap();
    assert_eq!(ma, mb);
}

#[test]
fn resume_refuses_an_edited_config() {
    let dir = TestDir::new("edited");
    let config = tiny_config(dir.path(), "edit", MethodKind::Rehearsal);
    assert!(run_with_stop(&config, dir.path(), Some(1)).unwrap().is_none());
    let run_dir = dir.path().join("run-edit-s1");

    let mut edited = config.clone();
    edited.seed = 99;
    edited.save(&run_dir.join("config.toml")).unwrap();
    assert!(matches!(
        resume(&run_dir),
        Err(crate::Error::Integrity(_))
    ));
}

#[test]
fn resume_of_a_completed_run_is_a_noop() {
    let dir = TestDir::new("complete");
    let config = tiny_config(dir.path(), "done", MethodKind::FineTuning);
    let run = run_experiment(&config, dir.path()).unwrap();
    match resume(&run.out_dir).unwrap() {
        ResumeOutcome::AlreadyComplete(p) => assert_eq!(p, run.out_dir),
        ResumeOutcome::Resumed(_) => panic!("completed run must not re-run"),
    }
}

#[test]
fn sweep_runs_methods_and_emits_the_comparison_table() {
    let dir = TestDir::new("sweep");
    let mut ft = tiny_config(dir.path(), "ft", MethodKind::FineTuning);
    ft.seeds = Some(vec![1, 2]);
    let rehe = tiny_config(dir.path(), "rehe", MethodKind::Rehearsal);
    let kd = tiny_config(dir.path(), "rehe-seq", MethodKind::RehearsalKd);

    let outcome = sweep(&[ft, rehe, kd], dir.path()).unwrap();
    assert_eq!(outcome.rows.len(), 3);
    assert_eq!(outcome.rows[0].runs, 2);
    assert_eq!(outcome.rows[1].runs, 1);
    assert!(outcome.csv_path.exists());

    let csv = std::fs::read_to_string(&outcome.csv_path).unwrap();
    assert!(csv.starts_with("name,method,runs,"));
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.contains("fine-tuning"));
    assert!(csv.contains("rehearsal-random-10pct"));
    assert!(csv.contains("+seq-kd"));
}

#[test]
fn sweep_rejects_mismatched_corpora_and_schedules() {
    let dir = TestDir::new("sweep-bad");
    let a = tiny_config(dir.path(), "a", MethodKind::FineTuning);
    let mut b = tiny_config(dir.path(), "b", MethodKind::FineTuning);
    b.corpus.noise_sigma = Some(0.3);
    assert!(matches!(
        check_sweep_compatibility(&[a.clone(), b]),
        Err(crate::Error::Usage(_))
    ));

    let mut c = tiny_config(dir.path(), "c", MethodKind::FineTuning);
    c.tasks = 1;
    c.training.epochs = vec![2];
    assert!(matches!(
        check_sweep_compatibility(&[a, c]),
        Err(crate::Error::Usage(_))
    ));
}

#[test]
fn report_merges_existing_runs() {
    let dir = TestDir::new("report");
    let mut a = tiny_config(dir.path(), "ra", MethodKind::FineTuning);
    a.output_dir = Some(PathBuf::from("ra"));
    let mut b = tiny_config(dir.path(), "rb", MethodKind::Rehearsal);
    b.output_dir = Some(PathBuf::from("rb"));
    run_experiment(&a, dir.path()).unwrap();
    run_experiment(&b, dir.path()).unwrap();

    let csv = report(&[dir.path().join("ra"), dir.path().join("rb")]).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn kd_combination_configs_cover_the_studied_sets() {
    let combos: Vec<Vec<KdKind>> = vec![
        vec![KdKind::Audio, KdKind::Token],
        vec![KdKind::Audio, KdKind::Seq],
        vec![KdKind::Seq, KdKind::Token],
        vec![KdKind::Audio, KdKind::Seq, KdKind::Token],
    ];
    let dir = TestDir::new("combos");
    for kinds in &combos {
        let mut c = tiny_config(dir.path(), "combo", MethodKind::RehearsalKd);
        c.kd.kinds = kinds.clone();
        c.validate().unwrap();
        let parsed = c.kd_config();
        assert_eq!(parsed.kinds.len(), kinds.len());
    }
}
