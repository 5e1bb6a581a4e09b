//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Criteria 1–6 and 8–10 are oracle and invariant checks that finish in
//! seconds to a couple of minutes. Criterion 7 reproduces the comparative
//! methodology (offline / fine-tuning / rehearsal / rehearsal+seq-KD over
//! three seeds) and dominates the runtime; expect the full suite to take
//! on the order of an hour on one core. Run with `--nocapture` to see the
//! per-criterion lines.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;

use slu_cil::autodiff::{
    clip_global_norm, finite_difference, max_rel_error, AdamW, AdamWConfig, Tape, Tensor, Var,
};
use slu_cil::cil::herding_select;
use slu_cil::data::{
    decode_augmented, default_catalog, encode_augmented, generate_corpus, UttId, BOS_ID, EOS_ID,
};
use slu_cil::distill::{
    audio_kd_loss, generate_soft_transcripts, lambda_kd, token_kd_loss, total_loss,
    BatchComposition, KdConfig, KdKind, Reduction, TeacherContext, TeacherSnapshot, TrainSample,
    training_loss,
};
use slu_cil::metrics::edit_distance;
use slu_cil::model::{DecodeOptions, Mode, ModelConfig, Seq2SeqModel};
use slu_cil::rng::{derive_seed_n, rng_from};
use slu_cil::runner::{
    run_experiment, CorpusSection, EvalSection, ExperimentConfig, KdSection, MethodKind,
    ModelSection, RehearsalSection, RunSummary, TrainingSection,
};

fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

// ───────────────────────── criterion 1 ─────────────────────────

struct OpCheck {
    name: &'static str,
    len: usize,
    /// Builds the op under test from a flat input vector; returns the
    /// parameter handles (in input order) and the scalar probe loss.
    build: fn(&Tape, &[f64]) -> (Vec<Var>, Var),
}

fn probe_weights(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i as f64) * 0.731).sin() + 0.1).collect()
}

fn weighted_sum(tape: &Tape, v: Var) -> Var {
    let shape = tape.shape_of(v);
    let n: usize = shape.iter().product();
    let w = tape.leaf(Tensor::new(shape, probe_weights(n)).unwrap());
    let p = tape.mul(v, w).unwrap();
    tape.sum_all(p)
}

fn op_checks() -> Vec<OpCheck> {
    vec![
        OpCheck {
            name: "matmul",
            len: 4 * 3 + 3 * 5,
            build: |t, x| {
                let a = t.param(Tensor::matrix(4, 3, x[..12].to_vec()).unwrap());
                let b = t.param(Tensor::matrix(3, 5, x[12..].to_vec()).unwrap());
                (vec![a, b], weighted_sum(t, t.matmul(a, b).unwrap()))
            },
        },
        OpCheck {
            name: "matmul_nt",
            len: 4 * 3 + 5 * 3,
            build: |t, x| {
                let a = t.param(Tensor::matrix(4, 3, x[..12].to_vec()).unwrap());
                let b = t.param(Tensor::matrix(5, 3, x[12..].to_vec()).unwrap());
                (vec![a, b], weighted_sum(t, t.matmul_nt(a, b).unwrap()))
            },
        },
        OpCheck {
            name: "add",
            len: 12,
            build: |t, x| {
                let a = t.param(Tensor::vector(x[..6].to_vec()));
                let b = t.param(Tensor::vector(x[6..].to_vec()));
                (vec![a, b], weighted_sum(t, t.add(a, b).unwrap()))
            },
        },
        OpCheck {
            name: "sub",
            len: 12,
            build: |t, x| {
                let a = t.param(Tensor::vector(x[..6].to_vec()));
                let b = t.param(Tensor::vector(x[6..].to_vec()));
                (vec![a, b], weighted_sum(t, t.sub(a, b).unwrap()))
            },
        },
        OpCheck {
            name: "mul",
            len: 12,
            build: |t, x| {
                let a = t.param(Tensor::vector(x[..6].to_vec()));
                let b = t.param(Tensor::vector(x[6..].to_vec()));
                (vec![a, b], weighted_sum(t, t.mul(a, b).unwrap()))
            },
        },
        OpCheck {
            name: "scale",
            len: 8,
            build: |t, x| {
                let a = t.param(Tensor::vector(x.to_vec()));
                (vec![a], weighted_sum(t, t.scale(a, -1.37)))
            },
        },
        OpCheck {
            name: "add_row",
            len: 3 * 4 + 4,
            build: |t, x| {
                let a = t.param(Tensor::matrix(3, 4, x[..12].to_vec()).unwrap());
                let b = t.param(Tensor::vector(x[12..].to_vec()));
                (vec![a, b], weighted_sum(t, t.add_row(a, b).unwrap()))
            },
        },
        OpCheck {
            name: "gelu",
            len: 10,
            build: |t, x| {
                let a = t.param(Tensor::vector(x.to_vec()));
                (vec![a], weighted_sum(t, t.gelu(a)))
            },
        },
        OpCheck {
            name: "softmax",
            len: 12,
            build: |t, x| {
                let a = t.param(Tensor::matrix(3, 4, x.to_vec()).unwrap());
                (vec![a], weighted_sum(t, t.softmax(a, 1).unwrap()))
            },
        },
        OpCheck {
            name: "log_softmax",
            len: 12,
            build: |t, x| {
                let a = t.param(Tensor::matrix(3, 4, x.to_vec()).unwrap());
                (vec![a], weighted_sum(t, t.log_softmax(a, 1).unwrap()))
            },
        },
        OpCheck {
            name: "layer_norm",
            len: 2 * 6 + 6 + 6,
            build: |t, x| {
                let a = t.param(Tensor::matrix(2, 6, x[..12].to_vec()).unwrap());
                let g = t.param(Tensor::vector(x[12..18].to_vec()));
                let b = t.param(Tensor::vector(x[18..].to_vec()));
                (vec![a, g, b], weighted_sum(t, t.layer_norm(a, g, b, 1e-5).unwrap()))
            },
        },
        OpCheck {
            name: "embedding",
            len: 5 * 3,
            build: |t, x| {
                let table = t.param(Tensor::matrix(5, 3, x.to_vec()).unwrap());
                (vec![table], weighted_sum(t, t.embedding(table, &[4, 0, 2, 4]).unwrap()))
            },
        },
        OpCheck {
            name: "mean_axis",
            len: 12,
            build: |t, x| {
                let a = t.param(Tensor::matrix(3, 4, x.to_vec()).unwrap());
                let m0 = weighted_sum(t, t.mean_axis(a, 0).unwrap());
                let m1 = weighted_sum(t, t.mean_axis(a, 1).unwrap());
                (vec![a], t.add(m0, m1).unwrap())
            },
        },
        OpCheck {
            name: "concat_rows_cols",
            len: 12,
            build: |t, x| {
                let a = t.param(Tensor::matrix(2, 3, x[..6].to_vec()).unwrap());
                let b = t.param(Tensor::matrix(2, 3, x[6..].to_vec()).unwrap());
                let rows = t.concat_rows(&[a, b]).unwrap();
                let cols = t.concat_cols(&[a, b]).unwrap();
                let s1 = weighted_sum(t, rows);
                let s2 = weighted_sum(t, cols);
                (vec![a, b], t.add(s1, s2).unwrap())
            },
        },
        OpCheck {
            name: "slice_rows_cols",
            len: 12,
            build: |t, x| {
                let a = t.param(Tensor::matrix(3, 4, x.to_vec()).unwrap());
                let r = weighted_sum(t, t.slice_rows(a, 1, 2).unwrap());
                let c = weighted_sum(t, t.slice_cols(a, 1, 3).unwrap());
                (vec![a], t.add(r, c).unwrap())
            },
        },
        OpCheck {
            name: "pick_per_row",
            len: 12,
            build: |t, x| {
                let a = t.param(Tensor::matrix(3, 4, x.to_vec()).unwrap());
                (vec![a], weighted_sum(t, t.pick_per_row(a, &[2, 0, 3]).unwrap()))
            },
        },
        OpCheck {
            name: "dropout",
            len: 16,
            build: |t, x| {
                let a = t.param(Tensor::vector(x.to_vec()));
                (vec![a], weighted_sum(t, t.dropout(a, 0.35, 4242).unwrap()))
            },
        },
        OpCheck {
            name: "sum_mean_all",
            len: 9,
            build: |t, x| {
                let a = t.param(Tensor::matrix(3, 3, x.to_vec()).unwrap());
                let s = t.sum_all(a);
                let m = t.mean_all(a);
                let sm = t.mul(s, m).unwrap();
                (vec![a], t.add(sm, s).unwrap())
            },
        },
    ]
}

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        encoder_layers: 2,
        decoder_layers: 2,
        hidden_size: 8,
        heads: 2,
        ffn_size: 12,
        vocab_size: 12,
        max_source_frames: 6,
        max_target_tokens: 8,
        feature_dim: 4,
        dropout: 0.0,
        layer_norm_eps: 1e-5,
    }
}

#[test]
fn criterion_01_gradient_correctness() {
    let started = std::time::Instant::now();
    // every differentiable operation, 10 random instances each
    for check in op_checks() {
        for instance in 0..10u64 {
            let mut rng = rng_from(derive_seed_n(900, check.name, &[instance]));
            let x0 = rand_vec(&mut rng, check.len);

            let tape = Tape::new();
            let (params, loss) = (check.build)(&tape, &x0);
            tape.backward(loss).unwrap();
            let mut analytic = Vec::with_capacity(check.len);
            for p in params {
                let g = tape.grad(p).expect("param gradient");
                analytic.extend_from_slice(g.data());
            }
            assert_eq!(analytic.len(), check.len, "op {} param layout", check.name);
            let numeric = finite_difference(
                |xv| {
                    let tape = Tape::new();
                    let (_, loss) = (check.build)(&tape, xv);
                    tape.item(loss)
                },
                &x0,
                1e-5,
            );
            let err = max_rel_error(&analytic, &numeric, 1e-8);
            assert!(
                err < 1e-4,
                "op {} instance {}: max rel error {}",
                check.name,
                instance,
                err
            );
        }
    }

    // full model loss (CE + all three KDs on a rehearsal batch), every
    // parameter, 10 random instances
    let config = tiny_model_config();
    let kd = KdConfig {
        kinds: [KdKind::Audio, KdKind::Token, KdKind::Seq].into_iter().collect(),
        soft_beam_width: 2,
        ..KdConfig::default()
    };
    for instance in 0..10u64 {
        let mut rng = rng_from(derive_seed_n(901, "full", &[instance]));
        let student = Seq2SeqModel::init(&config, 1000 + instance).unwrap();
        let teacher_model = Seq2SeqModel::init(&config, 2000 + instance).unwrap();
        let f1 = Tensor::matrix(3, 4, rand_vec(&mut rng, 12)).unwrap();
        let f2 = Tensor::matrix(2, 4, rand_vec(&mut rng, 8)).unwrap();
        let samples = vec![
            TrainSample {
                id: UttId(0),
                features: &f1,
                target: vec![BOS_ID, 7, 9, EOS_ID],
                rehearsal: true,
            },
            TrainSample {
                id: UttId(1),
                features: &f2,
                target: vec![BOS_ID, 5, EOS_ID],
                rehearsal: false,
            },
        ];
        let ctx = TeacherContext::prepare(
            TeacherSnapshot::new(&teacher_model, 0),
            &kd,
            &samples[..1],
            None,
        )
        .unwrap();

        let loss_for = |m: &Seq2SeqModel| -> f64 {
            let tape = Tape::new();
            let bound = m.bind(&tape, false);
            let (total, _) = training_loss(
                &tape,
                &bound,
                &samples,
                Some(&ctx),
                &kd,
                Reduction::MeanPerToken,
                Mode::Eval,
            )
            .unwrap();
            tape.item(total)
        };

        let tape = Tape::new();
        let bound = student.bind(&tape, true);
        let (total, _) = training_loss(
            &tape,
            &bound,
            &samples,
            Some(&ctx),
            &kd,
            Reduction::MeanPerToken,
            Mode::Eval,
        )
        .unwrap();
        tape.backward(total).unwrap();
        let grads = student.collect_grads(&tape, &bound);

        for (i, grad) in grads.iter().enumerate() {
            let x0 = student.params()[i].data().to_vec();
            let numeric = finite_difference(
                |xv| {
                    let mut probe = student.clone();
                    probe.params_mut()[i].data_mut().copy_from_slice(xv);
                    loss_for(&probe)
                },
                &x0,
                1e-5,
            );
            let err = max_rel_error(grad.data(), &numeric, 1e-8);
            assert!(
                err < 1e-4,
                "full loss instance {instance}, parameter {} ({}): max rel error {err}",
                i,
                student.param_names()[i]
            );
        }
    }
    println!(
        "ACCEPTANCE 1 (gradient correctness): PASS ({:.1?})",
        started.elapsed()
    );
}


// ───────────────────────── criterion 2 ─────────────────────────

#[test]
fn criterion_02_closed_form_loss_oracles() {
    // λ(8 of 32) = 0.5 exactly
    assert_eq!(lambda_kd(BatchComposition::new(32, 8).unwrap()), 0.5);

    let config = tiny_model_config();
    let model = Seq2SeqModel::init(&config, 77).unwrap();
    let teacher = TeacherSnapshot::new(&model, 0);
    let mut rng = rng_from(902);
    let f = Tensor::matrix(3, 4, rand_vec(&mut rng, 12)).unwrap();
    let batch = [TrainSample {
        id: UttId(0),
        features: &f,
        target: vec![BOS_ID, 7, 9, 5, EOS_ID],
        rehearsal: true,
    }];

    // audio-KD of an identical student/teacher is zero
    let tape = Tape::new();
    let bound = model.bind(&tape, false);
    let audio = audio_kd_loss(&tape, &bound, &teacher, &batch, Reduction::Sum, Mode::Eval).unwrap();
    assert!(tape.item(audio).abs() < 1e-12, "audio self-distortion {}", tape.item(audio));

    // token-KD of an identical student/teacher equals the teacher entropy
    let token = token_kd_loss(&tape, &bound, &teacher, &batch, Reduction::Sum, Mode::Eval).unwrap();
    let logits = model.teacher_forced_logits(&f, &batch[0].target).unwrap();
    let v = config.vocab_size;
    let mut entropy = 0.0;
    for j in 0..batch[0].target.len() - 1 {
        let row = &logits.data()[j * v..(j + 1) * v];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
        for x in row {
            let p = (x - mx).exp() / z;
            if p > 0.0 {
                entropy -= p * p.ln();
            }
        }
    }
    assert!(
        (tape.item(token) - entropy).abs() < 1e-9,
        "token-KD {} vs direct-summation entropy {}",
        tape.item(token),
        entropy
    );

    // Σ-combination arithmetic on hand values
    let kd_cfg = KdConfig {
        kinds: [KdKind::Audio, KdKind::Seq].into_iter().collect(),
        ..KdConfig::default()
    };
    let mut kd_vals = BTreeMap::new();
    kd_vals.insert(KdKind::Audio, 1.0);
    kd_vals.insert(KdKind::Seq, 3.0);
    assert_eq!(total_loss(2.0, &kd_vals, 0.5, &kd_cfg), 3.0);
    assert_eq!(total_loss(2.0, &BTreeMap::new(), 0.0, &kd_cfg), 2.0);
    assert_eq!(total_loss(7.0, &kd_vals, 1.0, &kd_cfg), 4.0);

    println!("ACCEPTANCE 2 (closed-form loss oracles): PASS");
}

// ───────────────────────── criterion 3 ─────────────────────────

fn sequence_score(model: &Seq2SeqModel, feats: &Tensor, generated: &[usize]) -> f64 {
    let mut tokens = vec![BOS_ID];
    tokens.extend_from_slice(generated);
    let logits = model.teacher_forced_logits(feats, &tokens).unwrap();
    let v = model.config.vocab_size;
    let mut score = 0.0;
    for (j, &tok) in generated.iter().enumerate() {
        let row = &logits.data()[j * v..(j + 1) * v];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
        score += row[tok] - mx - z.ln();
    }
    score
}

fn enumerate_finished(vocab: usize, max_new: usize) -> Vec<Vec<usize>> {
    let letters: Vec<usize> = (0..vocab).filter(|&t| t != EOS_ID).collect();
    let mut out = Vec::new();
    let mut stack: Vec<Vec<usize>> = vec![vec![]];
    while let Some(prefix) = stack.pop() {
        if prefix.len() < max_new {
            let mut with_eos = prefix.clone();
            with_eos.push(EOS_ID);
            out.push(with_eos);
            for &l in &letters {
                let mut next = prefix.clone();
                next.push(l);
                stack.push(next);
            }
        } else {
            out.push(prefix);
        }
    }
    out
}

#[test]
fn criterion_03_beam_search_exactness() {
    let started = std::time::Instant::now();
    let config = ModelConfig {
        encoder_layers: 1,
        decoder_layers: 1,
        hidden_size: 8,
        heads: 2,
        ffn_size: 12,
        vocab_size: 4,
        max_source_frames: 4,
        max_target_tokens: 4,
        feature_dim: 4,
        dropout: 0.0,
        layer_norm_eps: 1e-5,
    };
    let candidates = enumerate_finished(4, 3);
    let mut agreements = 0;
    for seed in 0..50u64 {
        let model = Seq2SeqModel::init(&config, 3000 + seed).unwrap();
        let mut rng = rng_from(derive_seed_n(903, "beam", &[seed]));
        let feats = Tensor::matrix(2, 4, rand_vec(&mut rng, 8)).unwrap();
        let beam = model
            .beam_search(&feats, 64, DecodeOptions::new(BOS_ID, EOS_ID).with_max_new(3))
            .unwrap();

        let mut best: Option<(f64, Vec<usize>)> = None;
        for cand in &candidates {
            let s = sequence_score(&model, &feats, cand);
            let better = match &best {
                None => true,
                Some((bs, bt)) => s > *bs || (s == *bs && cand < bt),
            };
            if better {
                best = Some((s, cand.clone()));
            }
        }
        let (best_score, best_tokens) = best.unwrap();
        assert_eq!(beam.generated(), &best_tokens[..], "model seed {seed}");
        assert!(
            (beam.log_prob - best_score).abs() < 1e-9,
            "model seed {seed}: beam score {} vs exhaustive {}",
            beam.log_prob,
            best_score
        );
        agreements += 1;
    }
    assert_eq!(agreements, 50);
    println!(
        "ACCEPTANCE 3 (beam-search exactness, 50/50 models): PASS ({:.1?})",
        started.elapsed()
    );
}

// ───────────────────────── criterion 4 ─────────────────────────

#[allow(clippy::needless_range_loop)] // textbook form on purpose: independent oracle
fn edit_distance_oracle(a: &[String], b: &[String]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1)
                .min(d[i - 1][j - 1] + cost);
        }
    }
    d[n][m]
}

#[test]
fn criterion_04_wer_oracle() {
    let alphabet = ["go", "to", "the", "red", "door", "now"];
    let mut rng = rng_from(904);
    for trial in 0..1000 {
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<String> {
            let len = rng.random_range(0..=8);
            (0..len)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())].to_string())
                .collect()
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        assert_eq!(
            edit_distance(&a, &b),
            edit_distance_oracle(&a, &b),
            "trial {trial}: {:?} vs {:?}",
            a,
            b
        );
    }
    println!("ACCEPTANCE 4 (WER oracle, 1000 pairs): PASS");
}

// ───────────────────────── criterion 5 ─────────────────────────

#[allow(clippy::needless_range_loop)] // naive on purpose: independent oracle
fn herding_oracle(cands: &[(UttId, Vec<f64>)], m: usize) -> Vec<UttId> {
    let dim = cands[0].1.len();
    let mut class_mean = vec![0.0; dim];
    for (_, e) in cands {
        for j in 0..dim {
            class_mean[j] += e[j];
        }
    }
    for v in class_mean.iter_mut() {
        *v /= cands.len() as f64;
    }
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..m {
        let mut best: Option<(usize, f64)> = None;
        for (i, (_, e)) in cands.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let mut sum = vec![0.0; dim];
            for &c in &chosen {
                for j in 0..dim {
                    sum[j] += cands[c].1[j];
                }
            }
            for j in 0..dim {
                sum[j] += e[j];
            }
            let k = chosen.len() + 1;
            let mut dist = 0.0;
            for j in 0..dim {
                let d = class_mean[j] - sum[j] / k as f64;
                dist += d * d;
            }
            match best {
                Some((_, bd)) if dist >= bd => {}
                _ => best = Some((i, dist)),
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen.into_iter().map(|i| cands[i].0).collect()
}

#[test]
fn criterion_05_herding_oracle() {
    let mut rng = rng_from(905);
    for trial in 0..100 {
        let n = rng.random_range(2..=10usize);
        let dim = rng.random_range(2..=8usize);
        let mut cands: Vec<(UttId, Vec<f64>)> = (0..n)
            .map(|i| {
                (
                    UttId(i as u32),
                    (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
                )
            })
            .collect();
        // every third instance carries duplicate embeddings to force ties
        if trial % 3 == 0 && n >= 3 {
            let clone_of = cands[0].1.clone();
            cands[1].1 = clone_of.clone();
            cands[2].1 = clone_of;
        }
        let m = rng.random_range(1..=n);
        assert_eq!(
            herding_select(&cands, m).unwrap(),
            herding_oracle(&cands, m),
            "trial {trial} (n={n}, dim={dim}, m={m})"
        );
    }
    println!("ACCEPTANCE 5 (herding oracle, 100 instances): PASS");
}

// ───────────────────────── criterion 6 ─────────────────────────

#[test]
fn criterion_06_codec_roundtrip() {
    let started = std::time::Instant::now();
    let spec = default_catalog(31, 720, 0.1);
    let corpus = generate_corpus(&spec).unwrap();
    assert!(
        corpus.len() >= 5000,
        "corpus holds {} utterances, need at least 5000",
        corpus.len()
    );
    for u in &corpus.utterances {
        let enc = encode_augmented(u).unwrap();
        let parsed = decode_augmented(&enc.tokens);
        assert_eq!(parsed.intent, u.intent(), "utterance {}", u.id);
        assert_eq!(parsed.entities, u.entities, "utterance {}", u.id);
        assert_eq!(parsed.transcript, u.transcript, "utterance {}", u.id);
        assert!(parsed.flags.clean(), "utterance {}", u.id);
    }
    println!(
        "ACCEPTANCE 6 (codec roundtrip over {} utterances): PASS ({:.1?})",
        corpus.len(),
        started.elapsed()
    );
}

// ───────────────────────── criterion 7 ─────────────────────────

fn desk_config(name: &str, method: MethodKind, seed: u64, out: &str) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        seed,
        seeds: None,
        tasks: 3,
        method,
        corpus: CorpusSection {
            spec_path: None,
            samples_per_scenario: Some(360),
            noise_sigma: Some(0.1),
            seed: Some(7),
        },
        model: ModelSection::default(),
        training: TrainingSection {
            epochs: if method == MethodKind::Offline {
                vec![24]
            } else {
                vec![24, 14, 10]
            },
            ..TrainingSection::default()
        },
        rehearsal: RehearsalSection {
            strategy: slu_cil::cil::SelectionStrategy::Random,
            budget: 0.01,
        },
        kd: KdSection::default(),
        eval: EvalSection::default(),
        output_dir: Some(PathBuf::from(out)),
    }
}

fn acceptance_root(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("slu-cil-acceptance-{tag}-{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_seeds(base: &ExperimentConfig, root: &Path) -> Vec<RunSummary> {
    [1u64, 2, 3]
        .iter()
        .map(|&seed| {
            let mut config = base.clone();
            config.seed = seed;
            config.output_dir = Some(PathBuf::from(format!("{}-s{}", config.name, seed)));
            let run = run_experiment(&config, root).unwrap();
            println!(
                "  {} seed {}: avg_acc={:.4} last_acc={:.4}",
                config.name, seed, run.summary.avg_acc, run.summary.last_acc
            );
            run.summary
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criterion_07_forgetting_reproduction() {
    let started = std::time::Instant::now();
    let root = acceptance_root("forgetting");

    let offline = desk_config("offline", MethodKind::Offline, 1, "offline");
    let fine_tuning = desk_config("fine-tuning", MethodKind::FineTuning, 1, "ft");
    let rehearsal_random = desk_config("rehearsal-random", MethodKind::Rehearsal, 1, "rr");
    let mut rehearsal_herding = desk_config("rehearsal-herding", MethodKind::Rehearsal, 1, "rh");
    rehearsal_herding.rehearsal.strategy = slu_cil::cil::SelectionStrategy::Herding;
    let mut seq_kd = desk_config("rehearsal-herding-seq-kd", MethodKind::RehearsalKd, 1, "kd");
    seq_kd.rehearsal.strategy = slu_cil::cil::SelectionStrategy::Herding;
    seq_kd.kd = KdSection {
        kinds: vec![KdKind::Seq],
        soft_beam_width: Some(4),
        lambda: None,
    };

    println!("criterion 7: offline runs");
    let offline_runs = run_seeds(&offline, &root);
    println!("criterion 7: fine-tuning runs");
    let ft_runs = run_seeds(&fine_tuning, &root);
    println!("criterion 7: rehearsal-random-1% runs");
    let rr_runs = run_seeds(&rehearsal_random, &root);
    println!("criterion 7: rehearsal-herding-1% runs");
    let rh_runs = run_seeds(&rehearsal_herding, &root);
    println!("criterion 7: rehearsal-herding-1% + seq-KD runs");
    let kd_runs = run_seeds(&seq_kd, &root);

    let ft_last = mean(ft_runs.iter().map(|s| s.last_acc));
    let rr_last = mean(rr_runs.iter().map(|s| s.last_acc));
    let rh_avg = mean(rh_runs.iter().map(|s| s.avg_acc));
    let kd_avg = mean(kd_runs.iter().map(|s| s.avg_acc));
    let offline_avg = mean(offline_runs.iter().map(|s| s.avg_acc));

    println!(
        "criterion 7 seed means: offline avg {:.4} | ft last {:.4} | rehearsal-1% last {:.4} | \
         herding avg {:.4} | +seq-KD avg {:.4}",
        offline_avg, ft_last, rr_last, rh_avg, kd_avg
    );

    // (a) rehearsal-1% beats fine-tuning by ≥ 10 points of Last Acc
    assert!(
        rr_last >= ft_last + 0.10,
        "(a) rehearsal-1% last acc {rr_last:.4} does not exceed fine-tuning {ft_last:.4} by 10 points"
    );
    // (b) adding seq-KD gains ≥ 2 points of Avg Acc over rehearsal alone
    assert!(
        kd_avg >= rh_avg + 0.02,
        "(b) seq-KD avg acc {kd_avg:.4} does not exceed rehearsal-only {rh_avg:.4} by 2 points"
    );
    // (c) offline is the upper bound
    for (label, avg) in [
        ("fine-tuning", mean(ft_runs.iter().map(|s| s.avg_acc))),
        ("rehearsal-random", mean(rr_runs.iter().map(|s| s.avg_acc))),
        ("rehearsal-herding", rh_avg),
        ("seq-kd", kd_avg),
    ] {
        assert!(
            offline_avg >= avg,
            "(c) offline avg {offline_avg:.4} below {label} avg {avg:.4}"
        );
    }

    std::fs::remove_dir_all(&root).ok();
    println!(
        "ACCEPTANCE 7 (forgetting reproduction, 15 runs x 3 tasks): PASS ({:.1?})",
        started.elapsed()
    );
}

// ───────────────────────── criterion 8 ─────────────────────────

#[test]
fn criterion_08_kd_on_rehearsal_only() {
    let root = acceptance_root("kd-rehearsal-only");
    // smaller corpus: the point is batch-level instrumentation, not scale
    let mut config = desk_config("kd-bitexact", MethodKind::RehearsalKd, 1, "run");
    config.corpus.samples_per_scenario = Some(180);
    config.training.epochs = vec![4, 3, 2];
    config.kd = KdSection {
        kinds: vec![KdKind::Audio, KdKind::Token, KdKind::Seq],
        soft_beam_width: Some(2),
        lambda: None,
    };
    let run = run_experiment(&config, &root).unwrap();
    assert!(
        run.counters.pure_ce_batches > 0,
        "training never produced a batch without rehearsal data"
    );
    assert_eq!(
        run.counters.pure_ce_bitexact, run.counters.pure_ce_batches,
        "{} of {} pure-new batches deviated from plain CE",
        run.counters.pure_ce_batches - run.counters.pure_ce_bitexact,
        run.counters.pure_ce_batches
    );
    std::fs::remove_dir_all(&root).ok();
    println!(
        "ACCEPTANCE 8 (KD on rehearsal only, {} pure batches bit-exact): PASS",
        run.counters.pure_ce_batches
    );
}

// ───────────────────────── criterion 9 ─────────────────────────

#[test]
fn criterion_09_determinism() {
    let root = acceptance_root("determinism");
    let mut config = desk_config("determinism", MethodKind::Rehearsal, 1, "run");
    config.corpus.samples_per_scenario = Some(180);
    config.training.epochs = vec![4, 3, 2];

    run_experiment(&config, &root).unwrap();
    let first = std::fs::read(root.join("run").join("summary.json")).unwrap();
    run_experiment(&config, &root).unwrap();
    let second = std::fs::read(root.join("run").join("summary.json")).unwrap();
    assert_eq!(first, second, "summary JSON differs between identical runs");
    std::fs::remove_dir_all(&root).ok();
    println!("ACCEPTANCE 9 (byte-identical reruns): PASS");
}

// ───────────────────────── criterion 10 ─────────────────────────

#[test]
fn criterion_10_teacher_frozenness() {
    // direct check over a simulated task: many optimizer steps with all
    // three KDs active, then an exact zero-delta comparison
    let config = tiny_model_config();
    let mut student = Seq2SeqModel::init(&config, 41).unwrap();
    let teacher_model = Seq2SeqModel::init(&config, 42).unwrap();
    let before: Vec<Tensor> = teacher_model.params().to_vec();

    let mut rng = rng_from(910);
    let f1 = Tensor::matrix(3, 4, rand_vec(&mut rng, 12)).unwrap();
    let f2 = Tensor::matrix(2, 4, rand_vec(&mut rng, 8)).unwrap();
    let samples = vec![
        TrainSample {
            id: UttId(0),
            features: &f1,
            target: vec![BOS_ID, 7, 9, EOS_ID],
            rehearsal: true,
        },
        TrainSample {
            id: UttId(1),
            features: &f2,
            target: vec![BOS_ID, 5, 6, EOS_ID],
            rehearsal: false,
        },
    ];
    let kd = KdConfig {
        kinds: [KdKind::Audio, KdKind::Token, KdKind::Seq].into_iter().collect(),
        soft_beam_width: 2,
        ..KdConfig::default()
    };
    let ctx = TeacherContext::prepare(
        TeacherSnapshot::new(&teacher_model, 0),
        &kd,
        &samples[..1],
        None,
    )
    .unwrap();

    let mut opt = AdamW::new(AdamWConfig::default(), &student.param_sizes());
    for _ in 0..25 {
        let tape = Tape::new();
        let bound = student.bind(&tape, true);
        let (total, _) = training_loss(
            &tape,
            &bound,
            &samples,
            Some(&ctx),
            &kd,
            Reduction::MeanPerToken,
            Mode::Eval,
        )
        .unwrap();
        tape.backward(total).unwrap();
        let mut grads = student.collect_grads(&tape, &bound);
        clip_global_norm(&mut grads, 1.0);
        opt.step(student.params_mut(), &grads).unwrap();
    }

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
    assert_eq!(delta, 0.0, "teacher parameters drifted by {delta}");

    // the soft store still covers its exemplars and was produced by the
    // frozen teacher
    let store = generate_soft_transcripts(&ctx.snapshot, [(UttId(0), &f1)], 2).unwrap();
    assert_eq!(store.entries.len(), 1);

    println!("ACCEPTANCE 10 (teacher frozenness, Σ|Δ| = 0): PASS");
}
