//! Small encoder-decoder transformer standing in for a pretrained speech
//! encoder plus autoregressive decoder.
//!
//! The encoder consumes feature frames [I×d_feat]; the decoder is causal
//! over target tokens and cross-attends to the encoder output. Forward
//! passes run on a [`Tape`], so the same code path serves training
//! (gradients) and inference (nothing recorded).

mod beam;
mod checkpoint;

pub use beam::{DecodeOptions, Hypothesis};
pub use checkpoint::{load_checkpoint, save_checkpoint};

use std::cell::Cell;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{derive_seed_n, rng_from};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub hidden_size: usize,
    pub heads: usize,
    pub ffn_size: usize,
    pub vocab_size: usize,
    pub max_source_frames: usize,
    pub max_target_tokens: usize,
    pub feature_dim: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// Default configuration used throughout the test suite and the
    /// shipped experiment configs.
    pub fn desk_scale(vocab_size: usize) -> Self {
        Self {
            encoder_layers: 2,
            decoder_layers: 2,
            hidden_size: 64,
            heads: 4,
            ffn_size: 128,
            vocab_size,
            max_source_frames: 48,
            max_target_tokens: 32,
            feature_dim: 16,
            dropout: 0.1,
            layer_norm_eps: 1e-5,
        }
    }

    /// Full-size configuration (12+6 layers, hidden 768, FFN 2048, 8 heads).
    /// Kept as a named preset; not a test target.
    pub fn paper_scale(vocab_size: usize) -> Self {
        Self {
            encoder_layers: 12,
            decoder_layers: 6,
            hidden_size: 768,
            heads: 8,
            ffn_size: 2048,
            vocab_size,
            max_source_frames: 1024,
            max_target_tokens: 128,
            feature_dim: 512,
            dropout: 0.1,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.hidden_size.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden_size, self.heads
            )));
        }
        // real vocabularies carry six specials; tiny synthetic ones at
        // least need PAD/BOS/EOS to decode
        if self.vocab_size < 3 {
            return Err(Error::Config(format!(
                "vocabulary size {} cannot hold the decode specials",
                self.vocab_size
            )));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(Error::Config("layer counts must be positive".into()));
        }
        if self.max_target_tokens < 2 || self.max_source_frames == 0 {
            return Err(Error::Config("sequence limits too small".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct AttnIdx {
    norm_g: usize,
    norm_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone)]
struct FfnIdx {
    norm_g: usize,
    norm_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct EncLayerIdx {
    attn: AttnIdx,
    ffn: FfnIdx,
}

#[derive(Debug, Clone)]
struct DecLayerIdx {
    self_attn: AttnIdx,
    cross_attn: AttnIdx,
    ffn: FfnIdx,
}

#[derive(Debug, Clone)]
struct ParamIndex {
    input_norm_g: usize,
    input_norm_b: usize,
    input_proj_w: usize,
    input_proj_b: usize,
    enc_layers: Vec<EncLayerIdx>,
    enc_final_g: usize,
    enc_final_b: usize,
    embed: usize,
    dec_layers: Vec<DecLayerIdx>,
    dec_final_g: usize,
    dec_final_b: usize,
    out_w: usize,
    out_b: usize,
}

struct LayoutBuilder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
}

impl LayoutBuilder {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            shapes: Vec::new(),
        }
    }

    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.names.len() - 1
    }

    fn attn(&mut self, prefix: &str, h: usize) -> AttnIdx {
        AttnIdx {
            norm_g: self.push(format!("{prefix}.norm.gain"), vec![h]),
            norm_b: self.push(format!("{prefix}.norm.bias"), vec![h]),
            wq: self.push(format!("{prefix}.wq"), vec![h, h]),
            bq: self.push(format!("{prefix}.bq"), vec![h]),
            wk: self.push(format!("{prefix}.wk"), vec![h, h]),
            bk: self.push(format!("{prefix}.bk"), vec![h]),
            wv: self.push(format!("{prefix}.wv"), vec![h, h]),
            bv: self.push(format!("{prefix}.bv"), vec![h]),
            wo: self.push(format!("{prefix}.wo"), vec![h, h]),
            bo: self.push(format!("{prefix}.bo"), vec![h]),
        }
    }

    fn ffn(&mut self, prefix: &str, h: usize, f: usize) -> FfnIdx {
        FfnIdx {
            norm_g: self.push(format!("{prefix}.norm.gain"), vec![h]),
            norm_b: self.push(format!("{prefix}.norm.bias"), vec![h]),
            w1: self.push(format!("{prefix}.w1"), vec![h, f]),
            b1: self.push(format!("{prefix}.b1"), vec![f]),
            w2: self.push(format!("{prefix}.w2"), vec![f, h]),
            b2: self.push(format!("{prefix}.b2"), vec![h]),
        }
    }
}

fn build_layout(config: &ModelConfig) -> (ParamIndex, Vec<String>, Vec<Vec<usize>>) {
    let (h, f, v, d) = (
        config.hidden_size,
        config.ffn_size,
        config.vocab_size,
        config.feature_dim,
    );
    let mut b = LayoutBuilder::new();
    let input_norm_g = b.push("enc.input_norm.gain".into(), vec![d]);
    let input_norm_b = b.push("enc.input_norm.bias".into(), vec![d]);
    let input_proj_w = b.push("enc.input_proj.w".into(), vec![d, h]);
    let input_proj_b = b.push("enc.input_proj.b".into(), vec![h]);
    let enc_layers = (0..config.encoder_layers)
        .map(|l| EncLayerIdx {
            attn: b.attn(&format!("enc.{l}.attn"), h),
            ffn: b.ffn(&format!("enc.{l}.ffn"), h, f),
        })
        .collect();
    let enc_final_g = b.push("enc.final_norm.gain".into(), vec![h]);
    let enc_final_b = b.push("enc.final_norm.bias".into(), vec![h]);
    let embed = b.push("dec.embed".into(), vec![v, h]);
    let dec_layers = (0..config.decoder_layers)
        .map(|l| DecLayerIdx {
            self_attn: b.attn(&format!("dec.{l}.self"), h),
            cross_attn: b.attn(&format!("dec.{l}.cross"), h),
            ffn: b.ffn(&format!("dec.{l}.ffn"), h, f),
        })
        .collect();
    let dec_final_g = b.push("dec.final_norm.gain".into(), vec![h]);
    let dec_final_b = b.push("dec.final_norm.bias".into(), vec![h]);
    let out_w = b.push("out.w".into(), vec![h, v]);
    let out_b = b.push("out.b".into(), vec![v]);
    (
        ParamIndex {
            input_norm_g,
            input_norm_b,
            input_proj_w,
            input_proj_b,
            enc_layers,
            enc_final_g,
            enc_final_b,
            embed,
            dec_layers,
            dec_final_g,
            dec_final_b,
            out_w,
            out_b,
        },
        b.names,
        b.shapes,
    )
}

/// The full parameter set plus its configuration. `Clone` yields a deep,
/// independent copy, which is what teacher snapshots rely on.
#[derive(Clone)]
pub struct Seq2SeqModel {
    pub config: ModelConfig,
    params: Vec<Tensor>,
    names: Vec<String>,
    index: ParamIndex,
}

impl Seq2SeqModel {
    /// Parameter count implied by a config, without building the model.
    pub fn param_count(config: &ModelConfig) -> usize {
        let (_, _, shapes) = build_layout(config);
        shapes.iter().map(|s| s.iter().product::<usize>()).sum()
    }

    /// Seeded initialization: Xavier-uniform linear maps, small-scale
    /// embeddings and output projection, identity layer norms.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (index, names, shapes) = build_layout(config);
        let mut rng = rng_from(seed);
        let emb_dist = Normal::new(0.0, 0.1).unwrap();
        let out_dist = Normal::new(0.0, 0.02).unwrap();
        let params: Vec<Tensor> = names
            .iter()
            .zip(&shapes)
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data: Vec<f64> = if name.ends_with(".gain") {
                    vec![1.0; n]
                } else if name.ends_with(".bias") || name.starts_with("out.b") || name.ends_with(".b1")
                    || name.ends_with(".b2") || name.ends_with(".bq") || name.ends_with(".bk")
                    || name.ends_with(".bv") || name.ends_with(".bo") || name.ends_with("proj.b")
                {
                    vec![0.0; n]
                } else if name == "dec.embed" {
                    (0..n).map(|_| emb_dist.sample(&mut rng)).collect()
                } else if name == "out.w" {
                    (0..n).map(|_| out_dist.sample(&mut rng)).collect()
                } else {
                    let (fan_in, fan_out) = (shape[0], shape[shape.len() - 1]);
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-a..a)).collect()
                };
                Tensor::new(shape.clone(), data).unwrap()
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            params,
            names,
            index,
        })
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params.iter().map(|t| t.numel()).collect()
    }

    /// FNV hash over all parameter bytes; used for teacher-causality and
    /// resume integrity checks.
    pub fn param_hash(&self) -> u64 {
        let mut bytes = Vec::new();
        for p in &self.params {
            for v in p.iter() {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        crate::rng::fnv1a64(&bytes)
    }

    /// Lease all parameters onto a tape. `trainable` controls whether
    /// gradients flow into them.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundModel<'t> {
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.leaf(p.clone())
                }
            })
            .collect();
        BoundModel {
            tape,
            config: self.config.clone(),
            vars,
            index: self.index.clone(),
        }
    }

    /// Gather gradients for every parameter from a tape the model was
    /// bound to, in parameter order. Missing gradients come back as zeros.
    pub fn collect_grads(&self, tape: &Tape, bound: &BoundModel) -> Vec<Tensor> {
        bound
            .vars
            .iter()
            .zip(&self.params)
            .map(|(v, p)| {
                tape.grad(*v)
                    .unwrap_or_else(|| Tensor::zeros(p.shape()))
            })
            .collect()
    }

    /// Eval-mode teacher-forced logits as a plain tensor.
    pub fn teacher_forced_logits(&self, features: &Tensor, targets: &[usize]) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let logits = bound.forward_teacher_forced(features, targets, Mode::Eval)?;
        Ok(tape.value(logits))
    }

    /// Eval-mode pooled encoder embedding as a plain tensor.
    pub fn pooled_embedding(&self, features: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let pooled = bound.encode_pooled(features, Mode::Eval)?;
        Ok(tape.value(pooled))
    }
}

/// Per-step dropout seed stream; one per training step.
pub struct DropoutCtx {
    base_seed: u64,
    counter: Cell<u64>,
}

impl DropoutCtx {
    pub fn new(base_seed: u64) -> Self {
        Self {
            base_seed,
            counter: Cell::new(0),
        }
    }

    fn next_seed(&self) -> u64 {
        let c = self.counter.get();
        self.counter.set(c + 1);
        derive_seed_n(self.base_seed, "dropout", &[c])
    }
}

/// Forward mode: training enables dropout with seeds from the context.
#[derive(Clone, Copy)]
pub enum Mode<'a> {
    Eval,
    Train(&'a DropoutCtx),
}

/// A model leased onto a tape for one forward/backward round.
pub struct BoundModel<'t> {
    pub tape: &'t Tape,
    pub config: ModelConfig,
    vars: Vec<Var>,
    index: ParamIndex,
}

/// Sinusoidal position encodings [len×h].
pub fn sinusoidal_positions(len: usize, h: usize) -> Tensor {
    let mut data = vec![0.0; len * h];
    for pos in 0..len {
        for i in 0..h / 2 {
            let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / h as f64);
            data[pos * h + 2 * i] = (pos as f64 * freq).sin();
            data[pos * h + 2 * i + 1] = (pos as f64 * freq).cos();
        }
    }
    Tensor::new(vec![len, h], data).unwrap()
}

fn causal_mask(tape: &Tape, len: usize) -> Var {
    let mut data = vec![0.0; len * len];
    for i in 0..len {
        for j in (i + 1)..len {
            data[i * len + j] = -1e30;
        }
    }
    tape.leaf(Tensor::new(vec![len, len], data).unwrap())
}

impl<'t> BoundModel<'t> {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn maybe_dropout(&self, x: Var, mode: Mode) -> Result<Var> {
        match mode {
            Mode::Train(ctx) if self.config.dropout > 0.0 => {
                self.tape.dropout(x, self.config.dropout, ctx.next_seed())
            }
            _ => Ok(x),
        }
    }

    fn linear(&self, x: Var, w: usize, b: usize) -> Result<Var> {
        let t = self.tape;
        t.add_row(t.matmul(x, self.vars[w])?, self.vars[b])
    }

    fn norm(&self, x: Var, g: usize, b: usize) -> Result<Var> {
        self.tape
            .layer_norm(x, self.vars[g], self.vars[b], self.config.layer_norm_eps)
    }

    fn attention(
        &self,
        q_in: Var,
        kv_in: Var,
        idx: &AttnIdx,
        mask: Option<Var>,
        mode: Mode,
    ) -> Result<Var> {
        let t = self.tape;
        let h = self.config.hidden_size;
        let heads = self.config.heads;
        let dk = h / heads;
        let q = self.linear(q_in, idx.wq, idx.bq)?;
        let k = self.linear(kv_in, idx.wk, idx.bk)?;
        let v = self.linear(kv_in, idx.wv, idx.bv)?;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut head_outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let qh = t.slice_cols(q, hd * dk, dk)?;
            let kh = t.slice_cols(k, hd * dk, dk)?;
            let vh = t.slice_cols(v, hd * dk, dk)?;
            let mut scores = t.scale(t.matmul_nt(qh, kh)?, scale);
            if let Some(m) = mask {
                scores = t.add(scores, m)?;
            }
            let probs = t.softmax(scores, 1)?;
            let probs = self.maybe_dropout(probs, mode)?;
            head_outs.push(t.matmul(probs, vh)?);
        }
        let merged = t.concat_cols(&head_outs)?;
        self.linear(merged, idx.wo, idx.bo)
    }

    fn ffn(&self, x: Var, idx: &FfnIdx, mode: Mode) -> Result<Var> {
        let t = self.tape;
        let hidden = t.gelu(self.linear(x, idx.w1, idx.b1)?);
        let hidden = self.maybe_dropout(hidden, mode)?;
        self.linear(hidden, idx.w2, idx.b2)
    }

    /// Contextual frame embeddings [I×h] for feature frames [I×d_feat].
    pub fn encode(&self, features: &Tensor, mode: Mode) -> Result<Var> {
        let cfg = &self.config;
        if features.shape().len() != 2 || features.shape()[1] != cfg.feature_dim {
            return Err(Error::Input(format!(
                "features must be [I,{}], got {:?}",
                cfg.feature_dim,
                features.shape()
            )));
        }
        let frames = features.shape()[0];
        if frames == 0 || frames > cfg.max_source_frames {
            return Err(Error::Input(format!(
                "frame count {} outside 1..={}",
                frames, cfg.max_source_frames
            )));
        }
        let t = self.tape;
        let x = t.leaf(features.clone());
        let x = self.norm(x, self.index.input_norm_g, self.index.input_norm_b)?;
        let x = self.linear(x, self.index.input_proj_w, self.index.input_proj_b)?;
        let pos = t.leaf(sinusoidal_positions(frames, cfg.hidden_size));
        let mut x = t.add(x, pos)?;
        let layers = self.index.enc_layers.clone();
        for layer in &layers {
            let normed = self.norm(x, layer.attn.norm_g, layer.attn.norm_b)?;
            let attn = self.attention(normed, normed, &layer.attn, None, mode)?;
            x = t.add(x, attn)?;
            let normed = self.norm(x, layer.ffn.norm_g, layer.ffn.norm_b)?;
            let ff = self.ffn(normed, &layer.ffn, mode)?;
            x = t.add(x, ff)?;
        }
        self.norm(x, self.index.enc_final_g, self.index.enc_final_b)
    }

    /// Mean over the frame axis of [`Self::encode`]'s output → [h].
    pub fn encode_pooled(&self, features: &Tensor, mode: Mode) -> Result<Var> {
        let enc = self.encode(features, mode)?;
        self.tape.mean_axis(enc, 0)
    }

    /// Decoder hidden states [J×h] over a token prefix, causally masked,
    /// cross-attending to `enc_out`.
    pub fn decode_hidden(&self, enc_out: Var, tokens: &[usize], mode: Mode) -> Result<Var> {
        let cfg = &self.config;
        if tokens.is_empty() || tokens.len() > cfg.max_target_tokens {
            return Err(Error::Input(format!(
                "target length {} outside 1..={}",
                tokens.len(),
                cfg.max_target_tokens
            )));
        }
        let t = self.tape;
        let x = t.embedding(self.vars[self.index.embed], tokens)?;
        let pos = t.leaf(sinusoidal_positions(tokens.len(), cfg.hidden_size));
        let mut x = t.add(x, pos)?;
        let mask = causal_mask(t, tokens.len());
        let layers = self.index.dec_layers.clone();
        for layer in &layers {
            let normed = self.norm(x, layer.self_attn.norm_g, layer.self_attn.norm_b)?;
            let attn = self.attention(normed, normed, &layer.self_attn, Some(mask), mode)?;
            x = t.add(x, attn)?;
            let normed = self.norm(x, layer.cross_attn.norm_g, layer.cross_attn.norm_b)?;
            let cross = self.attention(normed, enc_out, &layer.cross_attn, None, mode)?;
            x = t.add(x, cross)?;
            let normed = self.norm(x, layer.ffn.norm_g, layer.ffn.norm_b)?;
            let ff = self.ffn(normed, &layer.ffn, mode)?;
            x = t.add(x, ff)?;
        }
        self.norm(x, self.index.dec_final_g, self.index.dec_final_b)
    }

    /// Project decoder hidden states to vocabulary logits.
    pub fn output_logits(&self, hidden: Var) -> Result<Var> {
        self.linear(hidden, self.index.out_w, self.index.out_b)
    }

    /// Teacher-forced logits [J×|V|]: row j conditions only on the source
    /// and on tokens before position j.
    pub fn forward_teacher_forced(
        &self,
        features: &Tensor,
        target_tokens: &[usize],
        mode: Mode,
    ) -> Result<Var> {
        if target_tokens.first() != Some(&crate::data::BOS_ID) {
            return Err(Error::Input("target sequence must begin with BOS".into()));
        }
        let enc = self.encode(features, mode)?;
        let hidden = self.decode_hidden(enc, target_tokens, mode)?;
        self.output_logits(hidden)
    }

    /// Logits for the next token after the given prefix: [1×|V|].
    pub fn next_token_logits(&self, enc_out: Var, prefix: &[usize], mode: Mode) -> Result<Var> {
        let hidden = self.decode_hidden(enc_out, prefix, mode)?;
        let last = self.tape.slice_rows(hidden, prefix.len() - 1, 1)?;
        self.output_logits(last)
    }
}
