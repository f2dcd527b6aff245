//! Miniature encoder-decoder transformer with a copy pointer restricted to
//! the Chae segment and one emotion classification head per condition.

pub mod heads;
mod params;

pub use params::{Bound, ParamId, ParamStore};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::special::BOS_ID;
use crate::codec::{CodecError, EmotionLabel, ModelInput};
use crate::tensor::{Tape, Tensor, TensorError, Var};
use params::{AttnIds, FfnIds, Layout, NormIds};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input of length {len} exceeds max_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("decoder prefix is empty")]
    EmptyPrefix,
    #[error("emotion head {index} out of range for k = {k}")]
    HeadIndex { index: usize, k: usize },
    #[error("token id {id} outside vocabulary of {size}")]
    TokenId { id: usize, size: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    /// Conditions per Chae, and emotion heads.
    pub k: usize,
    pub n_emotions: usize,
    /// Weight of the emotion loss in the total objective.
    pub lambda: f64,
    pub enable_copy: bool,
    pub enable_emotion_loss: bool,
    /// Longest encoder input accepted; also bounds decoder prefixes.
    pub max_len: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 32,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 64,
            k: 2,
            n_emotions: EmotionLabel::COUNT,
            lambda: 1.0,
            enable_copy: true,
            enable_emotion_loss: true,
            max_len: 160,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_emotions != EmotionLabel::COUNT {
            return fail(format!("n_emotions must be {}", EmotionLabel::COUNT));
        }
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.vocab_size < 11 {
            return fail(format!("vocab_size {} is below the reserved set", self.vocab_size));
        }
        if self.d_ff == 0 || self.max_len < 2 || self.n_enc_layers == 0 || self.n_dec_layers == 0 {
            return fail("layer counts, d_ff and max_len must be positive".into());
        }
        Ok(())
    }
}

/// Decoder states and the last layer's per-head cross attention.
#[derive(Clone, Debug)]
pub struct DecoderOutput {
    /// `T x d_model`.
    pub h_dec: Var,
    /// One `T x L` matrix per head.
    pub cross_attn: Vec<Var>,
    /// Decoder input embeddings, `T x d_model`.
    pub e_y: Var,
}

/// Per-step output distributions on the tape.
#[derive(Clone, Debug)]
pub struct OutputHeads {
    /// `T x V` vocabulary distribution.
    pub p_voc: Var,
    /// `T x V` final distribution (equal to `p_voc` without copy).
    pub p: Var,
    /// `T x 1` generation probability, when copy is enabled.
    pub p_gen: Option<Var>,
    /// `T x L` restricted head-averaged attention, when copy is enabled.
    pub attn: Option<Var>,
}

/// Teacher-forced supervision for one sentence.
#[derive(Clone, Copy, Debug)]
pub struct Supervision<'a> {
    pub input: &'a ModelInput,
    /// Target ids ending with `</s>`.
    pub target: &'a [usize],
    /// Label for each of the `k` heads; `None` masks the head.
    pub emotions: &'a [Option<EmotionLabel>],
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub nll: Var,
    pub emo: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

const MASK_NEG: f64 = -1e9;

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (params, layout) = params::initialize(&config, seed);
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    /// Rebuilds a model around stored parameters, checking names and shapes.
    pub fn with_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        let entries = params.names().iter().cloned().zip(params.tensors().iter().cloned()).collect();
        model.params.assign(entries).map_err(ModelError::Config)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Switches the copy and emotion-loss ablation flags; parameters are
    /// unchanged since both paths always exist.
    pub fn set_ablation(&mut self, enable_copy: bool, enable_emotion_loss: bool) {
        self.config.enable_copy = enable_copy;
        self.config.enable_emotion_loss = enable_emotion_loss;
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn w_voc(&self) -> ParamId {
        self.layout.w_voc
    }

    pub fn b_voc(&self) -> ParamId {
        self.layout.b_voc
    }

    pub fn w_p(&self) -> ParamId {
        self.layout.w_p
    }

    /// `(weight, bias)` of emotion head `i`.
    pub fn emotion_head(&self, i: usize) -> Result<(ParamId, ParamId)> {
        self.layout.emo.get(i).copied().ok_or(ModelError::HeadIndex {
            index: i,
            k: self.config.k,
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        self.params.bind(tape, trainable)
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(ModelError::TokenId {
                id,
                size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn embed(&self, tape: &mut Tape, p: &Bound, ids: &[usize], norm: &NormIds) -> Result<Var> {
        let tok = tape.embedding_gather(p.var(self.layout.tok_emb), ids)?;
        let pos = tape.constant(positional_encoding(ids.len(), self.config.d_model));
        let x = tape.add(tok, pos)?;
        Ok(tape.layer_norm(x, p.var(norm.gain), p.var(norm.bias))?)
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = tape.matmul(x, w)?;
        Ok(tape.add(y, b)?)
    }

    /// Multi-head attention; returns the projected output and each head's
    /// attention matrix.
    fn attention(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ids: &AttnIds,
        query: Var,
        memory: Var,
        causal: bool,
    ) -> Result<(Var, Vec<Var>)> {
        let h = self.config.n_heads;
        let dh = self.config.d_model / h;
        let q = self.linear(tape, query, p.var(ids.wq), p.var(ids.bq))?;
        let k = self.linear(tape, memory, p.var(ids.wk), p.var(ids.bk))?;
        let v = self.linear(tape, memory, p.var(ids.wv), p.var(ids.bv))?;
        let (tq, tk) = (tape.shape(query)[0], tape.shape(memory)[0]);
        let mask = causal.then(|| tape.constant(causal_mask(tq, tk)));
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(h);
        let mut attns = Vec::with_capacity(h);
        for head in 0..h {
            let qh = tape.slice_cols(q, head * dh, dh)?;
            let kh = tape.slice_cols(k, head * dh, dh)?;
            let vh = tape.slice_cols(v, head * dh, dh)?;
            let scores = tape.matmul_bt(qh, kh)?;
            let mut scores = tape.scalar_mul(scores, scale);
            if let Some(m) = mask {
                scores = tape.add(scores, m)?;
            }
            let a = tape.softmax(scores, 1)?;
            outs.push(tape.matmul(a, vh)?);
            attns.push(a);
        }
        let cat = tape.concat(&outs, 1)?;
        let out = self.linear(tape, cat, p.var(ids.wo), p.var(ids.bo))?;
        Ok((out, attns))
    }

    fn feed_forward(&self, tape: &mut Tape, p: &Bound, ids: &FfnIds, x: Var) -> Result<Var> {
        let hidden = self.linear(tape, x, p.var(ids.w1), p.var(ids.b1))?;
        let hidden = tape.gelu(hidden);
        self.linear(tape, hidden, p.var(ids.w2), p.var(ids.b2))
    }

    fn residual_norm(&self, tape: &mut Tape, p: &Bound, x: Var, y: Var, norm: &NormIds) -> Result<Var> {
        let s = tape.add(x, y)?;
        Ok(tape.layer_norm(s, p.var(norm.gain), p.var(norm.bias))?)
    }

    /// Bidirectional encoder over the assembled input; `L x d_model`.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, input: &ModelInput) -> Result<Var> {
        if input.len() > self.config.max_len {
            return Err(ModelError::TooLong {
                len: input.len(),
                max: self.config.max_len,
            });
        }
        self.check_ids(&input.ids)?;
        let mut x = self.embed(tape, p, &input.ids, &self.layout.enc_emb_norm)?;
        for layer in &self.layout.enc {
            let (a, _) = self.attention(tape, p, &layer.attn, x, x, false)?;
            x = self.residual_norm(tape, p, x, a, &layer.norm1)?;
            let f = self.feed_forward(tape, p, &layer.ffn, x)?;
            x = self.residual_norm(tape, p, x, f, &layer.norm2)?;
        }
        Ok(x)
    }

    /// Causal decoder over `prefix` (starting with `<s>`) attending to `h_enc`.
    pub fn decode(&self, tape: &mut Tape, p: &Bound, prefix: &[usize], h_enc: Var) -> Result<DecoderOutput> {
        if prefix.is_empty() {
            return Err(ModelError::EmptyPrefix);
        }
        if prefix.len() > self.config.max_len {
            return Err(ModelError::TooLong {
                len: prefix.len(),
                max: self.config.max_len,
            });
        }
        self.check_ids(prefix)?;
        let e_y = self.embed(tape, p, prefix, &self.layout.dec_emb_norm)?;
        let mut x = e_y;
        let mut cross = Vec::new();
        for layer in &self.layout.dec {
            let (a, _) = self.attention(tape, p, &layer.self_attn, x, x, true)?;
            x = self.residual_norm(tape, p, x, a, &layer.norm1)?;
            let (c, attn) = self.attention(tape, p, &layer.cross_attn, x, h_enc, false)?;
            x = self.residual_norm(tape, p, x, c, &layer.norm2)?;
            let f = self.feed_forward(tape, p, &layer.ffn, x)?;
            x = self.residual_norm(tape, p, x, f, &layer.norm3)?;
            cross = attn;
        }
        Ok(DecoderOutput {
            h_dec: x,
            cross_attn: cross,
            e_y,
        })
    }

    /// Vocabulary distribution, copy gate and final mixture for every
    /// decoder position. `temperature` divides the vocabulary logits only.
    pub fn output_heads(
        &self,
        tape: &mut Tape,
        p: &Bound,
        dec: &DecoderOutput,
        h_enc: Var,
        input: &ModelInput,
        temperature: f64,
    ) -> Result<OutputHeads> {
        let logits = self.linear(tape, dec.h_dec, p.var(self.layout.w_voc), p.var(self.layout.b_voc))?;
        let logits = if temperature == 1.0 {
            logits
        } else {
            tape.scalar_mul(logits, 1.0 / temperature)
        };
        let p_voc = tape.softmax(logits, 1)?;
        if !self.config.enable_copy {
            return Ok(OutputHeads {
                p_voc,
                p: p_voc,
                p_gen: None,
                attn: None,
            });
        }
        let summed = sum_vars(tape, &dec.cross_attn)?;
        let avg = tape.scalar_mul(summed, 1.0 / dec.cross_attn.len() as f64);
        let attn = tape.restrict_renorm(avg, &input.chae_mask)?;
        let h_con = tape.matmul(attn, h_enc)?;
        let feats = tape.concat(&[dec.h_dec, h_con, dec.e_y], 1)?;
        let z = tape.matmul(feats, p.var(self.layout.w_p))?;
        let p_gen = tape.sigmoid(z);
        let copy = tape.scatter_cols(attn, &input.copy_targets(), self.config.vocab_size)?;
        let gen_part = tape.mul(p_voc, p_gen)?;
        let one_minus = tape.affine(p_gen, -1.0, 1.0);
        let copy_part = tape.mul(copy, one_minus)?;
        let mixed = tape.add(gen_part, copy_part)?;
        Ok(OutputHeads {
            p_voc,
            p: mixed,
            p_gen: Some(p_gen),
            attn: Some(attn),
        })
    }

    /// `1 x e` emotion distribution of head `i` from mean-pooled decoder states.
    pub fn emotion_probs(&self, tape: &mut Tape, p: &Bound, h_dec: Var, i: usize) -> Result<Var> {
        let (w, b) = self.emotion_head(i)?;
        let pooled = tape.mean(h_dec, 0)?;
        let logits = self.linear(tape, pooled, p.var(w), p.var(b))?;
        Ok(tape.softmax(logits, 1)?)
    }

    /// Teacher-forced objective: mean token NLL of the mixture plus
    /// `lambda` times the class-weighted emotion loss.
    pub fn loss(&self, tape: &mut Tape, p: &Bound, sup: Supervision<'_>, alpha: &[f64]) -> Result<LossVars> {
        if sup.target.is_empty() {
            return Err(ModelError::EmptyPrefix);
        }
        let h_enc = self.encode(tape, p, sup.input)?;
        let mut prefix = Vec::with_capacity(sup.target.len());
        prefix.push(BOS_ID);
        prefix.extend_from_slice(&sup.target[..sup.target.len() - 1]);
        let dec = self.decode(tape, p, &prefix, h_enc)?;
        let heads = self.output_heads(tape, p, &dec, h_enc, sup.input, 1.0)?;
        self.check_ids(sup.target)?;
        let picked = tape.pick(heads.p, sup.target)?;
        let logp = tape.log(picked, heads::LOG_FLOOR);
        let mean = tape.mean(logp, 0)?;
        let nll = tape.scalar_mul(mean, -1.0);

        if !self.config.enable_emotion_loss {
            return Ok(LossVars {
                total: nll,
                nll,
                emo: None,
            });
        }
        let active: Vec<(usize, EmotionLabel)> = sup
            .emotions
            .iter()
            .take(self.config.k)
            .enumerate()
            .filter_map(|(i, e)| e.map(|e| (i, e)))
            .collect();
        let mut terms = Vec::with_capacity(active.len());
        for &(i, label) in &active {
            let probs = self.emotion_probs(tape, p, dec.h_dec, i)?;
            let picked = tape.pick(probs, &[label.id()])?;
            let logp = tape.log(picked, heads::LOG_FLOOR);
            terms.push(tape.scalar_mul(logp, -alpha[label.id()] / active.len() as f64));
        }
        let emo = if terms.is_empty() {
            tape.constant(Tensor::scalar(0.0))
        } else {
            sum_vars(tape, &terms)?
        };
        let weighted = tape.scalar_mul(emo, self.config.lambda);
        let total = tape.add(nll, weighted)?;
        Ok(LossVars {
            total,
            nll,
            emo: Some(emo),
        })
    }
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

/// Sinusoidal position table, `len x d`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(len, d);
    for pos in 0..len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            t.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    t
}

fn causal_mask(rows: usize, cols: usize) -> Tensor {
    let mut t = Tensor::zeros(rows, cols);
    for r in 0..rows {
        for c in (r + 1)..cols {
            t.set(r, c, MASK_NEG);
        }
    }
    t
}

mod infer;
pub use infer::{Encoded, StepInfo};
