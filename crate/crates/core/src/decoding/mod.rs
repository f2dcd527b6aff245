//! Greedy, beam and top-k decoding over the model's final distribution,
//! and the sentence-by-sentence story loop.

mod story_spec;

pub use story_spec::StorySpec;

use std::cmp::Ordering;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::special::EOS_ID;
use crate::codec::{assemble_input_within, detokenize, tokenize, ChaeSpec, CodecError, Vocabulary};
use crate::model::{Encoded, Model, ModelError, StepInfo};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decoding config: {0}")]
    Config(String),
    #[error("no Chae specs supplied")]
    NoSpecs,
    #[error("story spec: {0}")]
    Spec(String),
    #[error("beginning is empty")]
    EmptyBeginning,
    #[error("step distribution is empty or has no mass")]
    Degenerate,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

pub type Result<T> = std::result::Result<T, DecodeError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Beam,
    Topk,
}

impl std::str::FromStr for Strategy {
    type Err = DecodeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "beam" => Ok(Self::Beam),
            "topk" | "top-k" => Ok(Self::Topk),
            _ => Err(DecodeError::Config(format!("unknown strategy {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingConfig {
    pub strategy: Strategy,
    pub beam_size: usize,
    pub top_k: usize,
    /// Divides the vocabulary logits when sampling; greedy and beam use 1.
    pub temperature: f64,
    /// Longest sentence in tokens, `</s>` included.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Topk,
            beam_size: 2,
            top_k: 50,
            temperature: 0.8,
            max_len: 40,
            seed: 0,
        }
    }
}

impl DecodingConfig {
    pub fn greedy() -> Self {
        Self {
            strategy: Strategy::Greedy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(DecodeError::Config("beam_size must be at least 1".into()));
        }
        if self.top_k == 0 {
            return Err(DecodeError::Config("top_k must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(DecodeError::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if self.max_len == 0 {
            return Err(DecodeError::Config("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// Anything that yields a next-token distribution for a generated prefix
/// (which excludes `<s>`).
pub trait StepModel {
    fn next_distribution(&self, prefix: &[usize], temperature: f64) -> Result<StepInfo>;

    /// Per-head emotion distributions for a finished sentence, if any.
    fn emotions(&self, _sentence: &[usize]) -> Result<Vec<Vec<f64>>> {
        Ok(Vec::new())
    }
}

/// A model bound to one encoded input.
pub struct ModelStepper<'a> {
    pub model: &'a Model,
    pub encoded: Encoded,
}

impl StepModel for ModelStepper<'_> {
    fn next_distribution(&self, prefix: &[usize], temperature: f64) -> Result<StepInfo> {
        Ok(self.model.step(&self.encoded, prefix, temperature)?)
    }

    fn emotions(&self, sentence: &[usize]) -> Result<Vec<Vec<f64>>> {
        Ok(self.model.predict_emotions(&self.encoded, sentence)?)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    /// Generated ids, ending with `</s>` unless the length cap was hit.
    pub tokens: Vec<usize>,
    /// Probability of each chosen token under the model's distribution.
    pub token_probs: Vec<f64>,
    /// Copy gate per step; empty when copy is disabled.
    pub p_gen: Vec<f64>,
    /// Per-head emotion distributions for the finished sentence.
    pub emotions: Vec<Vec<f64>>,
    /// Length-normalized log probability.
    pub score: f64,
}

impl GenerationResult {
    /// Tokens without the closing `</s>`.
    pub fn sentence(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS_ID) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// Sum of log probabilities divided by length; `-inf` for empty input.
pub fn normalized_score(log_probs_sum: f64, len: usize) -> f64 {
    if len == 0 {
        f64::NEG_INFINITY
    } else {
        log_probs_sum / len as f64
    }
}

fn argmax(probs: &[f64]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, &p) in probs.iter().enumerate() {
        if best.map_or(true, |b| p > probs[b]) {
            best = Some(i);
        }
    }
    best.ok_or(DecodeError::Degenerate)
}

/// Follows `choose` until `</s>` or `max_len`, recording the trace.
fn run<M: StepModel>(
    m: &M,
    max_len: usize,
    temperature: f64,
    mut choose: impl FnMut(&[f64]) -> Result<usize>,
) -> Result<GenerationResult> {
    let mut out = GenerationResult::default();
    let mut logp = 0.0;
    while out.tokens.len() < max_len {
        let step = m.next_distribution(&out.tokens, temperature)?;
        let y = choose(&step.probs)?;
        out.token_probs.push(step.probs[y]);
        logp += step.probs[y].ln();
        if let Some(g) = step.p_gen {
            out.p_gen.push(g);
        }
        out.tokens.push(y);
        if y == EOS_ID {
            break;
        }
    }
    out.score = normalized_score(logp, out.tokens.len());
    out.emotions = m.emotions(&out.tokens)?;
    Ok(out)
}

/// Argmax at every step; ties go to the lowest id.
pub fn greedy<M: StepModel>(m: &M, max_len: usize) -> Result<GenerationResult> {
    run(m, max_len, 1.0, argmax)
}

/// The `k` most probable ids (ties to the lowest id) with renormalized mass.
pub fn top_k_filter(probs: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(k.max(1));
    let mass: f64 = idx.iter().map(|&i| probs[i]).sum();
    idx.into_iter().map(|i| (i, probs[i] / mass)).collect()
}

/// Draws from the top-k restriction of `probs`.
pub fn sample_top_k(probs: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
    let kept = top_k_filter(probs, k);
    if kept.len() == 1 {
        return Ok(kept[0].0);
    }
    let dist = WeightedIndex::new(kept.iter().map(|&(_, p)| p)).map_err(|_| DecodeError::Degenerate)?;
    Ok(kept[dist.sample(rng)].0)
}

pub fn top_k_sample<M: StepModel>(
    m: &M,
    max_len: usize,
    top_k: usize,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GenerationResult> {
    run(m, max_len, temperature, |p| sample_top_k(p, top_k, rng))
}

#[derive(Clone, Debug)]
struct Hyp {
    tokens: Vec<usize>,
    probs: Vec<f64>,
    p_gen: Vec<f64>,
    logp: f64,
}

impl Hyp {
    fn score(&self) -> f64 {
        normalized_score(self.logp, self.tokens.len())
    }
}

/// Beam search over summed log probabilities. Finished hypotheses, and
/// those cut at `max_len`, compete on length-normalized score together
/// with the greedy path.
pub fn beam_search<M: StepModel>(m: &M, max_len: usize, beam_size: usize) -> Result<GenerationResult> {
    if beam_size == 0 {
        return Err(DecodeError::Config("beam_size must be at least 1".into()));
    }
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        probs: Vec::new(),
        p_gen: Vec::new(),
        logp: 0.0,
    }];
    let mut finished: Vec<Hyp> = Vec::new();
    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let mut cands: Vec<Hyp> = Vec::new();
        for h in &live {
            let step = m.next_distribution(&h.tokens, 1.0)?;
            for (y, &p) in step.probs.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                let mut c = h.clone();
                c.tokens.push(y);
                c.probs.push(p);
                c.p_gen.extend(step.p_gen);
                c.logp += p.ln();
                cands.push(c);
            }
        }
        cands.sort_by(|a, b| b.logp.total_cmp(&a.logp).then_with(|| a.tokens.cmp(&b.tokens)));
        cands.truncate(beam_size);
        live.clear();
        for c in cands {
            if c.tokens.last() == Some(&EOS_ID) || c.tokens.len() >= max_len {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
    }
    finished.extend(live);
    let greedy_path = greedy(m, max_len)?;
    let mut best: Option<&Hyp> = None;
    for h in &finished {
        if best.map_or(true, |b| better(h, b)) {
            best = Some(h);
        }
    }
    let result = match best {
        Some(h) if h.score() >= greedy_path.score => GenerationResult {
            emotions: m.emotions(&h.tokens)?,
            score: h.score(),
            tokens: h.tokens.clone(),
            token_probs: h.probs.clone(),
            p_gen: h.p_gen.clone(),
        },
        _ => greedy_path,
    };
    Ok(result)
}

fn better(a: &Hyp, b: &Hyp) -> bool {
    match a.score().total_cmp(&b.score()) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => a.tokens < b.tokens,
    }
}

/// Decodes one sentence with `config`'s strategy.
pub fn generate<M: StepModel>(m: &M, config: &DecodingConfig, rng: &mut ChaCha8Rng) -> Result<GenerationResult> {
    config.validate()?;
    match config.strategy {
        Strategy::Greedy => greedy(m, config.max_len),
        Strategy::Beam => beam_search(m, config.max_len, config.beam_size),
        Strategy::Topk => top_k_sample(m, config.max_len, config.top_k, config.temperature, rng),
    }
}

/// Generates the sentence that follows `context` under `chae`. The Chae is
/// padded to the model's `k`; the oldest context tokens are dropped if the
/// input would exceed the model's length limit.
pub fn generate_sentence(
    model: &Model,
    vocab: &Vocabulary,
    context: &[String],
    chae: &ChaeSpec,
    config: &DecodingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GenerationResult> {
    let chae = chae.clone().padded(model.config().k)?;
    let (input, dropped) = assemble_input_within(context, &chae, vocab, model.config().max_len)?;
    if dropped > 0 {
        log::warn!("context overflow: dropped {dropped} oldest tokens");
    }
    let stepper = ModelStepper {
        model,
        encoded: model.encode_input(input)?,
    };
    let max_len = config.max_len.min(model.config().max_len - 1);
    let config = DecodingConfig {
        max_len,
        ..config.clone()
    };
    generate(&stepper, &config, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedStory {
    pub beginning: String,
    pub sentences: Vec<String>,
    pub results: Vec<GenerationResult>,
}

impl GeneratedStory {
    pub fn text(&self) -> String {
        std::iter::once(self.beginning.as_str())
            .chain(self.sentences.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// One sentence per spec, each appended to the context of the next.
/// A single RNG seeded from `config.seed` serves the whole story.
pub fn generate_story(
    model: &Model,
    vocab: &Vocabulary,
    beginning: &str,
    specs: &[ChaeSpec],
    config: &DecodingConfig,
) -> Result<GeneratedStory> {
    if specs.is_empty() {
        return Err(DecodeError::NoSpecs);
    }
    let mut context = tokenize(beginning);
    if context.is_empty() {
        return Err(DecodeError::EmptyBeginning);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut story = GeneratedStory {
        beginning: detokenize(&context),
        sentences: Vec::new(),
        results: Vec::new(),
    };
    for spec in specs {
        let r = generate_sentence(model, vocab, &context, spec, config, &mut rng)?;
        let words = vocab.decode(r.sentence());
        story.sentences.push(detokenize(&words));
        context.extend(words);
        story.results.push(r);
    }
    Ok(story)
}
