//! Sentence-pair construction, class weights, the AdamW training loop and
//! binary checkpoints.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState, CHECKPOINT_VERSION};
pub use optim::{clip_global_norm, AdamW};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::special::EOS;
use crate::codec::{
    assemble_input_within, pad_conditions, tokenize, ChaeCondition, ChaeSpec, CodecError, EmotionLabel,
    ModelInput, Vocabulary,
};
use crate::corpus::{resolve_emotions, AnnotatedStory};
use crate::model::{Model, ModelError, Supervision};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no emotion labels to weight")]
    NoLabels,
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("non-finite loss on batch example {index}")]
    NonFinite { index: usize },
    #[error("checkpoint integrity: {0}")]
    Integrity(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint vocabulary hash {found:016x} does not match {expected:016x}")]
    VocabMismatch { found: u64, expected: u64 },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// One teacher-forced sentence pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub story_id: String,
    /// Index of the target sentence in its story.
    pub sentence: usize,
    /// Gold sentences before the target.
    pub context: Vec<String>,
    pub chae: ChaeSpec,
    /// Target tokens ending with `</s>`.
    pub target: Vec<String>,
    /// Label per condition; `None` for padding.
    pub emotions: Vec<Option<EmotionLabel>>,
}

/// A [`TrainExample`] mapped to ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedExample {
    pub input: ModelInput,
    pub target: Vec<usize>,
    pub emotions: Vec<Option<EmotionLabel>>,
}

impl TrainExample {
    pub fn encode(&self, vocab: &Vocabulary, max_len: usize) -> Result<EncodedExample> {
        let (input, dropped) = assemble_input_within(&self.context, &self.chae, vocab, max_len)?;
        if dropped > 0 {
            log::warn!(
                "{} sentence {}: dropped {dropped} oldest context tokens",
                self.story_id,
                self.sentence
            );
        }
        let mut target = vocab.encode(&self.target);
        target.truncate(max_len);
        Ok(EncodedExample {
            input,
            target,
            emotions: self.emotions.clone(),
        })
    }
}

pub fn encode_all(examples: &[TrainExample], vocab: &Vocabulary, max_len: usize) -> Result<Vec<EncodedExample>> {
    examples.iter().map(|e| e.encode(vocab, max_len)).collect()
}

/// Pairs each sentence after the first with the gold sentences before it.
/// Sentences without annotations are skipped; conditions beyond `k` are
/// dropped, keeping the first `k`.
pub fn make_sentence_pairs(story: &AnnotatedStory, k: usize, tau: f64) -> Vec<TrainExample> {
    let mut out = Vec::new();
    let mut context = Vec::new();
    for (i, sentence) in story.sentences.iter().enumerate() {
        let tokens = tokenize(sentence);
        if i > 0 {
            match story.annotations.get(i).filter(|a| !a.is_empty()) {
                None => log::warn!("{} sentence {i}: no annotations, skipped", story.id),
                Some(chars) => {
                    if chars.len() > k {
                        log::warn!("{} sentence {i}: {} characters, keeping {k}", story.id, chars.len());
                    }
                    let conds: Vec<ChaeCondition> = chars
                        .iter()
                        .take(k)
                        .map(|c| ChaeCondition::new(c.name.clone(), c.actions.clone(), resolve_emotions(&c.emotion_votes, tau)))
                        .collect();
                    let n = conds.len();
                    let chae = pad_conditions(conds, k).expect("at most k conditions");
                    let mut emotions: Vec<Option<EmotionLabel>> =
                        chae.conditions().iter().take(n).map(|c| Some(c.emotion)).collect();
                    emotions.resize(k, None);
                    let mut target = tokens.clone();
                    target.push(EOS.to_string());
                    out.push(TrainExample {
                        story_id: story.id.clone(),
                        sentence: i,
                        context: context.clone(),
                        chae,
                        target,
                        emotions,
                    });
                }
            }
        }
        context.extend(tokens);
    }
    out
}

/// `alpha_e = N / (e * count_e)` with `e = counts.len()`; empty classes get 0.
pub fn class_weights_from_counts(counts: &[usize]) -> Result<Vec<f64>> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(TrainError::NoLabels);
    }
    let e = counts.len() as f64;
    Ok(counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { n as f64 / (e * c as f64) })
        .collect())
}

pub fn compute_class_weights<I>(labels: I) -> Result<[f64; EmotionLabel::COUNT]>
where
    I: IntoIterator<Item = EmotionLabel>,
{
    let mut counts = [0usize; EmotionLabel::COUNT];
    for l in labels {
        counts[l.id()] += 1;
    }
    let w = class_weights_from_counts(&counts)?;
    Ok(w.try_into().expect("nine classes"))
}

/// Class weights over every active label in `examples`.
pub fn example_class_weights(examples: &[TrainExample]) -> Result<[f64; EmotionLabel::COUNT]> {
    compute_class_weights(examples.iter().flat_map(|e| e.emotions.iter().flatten().copied()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            batch_size: 8,
            clip_norm: 1.0,
            epochs: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return bad("weight_decay must be >= 0 and eps > 0");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub total: f64,
    pub nll: f64,
    pub emo: f64,
}

/// Epoch-wise shuffled order over example indices.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Sampler {
    rng: ChaCha8Rng,
    order: Vec<u32>,
    pos: usize,
}

impl Sampler {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: Vec::new(),
            pos: 0,
        }
    }

    fn next_batch(&mut self, n: usize, size: usize) -> Vec<usize> {
        if self.order.len() != n {
            self.order = (0..n as u32).collect();
            self.pos = n;
        }
        if self.pos >= n {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + size).min(n);
        let batch = self.order[self.pos..end].iter().map(|&i| i as usize).collect();
        self.pos = end;
        batch
    }
}

/// Model, optimizer and sampling state for one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: Model,
    config: TrainConfig,
    opt: AdamW,
    alpha: [f64; EmotionLabel::COUNT],
    sampler: Sampler,
    step: u64,
    vocab_hash: u64,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig, alpha: [f64; EmotionLabel::COUNT], vocab_hash: u64) -> Result<Self> {
        config.validate()?;
        let opt = AdamW::new(&config, model.params());
        let sampler = Sampler::new(config.seed);
        Ok(Self {
            model,
            config,
            opt,
            alpha,
            sampler,
            step: 0,
            vocab_hash,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn alpha(&self) -> &[f64; EmotionLabel::COUNT] {
        &self.alpha
    }

    /// One averaged-gradient update over `batch`. Nothing is applied if any
    /// example yields a non-finite loss.
    pub fn train_step(&mut self, batch: &[&EncodedExample]) -> Result<StepLoss> {
        if batch.is_empty() {
            return Err(TrainError::Empty("batch"));
        }
        let n = self.model.params().len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        let mut sum = StepLoss::default();
        let scale = 1.0 / batch.len() as f64;
        for (index, ex) in batch.iter().enumerate() {
            let mut tape = Tape::new();
            let p = self.model.bind(&mut tape, true);
            let sup = Supervision {
                input: &ex.input,
                target: &ex.target,
                emotions: &ex.emotions,
            };
            let l = self.model.loss(&mut tape, &p, sup, &self.alpha)?;
            let total = tape.value(l.total).item();
            if !total.is_finite() {
                return Err(TrainError::NonFinite { index });
            }
            sum.total += total * scale;
            sum.nll += tape.value(l.nll).item() * scale;
            sum.emo += l.emo.map_or(0.0, |e| tape.value(e).item()) * scale;
            tape.backward_scaled(l.total, scale).map_err(ModelError::from)?;
            for (g, &v) in grads.iter_mut().zip(p.vars()) {
                if let Some(t) = tape.grad(v) {
                    match g {
                        Some(acc) => acc.add_assign(t),
                        None => *g = Some(t.clone()),
                    }
                }
            }
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite { index: 0 });
        }
        clip_global_norm(&mut grads, self.config.clip_norm);
        self.opt.update(self.model.params_mut(), &grads);
        self.step += 1;
        Ok(sum)
    }

    /// Draws the next batch from the epoch-shuffled order and trains on it.
    pub fn train_next(&mut self, data: &[EncodedExample]) -> Result<StepLoss> {
        if data.is_empty() {
            return Err(TrainError::Empty("training set"));
        }
        let idx = self.sampler.next_batch(data.len(), self.config.batch_size);
        let batch: Vec<&EncodedExample> = idx.iter().map(|&i| &data[i]).collect();
        self.train_step(&batch)
    }

    /// Runs one pass over `data` and returns the mean step loss.
    pub fn train_epoch(&mut self, data: &[EncodedExample]) -> Result<StepLoss> {
        let steps = data.len().div_ceil(self.config.batch_size);
        let mut mean = StepLoss::default();
        for _ in 0..steps {
            let l = self.train_next(data)?;
            mean.total += l.total / steps as f64;
            mean.nll += l.nll / steps as f64;
            mean.emo += l.emo / steps as f64;
        }
        Ok(mean)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model.config().clone(),
            params: self.model.params().clone(),
            adam_step: self.opt.step,
            adam_m: self.opt.m.clone(),
            adam_v: self.opt.v.clone(),
            vocab_hash: self.vocab_hash,
            step: self.step,
            rng: RngState::capture(&self.sampler.rng),
            order: self.sampler.order.clone(),
            cursor: self.sampler.pos as u64,
            alpha: self.alpha,
        }
    }

    /// Resumes exactly where `ckpt` was taken.
    pub fn resume(ckpt: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::with_params(ckpt.config, ckpt.params)?;
        let mut opt = AdamW::new(&config, model.params());
        if ckpt.adam_m.len() != opt.m.len() || ckpt.adam_v.len() != opt.v.len() {
            return Err(TrainError::Integrity("optimizer moments do not match parameters".into()));
        }
        opt.step = ckpt.adam_step;
        opt.m = ckpt.adam_m;
        opt.v = ckpt.adam_v;
        Ok(Self {
            model,
            config,
            opt,
            alpha: ckpt.alpha,
            sampler: Sampler {
                rng: ckpt.rng.restore(),
                order: ckpt.order,
                pos: ckpt.cursor as usize,
            },
            step: ckpt.step,
            vocab_hash: ckpt.vocab_hash,
        })
    }
}

/// Summed token NLL and token count under teacher forcing.
pub fn score(model: &Model, data: &[EncodedExample]) -> Result<(f64, usize)> {
    let mut nll = 0.0;
    let mut tokens = 0;
    let alpha = [1.0; EmotionLabel::COUNT];
    for ex in data {
        let mut tape = Tape::new();
        let p = model.bind(&mut tape, false);
        let sup = Supervision {
            input: &ex.input,
            target: &ex.target,
            emotions: &ex.emotions,
        };
        let l = model.loss(&mut tape, &p, sup, &alpha)?;
        nll += tape.value(l.nll).item() * ex.target.len() as f64;
        tokens += ex.target.len();
    }
    Ok((nll, tokens))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub train: StepLoss,
    /// Token-level mean validation NLL.
    pub val_nll: f64,
}

#[derive(Clone, Debug)]
pub struct LoopOutcome {
    pub best: Checkpoint,
    pub best_val_nll: f64,
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Trains for `trainer.config().epochs` epochs, validating after each and
/// keeping the checkpoint with the lowest validation NLL.
pub fn train_loop(
    trainer: &mut Trainer,
    train: &[EncodedExample],
    val: &[EncodedExample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<LoopOutcome> {
    if val.is_empty() {
        return Err(TrainError::Empty("validation set"));
    }
    if train.is_empty() {
        return Err(TrainError::Empty("training set"));
    }
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut history = Vec::new();
    for epoch in 1..=trainer.config.epochs {
        let loss = trainer.train_epoch(train)?;
        let (nll, tokens) = score(&trainer.model, val)?;
        let rec = EpochRecord {
            epoch,
            step: trainer.step,
            train: loss,
            val_nll: nll / tokens as f64,
        };
        log::info!(
            "epoch {epoch} step {} loss {:.4} nll {:.4} emo {:.4} val_nll {:.4}",
            rec.step,
            loss.total,
            loss.nll,
            loss.emo,
            rec.val_nll
        );
        on_epoch(&rec);
        if best.as_ref().map_or(true, |(b, _)| rec.val_nll < *b) {
            best = Some((rec.val_nll, trainer.checkpoint()));
        }
        history.push(rec);
    }
    let last = trainer.checkpoint();
    let (best_val_nll, best) = best.unwrap_or_else(|| (f64::INFINITY, last.clone()));
    Ok(LoopOutcome {
        best,
        best_val_nll,
        last,
        history,
    })
}
