//! Perplexity, BLEU-n, Distinct-n and judge-based emotion accuracy.

mod judge;

pub use judge::{judge_examples, train_judge, EmotionJudge, JudgeConfig};

use std::collections::HashMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{tokenize, CodecError, EmotionLabel, Vocabulary};
use crate::decoding::{generate_sentence, DecodeError, DecodingConfig};
use crate::model::Model;
use crate::training::{encode_all, score, EncodedExample, TrainError, TrainExample};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("{candidates} candidates but {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
    #[error("judge: {0}")]
    Judge(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// `exp` of the token-level mean teacher-forced NLL over `data`.
pub fn perplexity(model: &Model, data: &[EncodedExample]) -> Result<f64> {
    if data.is_empty() {
        return Err(EvalError::Empty("test set"));
    }
    let (nll, tokens) = score(model, data)?;
    if tokens == 0 {
        return Err(EvalError::Empty("test targets"));
    }
    Ok((nll / tokens as f64).exp())
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
        }
    }
    m
}

/// Corpus-level BLEU in `[0, 100]`: geometric mean of clipped 1..=n-gram
/// precisions times the brevity penalty. An order with no matches is
/// smoothed to `1 / (total + 1)`.
pub fn bleu_n<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(EvalError::ZeroOrder);
    }
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    let c_len: usize = candidates.iter().map(Vec::len).sum();
    let r_len: usize = references.iter().map(Vec::len).sum();
    if c_len == 0 {
        return Ok(0.0);
    }
    let mut log_p = 0.0;
    for order in 1..=n {
        let (mut matched, mut total) = (0usize, 0usize);
        for (c, r) in candidates.iter().zip(references) {
            let rc = ngram_counts(r, order);
            for (g, cnt) in ngram_counts(c, order) {
                matched += cnt.min(rc.get(&g).copied().unwrap_or(0));
                total += cnt;
            }
        }
        let p = if matched == 0 {
            1.0 / (total as f64 + 1.0)
        } else {
            matched as f64 / total as f64
        };
        log_p += p.ln() / n as f64;
    }
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    Ok(100.0 * bp * log_p.exp())
}

/// Unique n-grams over all n-grams across the whole candidate set.
pub fn distinct_n<S: AsRef<str>>(candidates: &[Vec<S>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(EvalError::ZeroOrder);
    }
    let mut seen: HashMap<Vec<&str>, usize> = HashMap::new();
    let mut total = 0usize;
    for c in candidates {
        for (g, cnt) in ngram_counts(c, n) {
            *seen.entry(g).or_default() += cnt;
            total += cnt;
        }
    }
    Ok(if total == 0 { 0.0 } else { seen.len() as f64 / total as f64 })
}

fn find(tokens: &[String], needle: &[String], from: usize) -> Option<usize> {
    if needle.is_empty() || tokens.len() < needle.len() {
        return None;
    }
    (from..=tokens.len() - needle.len()).find(|&i| tokens[i..i + needle.len()] == *needle)
}

/// Tokens from the first mention of `name` up to the next mention of any
/// name in `others`. `None` if `name` does not occur.
pub fn character_segment<'a>(tokens: &'a [String], name: &str, others: &[&str]) -> Option<&'a [String]> {
    let needle = tokenize(name);
    let start = find(tokens, &needle, 0)?;
    let after = start + needle.len();
    let end = others
        .iter()
        .map(|o| tokenize(o))
        .filter(|o| *o != needle)
        .filter_map(|o| find(tokens, &o, after))
        .min()
        .unwrap_or(tokens.len());
    Some(&tokens[start..end])
}

/// A generated sentence with the emotion requested for each active
/// character.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgedSentence {
    pub tokens: Vec<String>,
    pub targets: Vec<(String, EmotionLabel)>,
}

/// Fraction of (sentence, active condition) pairs whose judged emotion
/// matches the request. Each character is judged on its own segment, or
/// on the whole sentence when its name is absent.
pub fn emotion_accuracy(judge: &EmotionJudge, sentences: &[JudgedSentence]) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for s in sentences {
        let names: Vec<&str> = s.targets.iter().map(|(n, _)| n.as_str()).collect();
        for (name, want) in &s.targets {
            let seg = character_segment(&s.tokens, name, &names).unwrap_or(&s.tokens);
            total += 1;
            if judge.predict(seg) == *want {
                hit += 1;
            }
        }
    }
    if total == 0 {
        return Err(EvalError::Empty("active conditions"));
    }
    Ok(hit as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ppl: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub distinct1: f64,
    pub distinct2: f64,
    pub emotion_acc: f64,
    pub samples: usize,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8} {:>7} {:>7} {:>7} {:>7} {:>7}", "PPL", "B-1", "B-2", "D-1", "D-2", "ACC")?;
        writeln!(
            f,
            "{:>8.2} {:>7.2} {:>7.2} {:>7.3} {:>7.3} {:>7.3}",
            self.ppl, self.bleu1, self.bleu2, self.distinct1, self.distinct2, self.emotion_acc
        )?;
        write!(f, "({} samples)", self.samples)
    }
}

/// Scores `test` under teacher forcing, then generates each target from its
/// gold context and Chae and measures the generations.
pub fn evaluate(
    model: &Model,
    vocab: &Vocabulary,
    judge: &EmotionJudge,
    test: &[TrainExample],
    decoding: &DecodingConfig,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(EvalError::Empty("test set"));
    }
    let encoded = encode_all(test, vocab, model.config().max_len)?;
    let ppl = perplexity(model, &encoded)?;
    let mut rng = ChaCha8Rng::seed_from_u64(decoding.seed);
    let mut candidates = Vec::with_capacity(test.len());
    let mut references = Vec::with_capacity(test.len());
    let mut judged = Vec::with_capacity(test.len());
    for ex in test {
        let r = generate_sentence(model, vocab, &ex.context, &ex.chae, decoding, &mut rng)?;
        let words = vocab.decode(r.sentence());
        let reference: Vec<String> = ex.target.iter().filter(|t| *t != crate::codec::special::EOS).cloned().collect();
        let targets = ex
            .chae
            .conditions()
            .iter()
            .zip(&ex.emotions)
            .filter_map(|(c, e)| e.map(|e| (c.name.clone(), e)))
            .collect();
        judged.push(JudgedSentence {
            tokens: words.clone(),
            targets,
        });
        candidates.push(words);
        references.push(reference);
    }
    Ok(EvalReport {
        ppl,
        bleu1: bleu_n(&candidates, &references, 1)?,
        bleu2: bleu_n(&candidates, &references, 2)?,
        distinct1: distinct_n(&candidates, 1)?,
        distinct2: distinct_n(&candidates, 2)?,
        emotion_acc: emotion_accuracy(judge, &judged)?,
        samples: test.len(),
        config: serde_json::json!({ "decoding": decoding, "model": model.config() }),
    })
}
