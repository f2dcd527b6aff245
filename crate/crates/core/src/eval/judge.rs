use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{character_segment, EvalError, Result};
use crate::codec::{tokenize, EmotionLabel, Vocabulary};
use crate::corpus::{resolve_emotions, AnnotatedStory};

const E: usize = EmotionLabel::COUNT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            epochs: 30,
            lr: 0.5,
            seed: 0,
        }
    }
}

/// Mean of word embeddings followed by a linear layer over the nine
/// emotions. Classes absent from training are never predicted.
#[derive(Clone, Debug, PartialEq)]
pub struct EmotionJudge {
    vocab: Vocabulary,
    dim: usize,
    emb: Vec<f64>,
    w: Vec<f64>,
    b: [f64; E],
    present: [bool; E],
}

#[derive(Serialize, Deserialize)]
struct JudgeFile {
    vocab_hash: u64,
    tokens: Vec<String>,
    dim: usize,
    emb: Vec<f64>,
    w: Vec<f64>,
    b: Vec<f64>,
    excluded: Vec<EmotionLabel>,
}

impl EmotionJudge {
    pub fn vocab_hash(&self) -> u64 {
        self.vocab.hash()
    }

    /// Classes with no training examples.
    pub fn excluded(&self) -> Vec<EmotionLabel> {
        EmotionLabel::ALL.into_iter().filter(|e| !self.present[e.id()]).collect()
    }

    fn features<S: AsRef<str>>(&self, tokens: &[S]) -> (Vec<usize>, Vec<f64>) {
        let ids: Vec<usize> = tokens.iter().filter_map(|t| self.vocab.get(t.as_ref())).collect();
        let mut x = vec![0.0; self.dim];
        for &i in &ids {
            for (xj, ej) in x.iter_mut().zip(&self.emb[i * self.dim..(i + 1) * self.dim]) {
                *xj += ej / ids.len() as f64;
            }
        }
        (ids, x)
    }

    fn logits(&self, x: &[f64]) -> [f64; E] {
        let mut z = self.b;
        for (j, xj) in x.iter().enumerate() {
            for (e, ze) in z.iter_mut().enumerate() {
                *ze += xj * self.w[j * E + e];
            }
        }
        for (e, ze) in z.iter_mut().enumerate() {
            if !self.present[e] {
                *ze = f64::NEG_INFINITY;
            }
        }
        z
    }

    pub fn probs<S: AsRef<str>>(&self, tokens: &[S]) -> [f64; E] {
        let (_, x) = self.features(tokens);
        softmax(&self.logits(&x))
    }

    /// Most probable label; ties go to the lower id.
    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> EmotionLabel {
        let p = self.probs(tokens);
        let mut best = 0;
        for e in 1..E {
            if p[e] > p[best] {
                best = e;
            }
        }
        EmotionLabel::from_id(best).expect("label id")
    }

    pub fn accuracy(&self, examples: &[(Vec<String>, EmotionLabel)]) -> Result<f64> {
        if examples.is_empty() {
            return Err(EvalError::Empty("judge examples"));
        }
        let hit = examples.iter().filter(|(t, l)| self.predict(t) == *l).count();
        Ok(hit as f64 / examples.len() as f64)
    }

    pub fn to_json(&self) -> String {
        let file = JudgeFile {
            vocab_hash: self.vocab.hash(),
            tokens: self.vocab.tokens().to_vec(),
            dim: self.dim,
            emb: self.emb.clone(),
            w: self.w.clone(),
            b: self.b.to_vec(),
            excluded: self.excluded(),
        };
        serde_json::to_string(&file).expect("judge serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: JudgeFile = serde_json::from_str(text).map_err(|e| EvalError::Judge(e.to_string()))?;
        let vocab = Vocabulary::from_text(&(f.tokens.join("\n") + "\n"))?;
        if vocab.hash() != f.vocab_hash {
            return Err(EvalError::Judge("vocabulary hash mismatch".into()));
        }
        if f.emb.len() != vocab.len() * f.dim || f.w.len() != f.dim * E || f.b.len() != E {
            return Err(EvalError::Judge("parameter shapes do not match".into()));
        }
        let mut present = [true; E];
        for e in f.excluded {
            present[e.id()] = false;
        }
        Ok(Self {
            vocab,
            dim: f.dim,
            emb: f.emb,
            w: f.w,
            b: f.b.try_into().expect("nine biases"),
            present,
        })
    }
}

fn softmax(z: &[f64; E]) -> [f64; E] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; E];
    let mut s = 0.0;
    for (pe, ze) in p.iter_mut().zip(z) {
        *pe = (ze - m).exp();
        s += *pe;
    }
    for pe in &mut p {
        *pe /= s;
    }
    p
}

/// Plain SGD on cross-entropy, one example at a time in seeded order.
pub fn train_judge(examples: &[(Vec<String>, EmotionLabel)], config: &JudgeConfig) -> Result<EmotionJudge> {
    if examples.is_empty() {
        return Err(EvalError::Empty("judge examples"));
    }
    let mut present = [false; E];
    for (_, l) in examples {
        present[l.id()] = true;
    }
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(EvalError::Judge("training data covers a single class".into()));
    }
    if config.dim == 0 || !(config.lr > 0.0) {
        return Err(EvalError::Judge("dim and lr must be positive".into()));
    }
    let vocab = Vocabulary::build(examples.iter().flat_map(|(t, _)| t.iter()), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.dim;
    let mut judge = EmotionJudge {
        emb: (0..vocab.len() * d).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        w: (0..d * E).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        b: [0.0; E],
        present,
        vocab,
        dim: d,
    };
    for (e, p) in present.iter().enumerate() {
        if !p {
            log::warn!("judge: no examples for {}, class excluded", EmotionLabel::from_id(e).expect("id"));
        }
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (tokens, label) = &examples[i];
            let (ids, x) = judge.features(tokens);
            let mut g = softmax(&judge.logits(&x));
            g[label.id()] -= 1.0;
            let mut gx = vec![0.0; d];
            for j in 0..d {
                for e in 0..E {
                    gx[j] += judge.w[j * E + e] * g[e];
                    judge.w[j * E + e] -= config.lr * x[j] * g[e];
                }
            }
            for e in 0..E {
                judge.b[e] -= config.lr * g[e];
            }
            for &t in &ids {
                for j in 0..d {
                    judge.emb[t * d + j] -= config.lr * gx[j] / ids.len() as f64;
                }
            }
        }
    }
    Ok(judge)
}

/// Every annotated character's segment of its sentence, labeled with the
/// resolved emotion.
pub fn judge_examples(stories: &[AnnotatedStory], tau: f64) -> Vec<(Vec<String>, EmotionLabel)> {
    let mut out = Vec::new();
    for story in stories {
        for (sentence, chars) in story.sentences.iter().zip(&story.annotations) {
            let tokens = tokenize(sentence);
            let names: Vec<&str> = chars.iter().map(|c| c.name.as_str()).collect();
            for c in chars {
                let seg = character_segment(&tokens, &c.name, &names).unwrap_or(&tokens);
                out.push((seg.to_vec(), resolve_emotions(&c.emotion_votes, tau)));
            }
        }
    }
    out
}
