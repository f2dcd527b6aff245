//! Annotated story corpus: JSON-lines interchange, vote resolution,
//! story-level splitting, statistics and a synthetic template corpus.

mod synth;

pub use synth::{emotion_keyword, keyword_emotion, probe_names, synth_corpus, training_names};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{tokenize, EmotionLabel, Vocabulary};
use crate::training::{make_sentence_pairs, TrainExample};

/// Confidence below which the winning vote falls back to neutral.
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("corpus is empty")]
    Empty,
    #[error("invalid split ratios {0:?}: must be non-negative and sum to 1")]
    Ratios([f64; 3]),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmotionVote {
    pub label: EmotionLabel,
    pub conf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacterAnnotation {
    #[serde(rename = "char")]
    pub name: String,
    #[serde(default)]
    pub actions: Vec<String>,
    #[serde(default)]
    pub emotion_votes: Vec<EmotionVote>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedStory {
    pub id: String,
    pub sentences: Vec<String>,
    /// One list of character annotations per sentence.
    #[serde(default)]
    pub annotations: Vec<Vec<CharacterAnnotation>>,
}

impl AnnotatedStory {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("story id is empty".into());
        }
        if self.sentences.is_empty() {
            return Err(format!("story {:?} has no sentences", self.id));
        }
        if self.annotations.len() > self.sentences.len() {
            return Err(format!(
                "story {:?}: {} annotation lists for {} sentences",
                self.id,
                self.annotations.len(),
                self.sentences.len()
            ));
        }
        for (s, chars) in self.annotations.iter().enumerate() {
            for c in chars {
                if tokenize(&c.name).is_empty() {
                    return Err(format!("story {:?} sentence {s}: empty character name", self.id));
                }
                if let Some(v) = c.emotion_votes.iter().find(|v| !(0.0..=1.0).contains(&v.conf)) {
                    return Err(format!(
                        "story {:?} sentence {s}: confidence {} outside [0, 1]",
                        self.id, v.conf
                    ));
                }
            }
        }
        Ok(())
    }

    /// Distinct character names over all sentences.
    pub fn characters(&self) -> BTreeSet<String> {
        self.annotations
            .iter()
            .flatten()
            .map(|c| tokenize(&c.name).join(" "))
            .collect()
    }
}

/// Parses JSON-lines text; blank lines are skipped, line numbers are 1-based.
pub fn parse_corpus(text: &str) -> Result<Vec<AnnotatedStory>> {
    parse_lines(text.lines().map(|l| Ok(l.to_string())))
}

pub fn load_corpus(path: &Path) -> Result<Vec<AnnotatedStory>> {
    let file = std::fs::File::open(path)?;
    parse_lines(BufReader::new(file).lines())
}

fn parse_lines<I>(lines: I) -> Result<Vec<AnnotatedStory>>
where
    I: Iterator<Item = std::io::Result<String>>,
{
    let mut stories = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| CorpusError::Line { line: i + 1, message };
        let story: AnnotatedStory = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        story.validate().map_err(fail)?;
        stories.push(story);
    }
    Ok(stories)
}

pub fn write_corpus(stories: &[AnnotatedStory], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in stories {
        serde_json::to_writer(&mut out, s).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Label with the largest summed confidence; ties go to the lower label id.
/// If no single vote for the winner reaches `tau`, the result is neutral.
pub fn resolve_emotions(votes: &[EmotionVote], tau: f64) -> EmotionLabel {
    let mut sorted = votes.to_vec();
    sorted.sort_by(|a, b| a.label.id().cmp(&b.label.id()).then(a.conf.total_cmp(&b.conf)));
    let mut sum = [0.0f64; EmotionLabel::COUNT];
    let mut best = [f64::NEG_INFINITY; EmotionLabel::COUNT];
    for v in &sorted {
        sum[v.label.id()] += v.conf;
        best[v.label.id()] = best[v.label.id()].max(v.conf);
    }
    let mut winner: Option<usize> = None;
    for e in 0..EmotionLabel::COUNT {
        if best[e] == f64::NEG_INFINITY {
            continue;
        }
        if winner.map_or(true, |w| sum[e] > sum[w]) {
            winner = Some(e);
        }
    }
    match winner {
        Some(w) if best[w] >= tau => EmotionLabel::from_id(w).expect("label id"),
        _ => EmotionLabel::Neutral,
    }
}

/// Vocabulary over story text, names and action phrases, plus `extra`.
pub fn corpus_vocabulary(stories: &[AnnotatedStory], extra: &[&str], min_count: usize) -> Vocabulary {
    let mut tokens = Vec::new();
    for story in stories {
        for s in &story.sentences {
            tokens.extend(tokenize(s));
        }
        for c in story.annotations.iter().flatten() {
            tokens.extend(tokenize(&c.name));
            for a in &c.actions {
                tokens.extend(tokenize(a));
            }
        }
    }
    let mut vocab = Vocabulary::build(tokens, min_count);
    for e in extra {
        for t in tokenize(e) {
            vocab.insert(&t);
        }
    }
    vocab
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<TrainExample>,
    pub val: Vec<TrainExample>,
    pub test: Vec<TrainExample>,
    /// Story ids per split, in shuffled order.
    pub story_ids: [Vec<String>; 3],
}

/// Shuffles stories with `seed`, cuts them by `ratios` (train, val, test)
/// and expands each part into sentence pairs.
pub fn split_pairs(
    stories: &[AnnotatedStory],
    ratios: [f64; 3],
    seed: u64,
    k: usize,
    tau: f64,
) -> Result<Splits> {
    if stories.is_empty() {
        return Err(CorpusError::Empty);
    }
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::Ratios(ratios));
    }
    let mut order: Vec<usize> = (0..stories.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = stories.len() as f64;
    let n_train = (n * ratios[0]).round() as usize;
    let n_val = ((n * ratios[1]).round() as usize).min(stories.len() - n_train);
    let parts = [
        &order[..n_train],
        &order[n_train..n_train + n_val],
        &order[n_train + n_val..],
    ];
    let mut splits = Splits::default();
    for (p, idx) in parts.iter().enumerate() {
        let mut pairs = Vec::new();
        for &i in idx.iter() {
            pairs.extend(make_sentence_pairs(&stories[i], k, tau));
            splits.story_ids[p].push(stories[i].id.clone());
        }
        match p {
            0 => splits.train = pairs,
            1 => splits.val = pairs,
            _ => splits.test = pairs,
        }
    }
    Ok(splits)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub stories: usize,
    pub sentences: usize,
    pub annotated_characters: usize,
    /// Resolved labels, indexed by emotion id.
    pub emotion_histogram: [usize; EmotionLabel::COUNT],
    /// Distinct characters per story -> number of stories.
    pub character_histogram: BTreeMap<usize, usize>,
    pub sentence_pairs: usize,
    /// Pairs in train / val / test, when splits were supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_pairs: Option<[usize; 3]>,
}

pub fn stats(stories: &[AnnotatedStory], k: usize, tau: f64) -> Result<CorpusStats> {
    if stories.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut st = CorpusStats {
        stories: stories.len(),
        sentences: 0,
        annotated_characters: 0,
        emotion_histogram: [0; EmotionLabel::COUNT],
        character_histogram: BTreeMap::new(),
        sentence_pairs: 0,
        split_pairs: None,
    };
    for story in stories {
        st.sentences += story.sentences.len();
        for c in story.annotations.iter().flatten() {
            st.annotated_characters += 1;
            st.emotion_histogram[resolve_emotions(&c.emotion_votes, tau).id()] += 1;
        }
        *st.character_histogram.entry(story.characters().len()).or_default() += 1;
        st.sentence_pairs += make_sentence_pairs(story, k, tau).len();
    }
    Ok(st)
}

impl CorpusStats {
    pub fn with_splits(mut self, splits: &Splits) -> Self {
        self.split_pairs = Some([splits.train.len(), splits.val.len(), splits.test.len()]);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "stories        {}", self.stories)?;
        writeln!(f, "sentences      {}", self.sentences)?;
        writeln!(f, "characters     {}", self.annotated_characters)?;
        writeln!(f, "sentence pairs {}", self.sentence_pairs)?;
        if let Some([a, b, c]) = self.split_pairs {
            writeln!(f, "split pairs    {a} / {b} / {c}")?;
        }
        writeln!(f, "\nemotion")?;
        let total: usize = self.emotion_histogram.iter().sum();
        for e in EmotionLabel::ALL {
            let n = self.emotion_histogram[e.id()];
            let pct = if total == 0 { 0.0 } else { 100.0 * n as f64 / total as f64 };
            writeln!(f, "  {:<13}{n:>7}  {pct:5.1}%", e.as_str())?;
        }
        writeln!(f, "\ncharacters per story")?;
        for (c, n) in &self.character_histogram {
            writeln!(f, "  {c:<13}{n:>7}")?;
        }
        Ok(())
    }
}
