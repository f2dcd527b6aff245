use chae::codec::{detokenize, ChaeCondition, ChaeSpec, EmotionLabel};
use chae::decoding::{DecodingConfig, GenerationResult, StorySpec};
use serde::{Deserialize, Serialize};

/// One emotion head's reading of a generated sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadEmotion {
    pub char: String,
    pub active: bool,
    pub label: EmotionLabel,
    pub probs: Vec<f64>,
}

/// What a step returns: the sentence and its diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Position of this sentence in the session history.
    pub index: usize,
    pub sentence: String,
    pub tokens: Vec<String>,
    pub p_gen_trace: Vec<f64>,
    pub emotions: Vec<HeadEmotion>,
    pub token_probs: Vec<f64>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub chae: ChaeSpec,
    pub tokens: Vec<String>,
    pub result: GenerationResult,
}

/// Read-only snapshot of a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: String,
    pub beginning: String,
    pub sentences: Vec<String>,
    pub history: Vec<TranscriptEntry>,
    /// Detokenized running context.
    pub context: String,
    pub config: DecodingConfig,
    pub created_at_ms: u64,
    pub last_used_at_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    /// The requested conditions, padding excluded.
    pub chae: Vec<ChaeCondition>,
    pub outcome: StepOutcome,
}

impl Transcript {
    /// The story-spec form accepted by `chae generate`.
    pub fn story_spec(&self) -> StorySpec {
        StorySpec {
            beginning: self.beginning.clone(),
            chae: self.history.iter().map(|e| e.chae.clone()).collect(),
        }
    }

    /// The context as it should be: beginning plus every sentence in order.
    pub fn expected_context(&self) -> String {
        std::iter::once(self.beginning.as_str())
            .chain(self.sentences.iter().map(String::as_str))
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug)]
pub(crate) struct Session {
    pub id: String,
    pub beginning: Vec<String>,
    pub context: Vec<String>,
    pub history: Vec<HistoryEntry>,
    pub config: DecodingConfig,
    pub created_at_ms: u64,
    pub last_used_at_ms: u64,
    pub closed: bool,
}

impl Session {
    pub fn new(id: String, beginning: Vec<String>, config: DecodingConfig, now: u64) -> Self {
        Self {
            id,
            context: beginning.clone(),
            beginning,
            history: Vec::new(),
            config,
            created_at_ms: now,
            last_used_at_ms: now,
            closed: false,
        }
    }

    pub fn push(&mut self, entry: HistoryEntry) {
        self.context.extend(entry.tokens.iter().cloned());
        self.history.push(entry);
    }

    pub fn pop(&mut self) -> Option<HistoryEntry> {
        let last = self.history.pop()?;
        self.context.truncate(self.context.len() - last.tokens.len());
        Some(last)
    }

    pub fn transcript(&self) -> Transcript {
        Transcript {
            id: self.id.clone(),
            beginning: detokenize(&self.beginning),
            sentences: self.history.iter().map(|e| detokenize(&e.tokens)).collect(),
            history: self
                .history
                .iter()
                .enumerate()
                .map(|(i, e)| TranscriptEntry {
                    chae: e.chae.active_conditions().map(|(_, c)| c.clone()).collect(),
                    outcome: outcome(i, e),
                })
                .collect(),
            context: detokenize(&self.context),
            config: self.config.clone(),
            created_at_ms: self.created_at_ms,
            last_used_at_ms: self.last_used_at_ms,
        }
    }
}

pub(crate) fn outcome(index: usize, e: &HistoryEntry) -> StepOutcome {
    let emotions = e
        .result
        .emotions
        .iter()
        .zip(e.chae.conditions().iter().zip(e.chae.active()))
        .map(|(probs, (c, &active))| {
            let best = (0..probs.len()).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
            HeadEmotion {
                char: c.name.clone(),
                active,
                label: EmotionLabel::from_id(best).unwrap_or(EmotionLabel::Neutral),
                probs: probs.clone(),
            }
        })
        .collect();
    StepOutcome {
        index,
        sentence: detokenize(&e.tokens),
        tokens: e.tokens.clone(),
        p_gen_trace: e.result.p_gen.clone(),
        emotions,
        token_probs: e.result.token_probs.clone(),
        score: e.result.score,
    }
}
