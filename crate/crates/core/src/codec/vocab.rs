use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::special::{self, PAD_NAME, RESERVED, UNK_ID};
use super::{CodecError, EmotionLabel};

/// Bijective token/id map. Ids `0..10` are the reserved tokens in
/// [`special::RESERVED`] order, followed by the nine emotion labels and the
/// padding surrogate name, then corpus words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::base()
    }
}

impl Vocabulary {
    /// Reserved tokens, emotion labels and the padding name only.
    pub fn base() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED {
            v.insert(t);
        }
        for e in EmotionLabel::ALL {
            v.insert(e.as_str());
        }
        v.insert(PAD_NAME);
        v
    }

    /// Base vocabulary plus every token seen at least `min_count` times,
    /// ordered by descending frequency then lexicographically.
    pub fn build<I, S>(tokens: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t.as_ref().to_string()).or_default() += 1;
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut v = Self::base();
        for (w, _) in words {
            v.insert(&w);
        }
        v
    }

    /// Adds `token` if absent and returns its id.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or the `<unk>` id.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(special::UNK).to_string())
            .collect()
    }

    /// First eight bytes of SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CodecError> {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for (line_no, line) in text.lines().enumerate() {
            if line.is_empty() || line.chars().any(char::is_whitespace) {
                return Err(CodecError::Vocab(format!(
                    "line {}: token must be non-empty and contain no whitespace",
                    line_no + 1
                )));
            }
            if v.index.contains_key(line) {
                return Err(CodecError::Vocab(format!(
                    "line {}: duplicate token {line:?}",
                    line_no + 1
                )));
            }
            v.insert(line);
        }
        for (id, r) in RESERVED.iter().enumerate() {
            if v.token(id) != Some(*r) {
                return Err(CodecError::Vocab(format!(
                    "reserved token {r:?} must have id {id}"
                )));
            }
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<(), CodecError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CodecError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}
