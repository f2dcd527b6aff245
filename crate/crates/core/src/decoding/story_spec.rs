use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DecodeError, Result};
use crate::codec::{pad_conditions, ChaeCondition, ChaeSpec};

/// A beginning plus the conditions for each sentence to generate.
///
/// ```json
/// {"beginning": "A polite thief was making robberies in the small town.",
///  "chae": [[{"char": "People", "actions": [], "emotion": "fear"},
///            {"char": "Tom", "actions": ["to catch the thief"], "emotion": "anger"}]]}
/// ```
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorySpec {
    pub beginning: String,
    pub chae: Vec<Vec<ChaeCondition>>,
}

impl StorySpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| DecodeError::Spec(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DecodeError::Spec(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("story spec serializes")
    }

    /// One padded spec per sentence.
    pub fn specs(&self, k: usize) -> Result<Vec<ChaeSpec>> {
        if self.chae.is_empty() {
            return Err(DecodeError::NoSpecs);
        }
        self.chae
            .iter()
            .enumerate()
            .map(|(i, c)| pad_conditions(c.clone(), k).map_err(|e| DecodeError::Spec(format!("sentence {}: {e}", i + 1))))
            .collect()
    }
}
