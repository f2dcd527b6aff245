use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::special::{self, ACT_SEP, COND, NO_ACTION, PAD_NAME, SOA, SOC, SOE};
use super::tokenize::{detokenize, tokenize};
use super::CodecError;

/// Eight Plutchik emotions plus neutral, stored as ids `0..9`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Joy,
    Trust,
    Fear,
    Surprise,
    Sadness,
    Disgust,
    Anger,
    Anticipation,
    Neutral,
}

impl EmotionLabel {
    pub const COUNT: usize = 9;

    pub const ALL: [EmotionLabel; 9] = [
        EmotionLabel::Joy,
        EmotionLabel::Trust,
        EmotionLabel::Fear,
        EmotionLabel::Surprise,
        EmotionLabel::Sadness,
        EmotionLabel::Disgust,
        EmotionLabel::Anger,
        EmotionLabel::Anticipation,
        EmotionLabel::Neutral,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Joy => "joy",
            EmotionLabel::Trust => "trust",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Anticipation => "anticipation",
            EmotionLabel::Neutral => "neutral",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmotionLabel {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_lowercase();
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == lower)
            .ok_or_else(|| CodecError::UnknownEmotion(s.to_string()))
    }
}

/// One character's control condition: who, doing what, feeling what.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChaeCondition {
    #[serde(rename = "char")]
    pub name: String,
    #[serde(default)]
    pub actions: Vec<String>,
    pub emotion: EmotionLabel,
}

impl ChaeCondition {
    pub fn new(name: impl Into<String>, actions: Vec<String>, emotion: EmotionLabel) -> Self {
        Self {
            name: name.into(),
            actions,
            emotion,
        }
    }

    /// The inactive filler used to pad a spec up to `k` conditions.
    pub fn padding() -> Self {
        Self::new(PAD_NAME, Vec::new(), EmotionLabel::Neutral)
    }

    pub fn is_padding(&self) -> bool {
        self.name == PAD_NAME && self.actions.is_empty() && self.emotion == EmotionLabel::Neutral
    }

    /// Lowercased, re-tokenized copy; what a parse of its serialization yields.
    pub fn normalized(&self) -> Self {
        Self {
            name: detokenize(&tokenize(&self.name)),
            actions: self
                .actions
                .iter()
                .map(|a| detokenize(&tokenize(a)))
                .filter(|a| !a.is_empty())
                .collect(),
            emotion: self.emotion,
        }
    }
}

/// Ordered conditions for one sentence with a per-condition active flag.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChaeSpec {
    conditions: Vec<ChaeCondition>,
    active: Vec<bool>,
}

impl ChaeSpec {
    /// All conditions active.
    pub fn new(conditions: Vec<ChaeCondition>) -> Self {
        let active = vec![true; conditions.len()];
        Self { conditions, active }
    }

    pub fn with_flags(conditions: Vec<ChaeCondition>, active: Vec<bool>) -> Result<Self, CodecError> {
        if conditions.len() != active.len() {
            return Err(CodecError::Invalid(format!(
                "{} conditions but {} active flags",
                conditions.len(),
                active.len()
            )));
        }
        Ok(Self { conditions, active })
    }

    pub fn conditions(&self) -> &[ChaeCondition] {
        &self.conditions
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    /// Active conditions with their positions.
    pub fn active_conditions(&self) -> impl Iterator<Item = (usize, &ChaeCondition)> {
        self.conditions
            .iter()
            .enumerate()
            .filter(|(i, _)| self.active[*i])
    }

    pub fn normalized(&self) -> Self {
        Self {
            conditions: self.conditions.iter().map(ChaeCondition::normalized).collect(),
            active: self.active.clone(),
        }
    }

    pub fn condition_mut(&mut self, i: usize) -> Option<&mut ChaeCondition> {
        self.conditions.get_mut(i)
    }
}

/// `<SEP> <soc> name <soa> act (<sep> act)* <soe> emotion`, with
/// `<no_action>` standing in for an empty action list.
pub fn serialize_condition(cond: &ChaeCondition) -> Result<Vec<String>, CodecError> {
    let name = tokenize(&cond.name);
    if name.is_empty() {
        return Err(CodecError::EmptyName);
    }
    if let Some(t) = name.iter().find(|t| special::is_special(t)) {
        return Err(CodecError::Invalid(format!("name contains control token {t}")));
    }
    let mut out = vec![COND.to_string(), SOC.to_string()];
    out.extend(name);
    out.push(SOA.to_string());
    let actions: Vec<Vec<String>> = cond
        .actions
        .iter()
        .map(|a| tokenize(a))
        .filter(|a| !a.is_empty())
        .collect();
    if actions.is_empty() {
        out.push(NO_ACTION.to_string());
    } else {
        for (i, a) in actions.into_iter().enumerate() {
            if i > 0 {
                out.push(ACT_SEP.to_string());
            }
            out.extend(a);
        }
    }
    out.push(SOE.to_string());
    out.push(cond.emotion.as_str().to_string());
    Ok(out)
}

pub fn serialize_chae(spec: &ChaeSpec) -> Result<Vec<String>, CodecError> {
    let mut out = Vec::new();
    for c in &spec.conditions {
        out.extend(serialize_condition(c)?);
    }
    Ok(out)
}

/// Inverse of [`serialize_chae`]. A condition equal to the padding filler
/// parses as inactive.
pub fn parse_chae<S: AsRef<str>>(tokens: &[S]) -> Result<ChaeSpec, CodecError> {
    let toks: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let mut p = Parser { toks: &toks, pos: 0 };
    let mut conditions = Vec::new();
    if toks.is_empty() {
        return Err(p.error("expected <SEP>, found end of input"));
    }
    while p.pos < toks.len() {
        conditions.push(p.condition()?);
    }
    let active = conditions.iter().map(|c| !c.is_padding()).collect();
    Ok(ChaeSpec { conditions, active })
}

struct Parser<'a> {
    toks: &'a [&'a str],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> CodecError {
        CodecError::Parse {
            position: self.pos,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<&str> {
        self.toks.get(self.pos).copied()
    }

    fn describe(&self) -> String {
        match self.peek() {
            Some(t) => format!("found {t:?}"),
            None => "found end of input".to_string(),
        }
    }

    fn expect(&mut self, tok: &str) -> Result<(), CodecError> {
        if self.peek() == Some(tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected {tok}, {}", self.describe())))
        }
    }

    /// One or more plain words, stopping at any control token.
    fn words(&mut self, what: &str) -> Result<String, CodecError> {
        let start = self.pos;
        while let Some(t) = self.peek() {
            if special::is_special(t) {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.error(format!("expected {what}, {}", self.describe())));
        }
        Ok(self.toks[start..self.pos].join(" "))
    }

    fn condition(&mut self) -> Result<ChaeCondition, CodecError> {
        self.expect(COND)?;
        self.expect(SOC)?;
        let name = self.words("character name")?;
        self.expect(SOA)?;
        let mut actions = Vec::new();
        if self.peek() == Some(NO_ACTION) {
            self.pos += 1;
        } else {
            actions.push(self.words("action")?);
            while self.peek() == Some(ACT_SEP) {
                self.pos += 1;
                actions.push(self.words("action after <sep>")?);
            }
        }
        self.expect(SOE)?;
        let emotion = match self.peek() {
            Some(t) if !special::is_special(t) => t
                .parse::<EmotionLabel>()
                .map_err(|_| self.error(format!("unknown emotion {t:?}")))?,
            _ => return Err(self.error(format!("expected emotion, {}", self.describe()))),
        };
        self.pos += 1;
        if let Some(t) = self.peek() {
            if t != COND {
                return Err(self.error(format!(
                    "emotion must be a single token followed by <SEP> or end, found {t:?}"
                )));
            }
        }
        Ok(ChaeCondition {
            name,
            actions,
            emotion,
        })
    }
}

/// Appends inactive padding conditions until the spec holds `k`.
pub fn pad_conditions(conditions: Vec<ChaeCondition>, k: usize) -> Result<ChaeSpec, CodecError> {
    if conditions.is_empty() {
        return Err(CodecError::Invalid("at least one condition is required".into()));
    }
    if conditions.len() > k {
        return Err(CodecError::TooManyConditions {
            got: conditions.len(),
            k,
        });
    }
    let mut active = vec![true; conditions.len()];
    let mut conditions = conditions;
    while conditions.len() < k {
        conditions.push(ChaeCondition::padding());
        active.push(false);
    }
    Ok(ChaeSpec { conditions, active })
}

impl ChaeSpec {
    /// Pads this spec (keeping existing flags) up to `k` conditions.
    pub fn padded(mut self, k: usize) -> Result<Self, CodecError> {
        if self.conditions.len() > k {
            return Err(CodecError::TooManyConditions {
                got: self.conditions.len(),
                k,
            });
        }
        while self.conditions.len() < k {
            self.conditions.push(ChaeCondition::padding());
            self.active.push(false);
        }
        Ok(self)
    }
}
