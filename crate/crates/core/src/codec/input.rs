use std::ops::Range;

use super::chae::{serialize_condition, ChaeSpec};
use super::special::{BOS_ID, EOS_ID};
use super::{CodecError, Vocabulary};

/// Encoder input: `<s> context chae </s>` with the Chae segment marked.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelInput {
    pub ids: Vec<usize>,
    /// True exactly over serialized-condition positions.
    pub chae_mask: Vec<bool>,
    /// Token range of each condition, in spec order.
    pub condition_spans: Vec<Range<usize>>,
}

impl ModelInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids on Chae positions, `None` elsewhere. Lines the copy distribution
    /// up with vocabulary space.
    pub fn copy_targets(&self) -> Vec<Option<usize>> {
        self.ids
            .iter()
            .zip(&self.chae_mask)
            .map(|(&id, &m)| m.then_some(id))
            .collect()
    }
}

pub fn assemble_input<S: AsRef<str>>(
    context: &[S],
    chae: &ChaeSpec,
    vocab: &Vocabulary,
) -> Result<ModelInput, CodecError> {
    if context.is_empty() {
        return Err(CodecError::EmptyContext);
    }
    if chae.is_empty() {
        return Err(CodecError::Invalid("Chae must hold at least one condition".into()));
    }
    let mut ids = Vec::with_capacity(context.len() + 16 * chae.len() + 2);
    ids.push(BOS_ID);
    ids.extend(vocab.encode(context));
    let mut chae_mask = vec![false; ids.len()];
    let mut condition_spans = Vec::with_capacity(chae.len());
    for cond in chae.conditions() {
        let toks = serialize_condition(cond)?;
        let start = ids.len();
        ids.extend(vocab.encode(&toks));
        chae_mask.resize(ids.len(), true);
        condition_spans.push(start..ids.len());
    }
    ids.push(EOS_ID);
    chae_mask.push(false);
    Ok(ModelInput {
        ids,
        chae_mask,
        condition_spans,
    })
}

/// Like [`assemble_input`], but drops the oldest context tokens until the
/// whole input fits in `max_len`. Returns the input and the number of
/// context tokens dropped.
pub fn assemble_input_within<S: AsRef<str>>(
    context: &[S],
    chae: &ChaeSpec,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<(ModelInput, usize), CodecError> {
    let mut chae_len = 0;
    for cond in chae.conditions() {
        chae_len += serialize_condition(cond)?.len();
    }
    let room = max_len.saturating_sub(chae_len + 2);
    if room == 0 && !context.is_empty() {
        return Err(CodecError::Invalid(format!(
            "Chae of {chae_len} tokens leaves no room for context within {max_len}"
        )));
    }
    let dropped = context.len().saturating_sub(room);
    Ok((assemble_input(&context[dropped..], chae, vocab)?, dropped))
}
