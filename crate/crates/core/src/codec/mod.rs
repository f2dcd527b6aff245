//! Tokenizer, vocabulary, the Chae control-condition grammar and assembly
//! of the encoder input.

mod chae;
mod input;
pub mod special;
mod tokenize;
mod vocab;

pub use chae::{
    pad_conditions, parse_chae, serialize_chae, serialize_condition, ChaeCondition, ChaeSpec,
    EmotionLabel,
};
pub use input::{assemble_input, assemble_input_within, ModelInput};
pub use tokenize::{detokenize, tokenize, tokenize_with_specials};
pub use vocab::Vocabulary;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("character name is empty")]
    EmptyName,
    #[error("parse error at token {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("unknown emotion {0:?}")]
    UnknownEmotion(String),
    #[error("{got} conditions exceed k = {k}")]
    TooManyConditions { got: usize, k: usize },
    #[error("context is empty")]
    EmptyContext,
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("{0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for CodecError {
    fn from(e: std::io::Error) -> Self {
        CodecError::Io(e.to_string())
    }
}
