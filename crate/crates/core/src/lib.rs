//! Fine-grained controllable story generation.
//!
//! Each sentence of a story is generated from the story so far plus a
//! *Chae*: one control condition per character giving the name, zero or
//! more action phrases, and an emotion. A small encoder-decoder transformer
//! reads `<s> context chae </s>`, mixes its vocabulary distribution with a
//! copy distribution over the Chae tokens, and is trained with an extra
//! per-character emotion classification loss.

pub mod codec;
pub mod tensor;
pub mod model;
pub mod corpus;
pub mod training;
pub mod decoding;
pub mod eval;
