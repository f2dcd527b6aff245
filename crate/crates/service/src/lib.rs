//! HTTP session service for human-steered, sentence-by-sentence story
//! generation.

mod error;
mod http;
mod session;
mod store;

pub use error::{ErrorBody, Result, ServiceError};
pub use http::{router, serve, ChaeEcho, ChaePayload, CreateRequest, CreateResponse, StepRequest};
pub use session::{HeadEmotion, HistoryEntry, StepOutcome, Transcript, TranscriptEntry};
pub use store::{parse_chae_text, Engine, SessionStore, StoreConfig};
