use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("{message}")]
    BadRequest { message: String, position: Option<usize> },
    #[error("{0}")]
    Conflict(String),
    #[error("model not loaded")]
    Unavailable,
    #[error("{0}")]
    Internal(String),
}

/// Wire form of every error: `{code, message, position?}`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub position: Option<usize>,
}

impl ServiceError {
    pub fn bad(message: impl Into<String>) -> Self {
        Self::BadRequest {
            message: message.into(),
            position: None,
        }
    }

    pub fn bad_at(message: impl Into<String>, position: usize) -> Self {
        Self::BadRequest {
            message: message.into(),
            position: Some(position),
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            Self::NotFound(_) => 404,
            Self::BadRequest { .. } => 400,
            Self::Conflict(_) => 409,
            Self::Unavailable => 503,
            Self::Internal(_) => 500,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Self::NotFound(_) => "not_found",
            Self::BadRequest { .. } => "bad_request",
            Self::Conflict(_) => "conflict",
            Self::Unavailable => "unavailable",
            Self::Internal(_) => "internal",
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
            position: match self {
                Self::BadRequest { position, .. } => *position,
                _ => None,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, ServiceError>;
