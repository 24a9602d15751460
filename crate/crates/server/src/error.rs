use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use genquery_core::concretize::ConcretizeError;
use genquery_core::corpus::CorpusError;
use genquery_core::keywords::KeywordError;
use genquery_core::llm::LlmError;
use genquery_core::modify::ModifyError;
use genquery_core::retrieval::RetrievalError;
use genquery_core::session::SessionError;

/// Error body: `{"error": {"code": ..., "message": ...}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::warn!(code = self.code, message = %self.message, "request failed");
        }
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<RetrievalError> for ApiError {
    fn from(e: RetrievalError) -> Self {
        let (status, code) = match &e {
            RetrievalError::ProviderUnavailable(_) => {
                (StatusCode::BAD_GATEWAY, "embedding_unavailable")
            }
            RetrievalError::EmptyIndex => (StatusCode::SERVICE_UNAVAILABLE, "empty_index"),
            RetrievalError::InvalidK => (StatusCode::BAD_REQUEST, "invalid_k"),
            RetrievalError::UnknownImage(_) => (StatusCode::NOT_FOUND, "unknown_image"),
            RetrievalError::UnknownToken(_) => (StatusCode::NOT_FOUND, "unknown_token"),
            RetrievalError::DuplicateId(_) => (StatusCode::CONFLICT, "duplicate_id"),
            RetrievalError::DimensionMismatch { .. } => {
                (StatusCode::INTERNAL_SERVER_ERROR, "dimension_mismatch")
            }
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<LlmError> for ApiError {
    fn from(e: LlmError) -> Self {
        let (status, code) = match &e {
            LlmError::ProviderUnavailable(_) => (StatusCode::BAD_GATEWAY, "llm_unavailable"),
            LlmError::DeadlineExceeded(_) => (StatusCode::GATEWAY_TIMEOUT, "llm_deadline"),
            LlmError::NoJsonFound | LlmError::SchemaViolation(_) => {
                (StatusCode::BAD_GATEWAY, "schema_violation")
            }
            LlmError::MissingBinding(_) => (StatusCode::INTERNAL_SERVER_ERROR, "template"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<ConcretizeError> for ApiError {
    fn from(e: ConcretizeError) -> Self {
        match e {
            ConcretizeError::EmptyQuery => {
                Self::new(StatusCode::BAD_REQUEST, "empty_query", e.to_string())
            }
            ConcretizeError::Llm(e) => e.into(),
            ConcretizeError::Retrieval(e) => e.into(),
        }
    }
}

impl From<CorpusError> for ApiError {
    fn from(e: CorpusError) -> Self {
        match &e {
            CorpusError::NotFound(_) => {
                Self::new(StatusCode::NOT_FOUND, "unknown_image", e.to_string())
            }
            CorpusError::PixelsUnavailable { .. } => {
                Self::new(StatusCode::NOT_FOUND, "pixels_unavailable", e.to_string())
            }
            _ => Self::internal(e.to_string()),
        }
    }
}

impl From<KeywordError> for ApiError {
    fn from(e: KeywordError) -> Self {
        match e {
            KeywordError::UnknownSession(_) => {
                Self::new(StatusCode::NOT_FOUND, "unknown_session", e.to_string())
            }
            KeywordError::UnknownImage(_) => {
                Self::new(StatusCode::NOT_FOUND, "unknown_image", e.to_string())
            }
            KeywordError::Session(e) => e.into(),
            KeywordError::Corpus(e) => e.into(),
            KeywordError::Llm(e) => e.into(),
        }
    }
}

impl From<ModifyError> for ApiError {
    fn from(e: ModifyError) -> Self {
        let (status, code) = match e {
            ModifyError::Embedding(e) => return e.into(),
            ModifyError::Corpus(e) => return e.into(),
            ModifyError::UnknownImage(_) => (StatusCode::NOT_FOUND, "unknown_image"),
            ModifyError::UnknownMask(_) => (StatusCode::NOT_FOUND, "unknown_mask"),
            ModifyError::UnknownSegment(_) => (StatusCode::NOT_FOUND, "unknown_segment"),
            ModifyError::EmptySelection => (StatusCode::BAD_REQUEST, "empty_selection"),
            ModifyError::EmptyKeywords => (StatusCode::BAD_REQUEST, "empty_keywords"),
            ModifyError::MaskMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "mask_mismatch"),
            ModifyError::ProviderUnavailable(_) => {
                (StatusCode::BAD_GATEWAY, "segmentation_unavailable")
            }
            ModifyError::BackendUnavailable(_) => (StatusCode::BAD_GATEWAY, "backend_unavailable"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, code) = match &e {
            SessionError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            SessionError::InvalidSessionId(_) => (StatusCode::BAD_REQUEST, "invalid_session"),
            SessionError::MalformedLog { .. } => {
                (StatusCode::INTERNAL_SERVER_ERROR, "malformed_log")
            }
            SessionError::StorageFailure(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "storage_failure")
            }
        };
        Self::new(status, code, e.to_string())
    }
}
