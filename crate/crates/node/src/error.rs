//! HTTP error bodies: `{code, field?, detail}`.

use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use halaltrace_core::qr::QrError;
use halaltrace_core::records::RecordError;
use halaltrace_core::registry::RegistryError;
use halaltrace_core::service::ServiceError;
use halaltrace_core::trace::TraceError;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ErrorBody {
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, detail: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { code: code.into(), field: None, detail: detail.into() } }
    }

    pub fn with_field(mut self, field: impl Into<String>) -> Self {
        self.body.field = Some(field.into());
        self
    }

    pub fn not_found(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", detail)
    }

    pub fn bad_request(field: &str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", detail).with_field(field)
    }

    pub fn internal(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", detail)
    }
}

/// Status and stable code for every service error.
pub fn classify(err: &ServiceError) -> (StatusCode, &'static str) {
    use StatusCode as S;
    match err {
        ServiceError::Record(e) => match e {
            RecordError::Unauthorized(_) => (S::FORBIDDEN, "unauthorized"),
            RecordError::BadSignature => (S::UNAUTHORIZED, "bad_signature"),
            RecordError::ValidationFailed { .. } => (S::UNPROCESSABLE_ENTITY, "validation_failed"),
            RecordError::DuplicateSubmission => (S::UNPROCESSABLE_ENTITY, "duplicate_submission"),
            RecordError::UnresolvedReference(_) => (S::UNPROCESSABLE_ENTITY, "unresolved_reference"),
            RecordError::UnknownSubject(_) => (S::NOT_FOUND, "unknown_subject"),
            RecordError::WrongStage => (S::FORBIDDEN, "wrong_stage"),
            RecordError::AlreadyConfirmed => (S::CONFLICT, "already_confirmed"),
        },
        ServiceError::Registry(e) => match e {
            RegistryError::Unauthorized => (S::FORBIDDEN, "unauthorized"),
            RegistryError::DuplicateId(_) => (S::CONFLICT, "duplicate_id"),
            RegistryError::UnknownStakeholder(_) => (S::UNAUTHORIZED, "unknown_stakeholder"),
            RegistryError::InvalidIdentity(_) => (S::UNPROCESSABLE_ENTITY, "invalid_identity"),
        },
        ServiceError::Trace(e) => match e {
            TraceError::UnknownTraceId(_) => (S::NOT_FOUND, "unknown_trace_id"),
            TraceError::MalformedId(_) => (S::BAD_REQUEST, "malformed_id"),
            TraceError::Unauthorized(_) => (S::FORBIDDEN, "unauthorized"),
            TraceError::IncompleteProvenance(_) => (S::CONFLICT, "incomplete_provenance"),
        },
        ServiceError::Qr(e) => (
            S::UNPROCESSABLE_ENTITY,
            match e {
                QrError::MalformedPayload(_) => "malformed_payload",
                QrError::UnsupportedVersion(_) => "unsupported_version",
                QrError::PayloadTooLong(_) => "payload_too_long",
                QrError::NoQrFound => "no_qr_found",
                QrError::DecodeFailed(_) => "decode_failed",
                QrError::IntegrityMismatch => "integrity_mismatch",
                QrError::UnknownTraceId(_) => "unknown_trace_id",
            },
        ),
        ServiceError::Consensus(_) => (S::INTERNAL_SERVER_ERROR, "consensus"),
        ServiceError::BadRequest { .. } => (S::BAD_REQUEST, "bad_request"),
    }
}

impl From<ServiceError> for ApiError {
    fn from(err: ServiceError) -> Self {
        let (status, code) = classify(&err);
        let field = match &err {
            ServiceError::Record(RecordError::ValidationFailed { field, .. }) | ServiceError::BadRequest { field, .. } => {
                Some(field.clone())
            }
            _ => None,
        };
        ApiError { status, body: ErrorBody { code: code.into(), field, detail: err.to_string() } }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rejection: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "malformed_request", rejection.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
