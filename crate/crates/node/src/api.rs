//! HTTP/JSON API under `/api/v1`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use halaltrace_core::envelope::Envelope;
use halaltrace_core::ledger::{Block, BlockSelector};
use halaltrace_core::records::{utc_date, Stage, TraceabilityId};
use halaltrace_core::registry::StakeholderIdentity;
use halaltrace_core::service::ServiceError;
use halaltrace_core::trace::{ProvenanceReport, TraceError};
use halaltrace_core::{qr, schema};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{ApiError, ErrorBody};
use crate::state::{now_unix, CostReport, Shared, ValidationReport};

/// Response header carrying the QR payload text next to the PNG.
pub const QR_PAYLOAD_HEADER: &str = "x-qr-payload";

type ApiResult<T> = Result<T, ApiError>;

/// JSON body extractor whose rejections use the API error shape.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let Json(value) = Json::<T>::from_request(req, state).await?;
        Ok(ApiJson(value))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub trace_id: TraceabilityId,
    /// `pending` until the record's block commits.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub height: u64,
    pub pending: usize,
    pub uptime_seconds: u64,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct AsOf {
    /// Date certificate validity is judged at; defaults to today (UTC).
    pub as_of: Option<NaiveDate>,
}

impl AsOf {
    fn date(&self) -> NaiveDate {
        self.as_of.unwrap_or_else(|| utc_date(now_unix()))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyRequest {
    pub payload: String,
}

pub fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/api/v1/records/{stage}", post(submit_record))
        .route("/api/v1/records/{trace_id}/confirm", post(confirm_record))
        .route("/api/v1/trace/{trace_id}", get(trace))
        .route("/api/v1/products/{trace_id}/qr", post(issue_qr))
        .route("/api/v1/qr/verify", post(verify_qr))
        .route("/api/v1/chain/blocks/{height}", get(block_at))
        .route("/api/v1/chain/tip", get(tip))
        .route("/api/v1/chain/validate", get(validate))
        .route("/api/v1/stakeholders", post(register_stakeholder))
        .route("/api/v1/stakeholders/{id}", get(stakeholder))
        .route("/api/v1/schemas", get(schema_names))
        .route("/api/v1/schemas/{name}", get(schema_by_name))
        .route("/api/v1/health", get(health))
        .route("/api/v1/metrics/cost", get(cost))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(shared)
}

fn parse_stage(segment: &str) -> ApiResult<Stage> {
    match segment {
        "cultivator" => Ok(Stage::Cultivator),
        "maker" => Ok(Stage::Maker),
        "merchant" => Ok(Stage::Merchant),
        other => Err(ApiError::not_found(format!("unknown record stage `{other}`"))),
    }
}

fn parse_id(raw: &str) -> ApiResult<TraceabilityId> {
    raw.parse().map_err(|_| ServiceError::from(TraceError::MalformedId(raw.to_string())).into())
}

fn status_of(shared: &Shared, id: &TraceabilityId) -> String {
    if shared.service.read().index().contains(id) { "committed" } else { "pending" }.to_string()
}

async fn submit_record(
    State(shared): State<Arc<Shared>>,
    Path(stage): Path<String>,
    ApiJson(envelope): ApiJson<Envelope>,
) -> ApiResult<(StatusCode, Json<SubmitResponse>)> {
    let stage = parse_stage(&stage)?;
    let trace_id = shared.service.write().submit_record(stage, envelope)?;
    shared.poke();
    let status = status_of(&shared, &trace_id);
    Ok((StatusCode::ACCEPTED, Json(SubmitResponse { trace_id, status })))
}

async fn confirm_record(
    State(shared): State<Arc<Shared>>,
    Path(trace_id): Path<String>,
    ApiJson(envelope): ApiJson<Envelope>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let id = parse_id(&trace_id)?;
    let confirmation = shared.service.write().confirm_record(Some(&id), envelope)?;
    shared.poke();
    let mut body = serde_json::to_value(&confirmation).map_err(|e| ApiError::internal(e.to_string()))?;
    body["status"] = json!("pending");
    Ok((StatusCode::ACCEPTED, Json(body)))
}

async fn trace(
    State(shared): State<Arc<Shared>>,
    Path(trace_id): Path<String>,
    Query(as_of): Query<AsOf>,
) -> ApiResult<Json<ProvenanceReport>> {
    Ok(Json(shared.service.read().trace(&trace_id, as_of.date())?))
}

async fn issue_qr(
    State(shared): State<Arc<Shared>>,
    Path(trace_id): Path<String>,
    ApiJson(envelope): ApiJson<Envelope>,
) -> ApiResult<Response> {
    let payload = shared.service.write().issue_qr(&trace_id, envelope, utc_date(now_unix()))?;
    shared.poke();
    let text = payload.to_string();
    let png = qr::render_qr(&text).map_err(ServiceError::from)?;
    let mut response = (StatusCode::OK, png).into_response();
    let headers = response.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    headers.insert(QR_PAYLOAD_HEADER, HeaderValue::from_str(&text).expect("payload is ASCII"));
    Ok(response)
}

/// Accepts `{"payload": "HT1|..."}` as JSON, or raw image bytes with an
/// `image/*` content type.
async fn verify_qr(
    State(shared): State<Arc<Shared>>,
    Query(as_of): Query<AsOf>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<ProvenanceReport>> {
    let content_type = headers.get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).unwrap_or("");
    let date = as_of.date();
    let report = if content_type.starts_with("image/") {
        let bytes = body.to_vec();
        let shared = shared.clone();
        // decoding is CPU-bound; keep it off the async workers
        tokio::task::spawn_blocking(move || shared.service.read().verify_image(&bytes, date))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??
    } else {
        let request: VerifyRequest = serde_json::from_slice(&body)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_request", e.to_string()))?;
        shared.service.read().verify_payload(&request.payload, date)?
    };
    Ok(Json(report))
}

async fn block_at(State(shared): State<Arc<Shared>>, Path(height): Path<String>) -> ApiResult<Json<Block>> {
    let height: u64 = height.parse().map_err(|_| ApiError::bad_request("height", "expected a non-negative integer"))?;
    let service = shared.service.read();
    let block = service
        .chain()
        .get_block(&BlockSelector::Height(height))
        .ok_or_else(|| ApiError::not_found(format!("no block at height {height}")))?;
    Ok(Json(block.clone()))
}

async fn tip(State(shared): State<Arc<Shared>>) -> Json<Block> {
    Json(shared.service.read().chain().latest_block().clone())
}

async fn validate(State(shared): State<Arc<Shared>>) -> ApiResult<Json<ValidationReport>> {
    let s = shared.clone();
    let report = tokio::task::spawn_blocking(move || s.validate_persisted())
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(report))
}

async fn register_stakeholder(
    State(shared): State<Arc<Shared>>,
    ApiJson(envelope): ApiJson<Envelope>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let id = shared.service.write().register_stakeholder(envelope)?;
    shared.poke();
    Ok((StatusCode::CREATED, Json(json!({ "stakeholder_id": id }))))
}

async fn stakeholder(State(shared): State<Arc<Shared>>, Path(id): Path<String>) -> ApiResult<Json<StakeholderIdentity>> {
    let service = shared.service.read();
    let identity = service.registry().get(&id).ok_or_else(|| ApiError::not_found(format!("unknown stakeholder `{id}`")))?;
    Ok(Json(identity.clone()))
}

/// Published schemas plus the API error body.
pub fn schemas() -> std::collections::BTreeMap<&'static str, Value> {
    let mut all = schema::published();
    all.insert("error", serde_json::to_value(schemars::schema_for!(ErrorBody)).expect("schema serializes"));
    all
}

async fn schema_names() -> Json<Vec<&'static str>> {
    Json(schemas().into_keys().collect())
}

async fn schema_by_name(Path(name): Path<String>) -> ApiResult<Json<Value>> {
    schemas()
        .remove(name.as_str())
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no schema named `{name}`")))
}

async fn cost(State(shared): State<Arc<Shared>>) -> Json<CostReport> {
    Json(shared.cost_report())
}

async fn health(State(shared): State<Arc<Shared>>) -> Json<HealthResponse> {
    let service = shared.service.read();
    Json(HealthResponse {
        height: service.chain().tip_height(),
        pending: service.pending_len(),
        uptime_seconds: shared.uptime().as_secs(),
    })
}
