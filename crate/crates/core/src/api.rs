//! HTTP surface. Route table and JSON shapes are documented in `docs/api.md`.
//!
//! | Method | Path                           | Auth           |
//! |--------|--------------------------------|----------------|
//! | POST   | /api/webhook/{groupId}         | secret header  |
//! | GET    | /api/messages/{groupId}        | public         |
//! | DELETE | /api/messages/{groupId}?id=    | bearer         |
//! | PATCH  | /api/messages/{groupId}        | bearer         |
//! | GET    | /api/groups                    | public         |
//! | POST   | /api/admin                     | password       |
//! | GET    | /api/health                    | public         |
//! | GET    | /api/admin/messages/{groupId}  | bearer         |
//! | GET    | /api/photos/{key}              | public         |

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::ingest::{AckStatus, IngestError, Ingestor, WebhookUpdate};
use crate::sig::HslColor;
use crate::store::{
    GroupSummary, LeaderboardEntry, MessageRecord, Position, SignatureStatus, Store, StoreError,
};

pub const DEFAULT_SECRET_HEADER: &str = "X-Telegram-Bot-Api-Secret-Token";
pub const DEFAULT_TOKEN_TTL: Duration = Duration::from_secs(12 * 60 * 60);
pub const DEFAULT_LOGIN_FAILURE_DELAY: Duration = Duration::from_secs(1);

#[derive(Clone)]
pub struct ApiConfig {
    pub webhook_secret: String,
    pub admin_password: String,
    pub secret_header: String,
    pub token_ttl: Duration,
    pub login_failure_delay: Duration,
    pub ui_origin: Option<String>,
}

impl std::fmt::Debug for ApiConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ApiConfig")
            .field("secret_header", &self.secret_header)
            .field("token_ttl", &self.token_ttl)
            .field("ui_origin", &self.ui_origin)
            .finish_non_exhaustive()
    }
}

impl ApiConfig {
    pub fn new(webhook_secret: impl Into<String>, admin_password: impl Into<String>) -> Self {
        Self {
            webhook_secret: webhook_secret.into(),
            admin_password: admin_password.into(),
            secret_header: DEFAULT_SECRET_HEADER.into(),
            token_ttl: DEFAULT_TOKEN_TTL,
            login_failure_delay: DEFAULT_LOGIN_FAILURE_DELAY,
            ui_origin: None,
        }
    }
}

pub struct AppState {
    ingestor: Arc<Ingestor>,
    config: ApiConfig,
    tokens: Mutex<HashMap<String, Instant>>,
    started: Instant,
}

impl AppState {
    pub fn new(ingestor: Arc<Ingestor>, config: ApiConfig) -> Arc<Self> {
        Arc::new(Self {
            ingestor,
            config,
            tokens: Mutex::default(),
            started: Instant::now(),
        })
    }

    pub fn ingestor(&self) -> &Arc<Ingestor> {
        &self.ingestor
    }

    fn store(&self) -> &Store {
        self.ingestor.store()
    }

    fn issue_token(&self) -> String {
        let token = hex::encode(rand::random::<[u8; 32]>());
        let mut tokens = self.tokens.lock().unwrap();
        let now = Instant::now();
        tokens.retain(|_, expiry| *expiry > now);
        tokens.insert(token.clone(), now + self.config.token_ttl);
        token
    }

    fn check_bearer(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        let token = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or(ApiError::Unauthorized)?;
        let tokens = self.tokens.lock().unwrap();
        match tokens.get(token.trim()) {
            Some(expiry) if *expiry > Instant::now() => Ok(()),
            _ => Err(ApiError::Unauthorized),
        }
    }

    fn check_webhook_secret(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        let presented = headers
            .get(self.config.secret_header.as_str())
            .map(|v| v.as_bytes())
            .ok_or(ApiError::Unauthorized)?;
        if secret_eq(presented, self.config.webhook_secret.as_bytes()) {
            Ok(())
        } else {
            Err(ApiError::Unauthorized)
        }
    }
}

/// Constant-time comparison over digests, so input length does not leak either.
fn secret_eq(presented: &[u8], expected: &[u8]) -> bool {
    let a = Sha256::digest(presented);
    let b = Sha256::digest(expected);
    bool::from(a.ct_eq(&b)) && !expected.is_empty()
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("unauthorized")]
    Unauthorized,
    #[error("not found")]
    NotFound,
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("internal error")]
    Internal,
}

impl From<StoreError> for ApiError {
    fn from(err: StoreError) -> Self {
        match err {
            StoreError::NotFound { .. } => ApiError::NotFound,
            StoreError::InvalidPosition { .. } => ApiError::Unprocessable(err.to_string()),
            StoreError::InvalidId(_)
            | StoreError::InvalidRecord(_)
            | StoreError::BlobTooLarge { .. } => ApiError::BadRequest(err.to_string()),
            StoreError::Io(_) | StoreError::Corrupt { .. } => {
                tracing::error!(error = %err, "store failure");
                ApiError::Internal
            }
        }
    }
}

impl From<IngestError> for ApiError {
    fn from(err: IngestError) -> Self {
        match err {
            IngestError::Store(e) => e.into(),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::NotFound => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (
            status,
            Json(ErrorBody {
                error: self.to_string(),
            }),
        )
            .into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ColorView {
    pub h: f64,
    pub s: f64,
    pub l: f64,
    pub css: String,
}

impl From<HslColor> for ColorView {
    fn from(c: HslColor) -> Self {
        Self {
            h: c.h,
            s: c.s,
            l: c.l,
            css: c.css(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BadgeView {
    pub quantum_number: u16,
    pub pk_hash: String,
    pub signature: String,
    pub nonce_hex: String,
    pub color: ColorView,
    pub rendered: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PositionView {
    pub x_pct: f64,
    pub y_pct: f64,
}

impl From<Position> for PositionView {
    fn from(p: Position) -> Self {
        Self {
            x_pct: p.x_pct,
            y_pct: p.y_pct,
        }
    }
}

/// Public card projection served to the wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MessageView {
    pub id: String,
    pub group_id: String,
    pub timestamp_ms: u64,
    pub sender_name: String,
    pub sender_handle: String,
    pub text: String,
    pub photo_url: Option<String>,
    pub position: Option<PositionView>,
    pub signature_status: SignatureStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub badge: Option<BadgeView>,
}

impl From<&MessageRecord> for MessageView {
    fn from(r: &MessageRecord) -> Self {
        let badge = r
            .badge
            .as_ref()
            .filter(|_| r.signature_status == SignatureStatus::Completed)
            .map(|b| BadgeView {
                quantum_number: b.q_num,
                pk_hash: b.pk_hash.clone(),
                signature: b.signature.clone(),
                nonce_hex: b.nonce_hex.clone(),
                color: b.color.into(),
                rendered: b.render(),
            });
        Self {
            id: r.message_id.clone(),
            group_id: r.group_id.clone(),
            timestamp_ms: r.timestamp_ms,
            sender_name: r.sender_name.clone(),
            sender_handle: r.sender_handle.clone(),
            text: r.text.clone(),
            photo_url: r.photo_ref.as_ref().map(|k| format!("/api/photos/{k}")),
            position: r.position.map(Into::into),
            signature_status: r.signature_status,
            badge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProvenanceView {
    pub device: String,
    pub algorithm: String,
    pub duration_ms: u64,
    /// [P(00), P(01), P(10), P(11)]
    pub bell_state: [f64; 4],
    pub quantum_number: u16,
    pub fallback: bool,
}

/// Admin row: the public card plus moderation and provenance fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AdminMessageView {
    #[serde(flatten)]
    pub card: MessageView,
    pub hidden: bool,
    pub provenance: Option<ProvenanceView>,
}

impl From<&MessageRecord> for AdminMessageView {
    fn from(r: &MessageRecord) -> Self {
        Self {
            card: r.into(),
            hidden: r.hidden,
            provenance: r.provenance.as_ref().map(|p| ProvenanceView {
                device: p.device.clone(),
                algorithm: p.algorithm.clone(),
                duration_ms: p.duration_ms,
                bell_state: p.bell.to_array(),
                quantum_number: p.q_num,
                fallback: p.device == crate::backend::DEVICE_FALLBACK,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LeaderboardView {
    pub sender_handle: String,
    pub count: usize,
}

impl From<&LeaderboardEntry> for LeaderboardView {
    fn from(e: &LeaderboardEntry) -> Self {
        Self {
            sender_handle: e.sender_handle.clone(),
            count: e.count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WallResponse {
    pub messages: Vec<MessageView>,
    pub leaderboard: Vec<LeaderboardView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AdminWallResponse {
    pub messages: Vec<AdminMessageView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GroupView {
    pub group_id: String,
    pub message_count: usize,
    pub leaderboard: Vec<LeaderboardView>,
}

impl From<&GroupSummary> for GroupView {
    fn from(g: &GroupSummary) -> Self {
        Self {
            group_id: g.group_id.clone(),
            message_count: g.message_count,
            leaderboard: g.leaderboard.iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupsResponse {
    pub groups: Vec<GroupView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub backend: String,
    pub uptime_s: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LoginResponse {
    pub token: String,
    pub expires_in_s: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebhookAck {
    pub ok: bool,
    pub status: AckStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OkResponse {
    pub ok: bool,
}

#[derive(Debug, Deserialize)]
pub struct LoginRequest {
    pub password: String,
}

#[derive(Debug, Deserialize)]
pub struct PositionRequest {
    pub id: String,
    #[serde(alias = "xPct")]
    pub x_pct: f64,
    #[serde(alias = "yPct")]
    pub y_pct: f64,
}

#[derive(Debug, Deserialize)]
pub struct SinceQuery {
    pub since: Option<u64>,
}

#[derive(Debug, Deserialize)]
pub struct IdQuery {
    pub id: String,
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = state.config.ui_origin.as_deref().and_then(|origin| {
        let origin = HeaderValue::from_str(origin).ok()?;
        Some(
            CorsLayer::new()
                .allow_origin(AllowOrigin::exact(origin))
                .allow_methods([Method::GET, Method::POST, Method::PATCH, Method::DELETE])
                .allow_headers([header::AUTHORIZATION, header::CONTENT_TYPE]),
        )
    });
    let router = Router::new()
        .route("/api/webhook/{group_id}", post(webhook))
        .route(
            "/api/messages/{group_id}",
            get(list_messages)
                .delete(delete_message)
                .patch(set_position),
        )
        .route("/api/groups", get(list_groups))
        .route("/api/admin", post(login))
        .route("/api/admin/messages/{group_id}", get(admin_messages))
        .route("/api/health", get(health))
        .route("/api/photos/{key}", get(photo))
        .with_state(state);
    match cors {
        Some(layer) => router.layer(layer),
        None => router,
    }
}

async fn webhook(
    State(state): State<Arc<AppState>>,
    Path(group_id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<WebhookAck>, ApiError> {
    state.check_webhook_secret(&headers)?;
    let update: WebhookUpdate = serde_json::from_slice(&body)
        .map_err(|e| ApiError::BadRequest(format!("malformed update: {e}")))?;
    let status = state.ingestor.handle_update(&group_id, &update).await?;
    Ok(Json(WebhookAck { ok: true, status }))
}

async fn list_messages(
    State(state): State<Arc<AppState>>,
    Path(group_id): Path<String>,
    Query(q): Query<SinceQuery>,
) -> Json<WallResponse> {
    let store = state.store();
    let messages = store
        .list_messages(&group_id, q.since)
        .iter()
        .map(Into::into)
        .collect();
    let leaderboard = store
        .summary(&group_id)
        .leaderboard
        .iter()
        .map(Into::into)
        .collect();
    Json(WallResponse {
        messages,
        leaderboard,
    })
}

async fn delete_message(
    State(state): State<Arc<AppState>>,
    Path(group_id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<IdQuery>,
) -> Result<Json<OkResponse>, ApiError> {
    state.check_bearer(&headers)?;
    state.store().soft_delete(&group_id, &q.id)?;
    Ok(Json(OkResponse { ok: true }))
}

async fn set_position(
    State(state): State<Arc<AppState>>,
    Path(group_id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<OkResponse>, ApiError> {
    state.check_bearer(&headers)?;
    let req: PositionRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::BadRequest(format!("malformed body: {e}")))?;
    state
        .store()
        .set_position(&group_id, &req.id, req.x_pct, req.y_pct)?;
    Ok(Json(OkResponse { ok: true }))
}

async fn list_groups(State(state): State<Arc<AppState>>) -> Json<GroupsResponse> {
    Json(GroupsResponse {
        groups: state.store().summaries().iter().map(Into::into).collect(),
    })
}

async fn login(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<LoginResponse>, ApiError> {
    let req: LoginRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::BadRequest(format!("malformed body: {e}")))?;
    if !secret_eq(
        req.password.as_bytes(),
        state.config.admin_password.as_bytes(),
    ) {
        tokio::time::sleep(state.config.login_failure_delay).await;
        return Err(ApiError::Unauthorized);
    }
    Ok(Json(LoginResponse {
        token: state.issue_token(),
        expires_in_s: state.config.token_ttl.as_secs(),
    }))
}

async fn admin_messages(
    State(state): State<Arc<AppState>>,
    Path(group_id): Path<String>,
    headers: HeaderMap,
) -> Result<Json<AdminWallResponse>, ApiError> {
    state.check_bearer(&headers)?;
    Ok(Json(AdminWallResponse {
        messages: state
            .store()
            .admin_list(&group_id)
            .iter()
            .map(Into::into)
            .collect(),
    }))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        backend: state.ingestor.backend().kind().to_string(),
        uptime_s: state.started.elapsed().as_secs(),
    })
}

async fn photo(
    State(state): State<Arc<AppState>>,
    Path(key): Path<String>,
) -> Result<Response, ApiError> {
    let (blob, bytes) = state.store().get_blob(&key)?.ok_or(ApiError::NotFound)?;
    let content_type = HeaderValue::from_str(&blob.media_type)
        .unwrap_or(HeaderValue::from_static("application/octet-stream"));
    Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn secret_comparison() {
        assert!(secret_eq(b"abc", b"abc"));
        assert!(!secret_eq(b"abd", b"abc"));
        assert!(!secret_eq(b"ab", b"abc"));
        assert!(!secret_eq(b"", b""));
    }

    #[test]
    fn config_debug_redacts() {
        let c = ApiConfig::new("hook-secret", "pw-secret");
        let s = format!("{c:?}");
        assert!(!s.contains("hook-secret") && !s.contains("pw-secret"));
    }
}
