//! Webhook ingestion: mention gate, sanitisation, photo intake, phase-1
//! write, and asynchronous dispatch of the badge pipeline.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tokio::task::JoinHandle;

use crate::backend::{self, PipelineRequest, QuantumBackend};
use crate::pipeline::{self, Issued};
use crate::sig::{self, NONCE_LEN};
use crate::store::{self, MessageRecord, Store, StoreError, MAX_BLOB_BYTES, MAX_TEXT_CHARS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebhookUpdate {
    pub update_id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<Message>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub message_id: i64,
    /// Unix seconds.
    pub date: i64,
    pub chat: Chat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<User>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Vec<MessageEntity>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_entities: Option<Vec<MessageEntity>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photo: Option<Vec<PhotoSize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chat {
    pub id: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub first_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub username: Option<String>,
}

/// Offsets and lengths count UTF-16 code units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageEntity {
    #[serde(rename = "type")]
    pub kind: String,
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhotoSize {
    pub file_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_size: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MentionDecision {
    pub mentioned: bool,
    pub matched_text: Option<String>,
}

/// Slices `text` by UTF-16 code units; `None` if out of range or splitting a surrogate pair.
pub fn utf16_slice(text: &str, offset: usize, length: usize) -> Option<String> {
    let units: Vec<u16> = text.encode_utf16().collect();
    let end = offset.checked_add(length)?;
    let slice = units.get(offset..end)?;
    String::from_utf16(slice).ok()
}

pub fn detect_mention(update: &WebhookUpdate, bot_handle: &str) -> MentionDecision {
    let Some(msg) = &update.message else {
        return MentionDecision::default();
    };
    let wanted = format!("@{}", bot_handle.trim_start_matches('@'));
    let sources = [
        (msg.text.as_deref(), msg.entities.as_deref()),
        (msg.caption.as_deref(), msg.caption_entities.as_deref()),
    ];
    for (text, entities) in sources {
        let (Some(text), Some(entities)) = (text, entities) else {
            continue;
        };
        for e in entities.iter().filter(|e| e.kind == "mention") {
            match utf16_slice(text, e.offset, e.length) {
                Some(slice) if slice.eq_ignore_ascii_case(&wanted) => {
                    return MentionDecision {
                        mentioned: true,
                        matched_text: Some(slice),
                    }
                }
                Some(_) => {}
                None => tracing::warn!(
                    update_id = update.update_id,
                    offset = e.offset,
                    length = e.length,
                    "mention entity outside message text"
                ),
            }
        }
    }
    MentionDecision::default()
}

fn entity_for(c: char) -> Option<&'static str> {
    match c {
        '&' => Some("&amp;"),
        '<' => Some("&lt;"),
        '>' => Some("&gt;"),
        '"' => Some("&quot;"),
        '\'' => Some("&#x27;"),
        _ => None,
    }
}

/// HTML-entity encodes `& < > " '` and keeps at most 4096 characters of the
/// encoded result. An entity that would straddle the limit is dropped whole.
pub fn sanitize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = 0usize;
    for c in text.chars() {
        let (piece, width) = match entity_for(c) {
            Some(e) => (e, e.len()),
            None => ("", 1),
        };
        if chars + width > MAX_TEXT_CHARS {
            break;
        }
        if piece.is_empty() {
            out.push(c);
        } else {
            out.push_str(piece);
        }
        chars += width;
    }
    out
}

#[derive(Debug, Clone)]
pub struct FixturePhoto {
    pub bytes: Arc<Vec<u8>>,
    pub media_type: String,
}

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("photo {0} not found")]
    NotFound(String),
    #[error("photo of {0} bytes exceeds the size limit")]
    TooLarge(u64),
    #[error("platform file API: {0}")]
    Http(String),
    #[error("photo downloads are disabled")]
    Disabled,
}

impl From<reqwest::Error> for FetchError {
    fn from(e: reqwest::Error) -> Self {
        FetchError::Http(e.without_url().to_string())
    }
}

/// Downloads photos through the bot platform's file API.
#[derive(Clone)]
pub struct HttpFileApi {
    api_base: String,
    bot_token: String,
    http: reqwest::Client,
}

impl std::fmt::Debug for HttpFileApi {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpFileApi")
            .field("api_base", &self.api_base)
            .finish_non_exhaustive()
    }
}

#[derive(Deserialize)]
struct GetFileReply {
    ok: bool,
    result: Option<FileInfo>,
}

#[derive(Deserialize)]
struct FileInfo {
    file_path: Option<String>,
    file_size: Option<u64>,
}

impl HttpFileApi {
    pub const DEFAULT_BASE: &'static str = "https://api.telegram.org";

    pub fn new(api_base: impl Into<String>, bot_token: impl Into<String>) -> Self {
        Self {
            api_base: api_base.into().trim_end_matches('/').to_owned(),
            bot_token: bot_token.into(),
            http: reqwest::Client::new(),
        }
    }

    async fn fetch(&self, file_id: &str) -> Result<(Vec<u8>, String), FetchError> {
        let reply: GetFileReply = self
            .http
            .get(format!("{}/bot{}/getFile", self.api_base, self.bot_token))
            .query(&[("file_id", file_id)])
            .send()
            .await?
            .error_for_status()?
            .json()
            .await?;
        let info = reply
            .result
            .filter(|_| reply.ok)
            .ok_or_else(|| FetchError::NotFound(file_id.to_owned()))?;
        if let Some(size) = info.file_size.filter(|&s| s > MAX_BLOB_BYTES as u64) {
            return Err(FetchError::TooLarge(size));
        }
        let path = info
            .file_path
            .ok_or_else(|| FetchError::NotFound(file_id.to_owned()))?;
        let resp = self
            .http
            .get(format!(
                "{}/file/bot{}/{}",
                self.api_base, self.bot_token, path
            ))
            .send()
            .await?
            .error_for_status()?;
        let media_type = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or("image/jpeg")
            .to_owned();
        Ok((resp.bytes().await?.to_vec(), media_type))
    }
}

#[derive(Debug, Clone, Default)]
pub enum PhotoFetcher {
    #[default]
    Disabled,
    Fixtures(Arc<HashMap<String, FixturePhoto>>),
    Http(HttpFileApi),
}

impl PhotoFetcher {
    pub async fn fetch(&self, file_id: &str) -> Result<(Vec<u8>, String), FetchError> {
        match self {
            PhotoFetcher::Disabled => Err(FetchError::Disabled),
            PhotoFetcher::Fixtures(map) => map
                .get(file_id)
                .map(|p| (p.bytes.as_ref().clone(), p.media_type.clone()))
                .ok_or_else(|| FetchError::NotFound(file_id.to_owned())),
            PhotoFetcher::Http(api) => api.fetch(file_id).await,
        }
    }
}

/// Source of per-message randomness: the Circuit A sampler seed and the nonce r.
#[derive(Debug, Clone, Default)]
pub enum Entropy {
    #[default]
    Os,
    Fixed {
        rng_seed: u64,
        nonce: [u8; NONCE_LEN],
    },
}

impl Entropy {
    fn draw(&self) -> (u64, [u8; NONCE_LEN]) {
        match self {
            Entropy::Os => (rand::random(), rand::random()),
            Entropy::Fixed { rng_seed, nonce } => (*rng_seed, *nonce),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub enum Clock {
    #[default]
    System,
    Fixed(u64),
}

impl Clock {
    pub fn now_ms(&self) -> u64 {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            Clock::Fixed(ms) => *ms,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub bot_handle: String,
    pub timeout: Duration,
    pub entropy: Entropy,
    pub clock: Clock,
}

impl IngestConfig {
    pub fn new(bot_handle: impl Into<String>) -> Self {
        Self {
            bot_handle: bot_handle.into(),
            timeout: backend::DEFAULT_TIMEOUT,
            entropy: Entropy::Os,
            clock: Clock::System,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AckStatus {
    Acknowledged,
    Ignored,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// The identity fed to the circuits and the signature: handle if set, else first name.
pub fn sender_identity(user: Option<&User>) -> (String, String) {
    match user {
        Some(u) => {
            let handle = u
                .username
                .clone()
                .filter(|h| !h.is_empty())
                .unwrap_or_else(|| u.first_name.clone());
            (u.first_name.clone(), handle)
        }
        None => (String::new(), String::new()),
    }
}

pub struct Ingestor {
    store: Arc<Store>,
    backend: QuantumBackend,
    fetcher: PhotoFetcher,
    config: IngestConfig,
    tasks: Mutex<Vec<JoinHandle<()>>>,
}

impl Ingestor {
    pub fn new(
        store: Arc<Store>,
        backend: QuantumBackend,
        fetcher: PhotoFetcher,
        config: IngestConfig,
    ) -> Self {
        Self {
            store,
            backend,
            fetcher,
            config,
            tasks: Mutex::default(),
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn backend(&self) -> &QuantumBackend {
        &self.backend
    }

    pub fn config(&self) -> &IngestConfig {
        &self.config
    }

    /// Persists a mention-bearing message as `generating` and schedules the
    /// badge pipeline; returns without waiting on quantum execution.
    pub async fn handle_update(
        &self,
        group_id: &str,
        update: &WebhookUpdate,
    ) -> Result<AckStatus, IngestError> {
        store::validate_id(group_id)?;
        let decision = detect_mention(update, &self.config.bot_handle);
        let Some(msg) = update.message.as_ref().filter(|_| decision.mentioned) else {
            return Ok(AckStatus::Ignored);
        };

        let raw = msg.text.as_deref().or(msg.caption.as_deref()).unwrap_or("");
        let text = sanitize(raw);
        let (sender_name, sender_handle) = sender_identity(msg.from.as_ref());
        let sender_handle = sanitize(&sender_handle);
        let timestamp_ms = self.config.clock.now_ms();
        let mut record = MessageRecord::generating(
            group_id,
            msg.message_id.to_string(),
            timestamp_ms,
            sanitize(&sender_name),
            sender_handle.clone(),
            text.clone(),
        );
        if self.store.get(group_id, &record.message_id).is_some() {
            return Ok(AckStatus::Acknowledged);
        }
        record.photo_ref = self.intake_photo(update.update_id, msg).await;
        if !self.store.put_phase1(record.clone())? {
            return Ok(AckStatus::Acknowledged);
        }

        let (rng_seed, nonce) = self.config.entropy.draw();
        let req = PipelineRequest {
            username: sender_handle,
            rng_seed,
            nonce,
            timestamp_ms,
        };
        let handle = tokio::spawn(complete_in_background(
            Arc::clone(&self.store),
            self.backend.clone(),
            self.config.timeout,
            record,
            req,
        ));
        let mut tasks = self.tasks.lock().unwrap();
        tasks.retain(|t| !t.is_finished());
        tasks.push(handle);
        Ok(AckStatus::Acknowledged)
    }

    async fn intake_photo(&self, update_id: i64, msg: &Message) -> Option<String> {
        let photo = msg.photo.as_ref()?.last()?;
        if let Some(size) = photo.file_size.filter(|&s| s > MAX_BLOB_BYTES as u64) {
            tracing::warn!(
                update_id,
                size,
                "photo exceeds size limit, storing message without it"
            );
            return None;
        }
        let (bytes, media_type) = match self.fetcher.fetch(&photo.file_id).await {
            Ok(p) => p,
            Err(err) => {
                tracing::warn!(update_id, error = %err, "photo download failed, storing message without it");
                return None;
            }
        };
        match self.store.put_blob(&bytes, &media_type) {
            Ok(blob) => Some(blob.key),
            Err(err) => {
                tracing::warn!(update_id, error = %err, "photo rejected, storing message without it");
                None
            }
        }
    }

    /// Waits for every dispatched pipeline to finish.
    pub async fn wait_idle(&self) {
        loop {
            let pending: Vec<_> = std::mem::take(&mut *self.tasks.lock().unwrap());
            if pending.is_empty() {
                return;
            }
            for t in pending {
                let _ = t.await;
            }
        }
    }
}

async fn complete_in_background(
    store: Arc<Store>,
    backend: QuantumBackend,
    timeout: Duration,
    record: MessageRecord,
    req: PipelineRequest,
) {
    let text = record.text.clone();
    let inner = {
        let req = req.clone();
        tokio::spawn(async move { pipeline::issue_badge(&req, &text, &backend, timeout).await })
    };
    let issued = match inner.await {
        Ok(issued) => issued,
        Err(err) => {
            tracing::error!(message_id = %record.message_id, error = %err, "pipeline task died, using fallback");
            let result = backend::fallback_result(&req.username, &req.nonce, req.timestamp_ms);
            let badge = sig::derive_badge(&req.username, &record.text, &result, &req.nonce)
                .expect("request nonce has the fixed length");
            Issued { result, badge }
        }
    };
    let provenance = issued.provenance();
    match store.complete_signature(
        &record.group_id,
        &record.message_id,
        issued.badge,
        provenance,
    ) {
        Ok(_) => {}
        Err(err) => tracing::warn!(
            group_id = %record.group_id,
            message_id = %record.message_id,
            error = %err,
            "dropping badge for vanished record"
        ),
    }
}
