#![allow(dead_code)]

pub mod dense;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::extract::{Path, State};
use axum::http::{Request, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use qsign_core::api::{self, ApiConfig, AppState};
use qsign_core::backend::wire::{SubmitResponse, TaskState, TaskStatus};
use qsign_core::ingest::{FixturePhoto, IngestConfig, Ingestor, PhotoFetcher};
use qsign_core::qsim::{self, Circuit};
use qsign_core::{QuantumBackend, Store};

pub const BOT: &str = "qsign_bot";
pub const SECRET: &str = "hook-secret";
pub const PASSWORD: &str = "organiser-pw";
pub const SECRET_HEADER: &str = "X-Telegram-Bot-Api-Secret-Token";
pub const BIG_PHOTO: &str = "big-photo";
pub const SMALL_PHOTO: &str = "small-photo";

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

/// Compares `actual` with a frozen golden file; `QSIGN_BLESS=1` rewrites it.
pub fn check_golden(name: &str, actual: &str) {
    let path = golden_path(name);
    if std::env::var_os("QSIGN_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("golden file {}: {e}", path.display()));
    assert_eq!(actual, expected, "golden mismatch for {name}");
}

pub fn fixture_photos() -> PhotoFetcher {
    let mut map = HashMap::new();
    map.insert(
        SMALL_PHOTO.to_owned(),
        FixturePhoto {
            bytes: Arc::new(b"\xFF\xD8\xFFsmall-jpeg".to_vec()),
            media_type: "image/jpeg".into(),
        },
    );
    map.insert(
        BIG_PHOTO.to_owned(),
        FixturePhoto {
            bytes: Arc::new(vec![0u8; 25 * 1024 * 1024]),
            media_type: "image/jpeg".into(),
        },
    );
    PhotoFetcher::Fixtures(Arc::new(map))
}

pub struct TestApp {
    pub router: axum::Router,
    pub state: Arc<AppState>,
    pub store: Arc<Store>,
}

impl TestApp {
    pub fn new(backend: QuantumBackend, timeout: Duration) -> Self {
        Self::with_store(Arc::new(Store::in_memory()), backend, timeout)
    }

    pub fn with_store(store: Arc<Store>, backend: QuantumBackend, timeout: Duration) -> Self {
        let mut ingest = IngestConfig::new(BOT);
        ingest.timeout = timeout;
        let ingestor = Arc::new(Ingestor::new(
            store.clone(),
            backend,
            fixture_photos(),
            ingest,
        ));
        let mut config = ApiConfig::new(SECRET, PASSWORD);
        config.login_failure_delay = Duration::from_millis(10);
        let state = AppState::new(ingestor, config);
        Self {
            router: api::router(state.clone()),
            state,
            store,
        }
    }

    pub async fn call(&self, req: Request<Body>) -> (StatusCode, Value) {
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
        (status, value)
    }

    pub async fn raw(&self, req: Request<Body>) -> (StatusCode, Vec<u8>) {
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, bytes.to_vec())
    }

    pub async fn webhook(
        &self,
        group: &str,
        secret: Option<&str>,
        body: &Value,
    ) -> (StatusCode, Value) {
        let mut req = Request::post(format!("/api/webhook/{group}"))
            .header("content-type", "application/json");
        if let Some(s) = secret {
            req = req.header(SECRET_HEADER, s);
        }
        self.call(req.body(Body::from(body.to_string())).unwrap())
            .await
    }

    pub async fn login(&self) -> String {
        let req = Request::post("/api/admin")
            .header("content-type", "application/json")
            .body(Body::from(json!({ "password": PASSWORD }).to_string()))
            .unwrap();
        let (status, body) = self.call(req).await;
        assert_eq!(status, StatusCode::OK);
        body["token"].as_str().unwrap().to_owned()
    }

    pub async fn get(&self, path: &str, token: Option<&str>) -> (StatusCode, Value) {
        let mut req = Request::get(path);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        self.call(req.body(Body::empty()).unwrap()).await
    }

    pub async fn delete(&self, path: &str, token: Option<&str>) -> (StatusCode, Value) {
        let mut req = Request::delete(path);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        self.call(req.body(Body::empty()).unwrap()).await
    }

    pub async fn patch(
        &self,
        path: &str,
        token: Option<&str>,
        body: &Value,
    ) -> (StatusCode, Value) {
        let mut req = Request::patch(path).header("content-type", "application/json");
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        self.call(req.body(Body::from(body.to_string())).unwrap())
            .await
    }

    pub async fn idle(&self) {
        self.state.ingestor().wait_idle().await;
    }
}

/// Builds a bot-platform update. `mention_at` places a mention entity over
/// `@<handle>` inside `text` when `Some(handle)`.
pub fn text_update(
    update_id: i64,
    message_id: i64,
    username: Option<&str>,
    text: &str,
    mention: Option<&str>,
) -> Value {
    let mut message = json!({
        "message_id": message_id,
        "date": 1_700_000_000,
        "chat": { "id": -1001 },
        "from": { "id": 42, "is_bot": false, "first_name": "Alice" },
        "text": text,
    });
    if let Some(u) = username {
        message["from"]["username"] = json!(u);
    }
    if let Some(handle) = mention {
        let needle = format!("@{handle}");
        let byte_off = text.find(&needle).expect("mention text present");
        let offset = text[..byte_off].encode_utf16().count();
        let length = needle.encode_utf16().count();
        message["entities"] = json!([{ "type": "mention", "offset": offset, "length": length }]);
    }
    json!({ "update_id": update_id, "message": message })
}

pub fn photo_update(
    update_id: i64,
    message_id: i64,
    caption: &str,
    file_id: &str,
    file_size: Option<u64>,
) -> Value {
    let needle = format!("@{BOT}");
    let byte_off = caption.find(&needle).expect("caption mention");
    let offset = caption[..byte_off].encode_utf16().count();
    let mut photo =
        json!({ "file_id": file_id, "file_unique_id": "u", "width": 800, "height": 600 });
    if let Some(sz) = file_size {
        photo["file_size"] = json!(sz);
    }
    json!({
        "update_id": update_id,
        "message": {
            "message_id": message_id,
            "date": 1_700_000_000,
            "chat": { "id": -1001 },
            "from": { "id": 7, "is_bot": false, "first_name": "Pat", "username": "pat" },
            "caption": caption,
            "caption_entities": [{ "type": "mention", "offset": offset, "length": needle.encode_utf16().count() }],
            "photo": [{ "file_id": "thumb", "file_unique_id": "t", "width": 90, "height": 90, "file_size": 10 }, photo],
        }
    })
}

#[derive(Clone, Default)]
struct MockRemote {
    tasks: Arc<Mutex<HashMap<String, TaskStatus>>>,
    next: Arc<AtomicU64>,
    fail: bool,
}

async fn submit(State(m): State<MockRemote>, Json(circuit): Json<Circuit>) -> Json<SubmitResponse> {
    let id = m.next.fetch_add(1, Ordering::SeqCst);
    let status = if m.fail {
        TaskStatus {
            status: TaskState::Failed,
            counts: BTreeMap::new(),
        }
    } else {
        let hist = qsim::run_circuit(&circuit, id).unwrap();
        TaskStatus {
            status: TaskState::Completed,
            counts: hist.counts().clone(),
        }
    };
    m.tasks.lock().unwrap().insert(id.to_string(), status);
    Json(SubmitResponse {
        task_id: id.to_string(),
    })
}

async fn poll(
    State(m): State<MockRemote>,
    Path(id): Path<String>,
) -> Result<Json<TaskStatus>, StatusCode> {
    m.tasks
        .lock()
        .unwrap()
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or(StatusCode::NOT_FOUND)
}

/// Serves the remote job-submit/poll contract backed by the local simulator.
pub async fn spawn_mock_remote(fail: bool) -> String {
    let state = MockRemote {
        fail,
        ..Default::default()
    };
    let app = Router::new()
        .route("/tasks", post(submit))
        .route("/tasks/{id}", get(poll))
        .with_state(state);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}
