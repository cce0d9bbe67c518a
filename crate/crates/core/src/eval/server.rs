//! HTTP API for the listening test: serves a blinded bundle and collects
//! ratings into a durable JSONL store.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::info;
use serde_json::json;
use tokio::sync::Mutex;
use tower_http::cors::{Any, CorsLayer};

use super::listening::{aggregate_subjective, dedupe_ratings, read_ratings, BundleKey, FieldError, ListeningBundle, RatingRecord, AUDIO_DIR};
use crate::data::write_atomic;
use crate::error::{Error, Result};

/// Append-only JSONL rating log with last-write-wins semantics per
/// (session, item, question). Every append is flushed to disk before it
/// returns.
pub struct RatingStore {
    path: PathBuf,
    file: File,
    latest: BTreeMap<(String, String, String), RatingRecord>,
}

impl RatingStore {
    /// Opens (creating if needed) and compacts superseded entries.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let existing = read_ratings(path)?;
        let deduped = dedupe_ratings(&existing);
        if deduped.len() != existing.len() {
            let mut buf = Vec::new();
            for r in &deduped {
                serde_json::to_writer(&mut buf, r)?;
                buf.push(b'\n');
            }
            write_atomic(path, &buf)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            latest: deduped.into_iter().map(|r| (r.key(), r)).collect(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Returns `true` if the rating replaced an earlier one.
    pub fn upsert(&mut self, rating: RatingRecord) -> Result<bool> {
        let mut line = serde_json::to_vec(&rating)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(self.latest.insert(rating.key(), rating).is_some())
    }

    pub fn ratings(&self) -> Vec<RatingRecord> {
        self.latest.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.latest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latest.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerConfig {
    pub bundle_dir: PathBuf,
    /// Key file; only its anonymised form is ever used by the server.
    pub key_path: Option<PathBuf>,
    pub store_path: PathBuf,
    /// Token for `/api/results`; the endpoint is disabled without one.
    pub admin_token: Option<String>,
    /// Allowed CORS origin; any origin when unset.
    pub cors_origin: Option<String>,
}

pub struct AppState {
    bundle: ListeningBundle,
    bundle_dir: PathBuf,
    key: Option<BundleKey>,
    store: Mutex<RatingStore>,
    admin_token: Option<String>,
}

impl AppState {
    pub fn load(cfg: &ServerConfig) -> Result<Self> {
        let bundle = ListeningBundle::load(&cfg.bundle_dir)?;
        let key = match &cfg.key_path {
            Some(p) => {
                let key = BundleKey::load(p)?;
                if key.bundle_id != bundle.bundle_id {
                    return Err(Error::InvalidInput(format!(
                        "key {} belongs to bundle `{}`, not `{}`",
                        p.display(),
                        key.bundle_id,
                        bundle.bundle_id
                    )));
                }
                Some(key.anonymized())
            }
            None => None,
        };
        Ok(Self {
            bundle,
            bundle_dir: cfg.bundle_dir.clone(),
            key,
            store: Mutex::new(RatingStore::open(&cfg.store_path)?),
            admin_token: cfg.admin_token.clone(),
        })
    }
}

fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn field_errors(errors: Vec<FieldError>) -> Response {
    (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "errors": errors }))).into_response()
}

fn internal(e: Error) -> Response {
    log::error!("rating API: {e}");
    (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": "internal error" }))).into_response()
}

async fn health(State(st): State<Arc<AppState>>) -> Response {
    let n = st.store.lock().await.len();
    Json(json!({ "status": "ok", "bundle_id": st.bundle.bundle_id, "ratings": n })).into_response()
}

async fn bundle(State(st): State<Arc<AppState>>) -> Response {
    Json(&st.bundle).into_response()
}

async fn audio(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let id = id.strip_suffix(".wav").unwrap_or(&id);
    if !st.bundle.audio_ids().contains(id) {
        return (StatusCode::NOT_FOUND, Json(json!({ "error": "unknown audio id" }))).into_response();
    }
    match tokio::fs::read(st.bundle_dir.join(AUDIO_DIR).join(format!("{id}.wav"))).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, HeaderValue::from_static("audio/wav"))], Body::from(bytes)).into_response(),
        Err(e) => internal(e.into()),
    }
}

async fn post_rating(State(st): State<Arc<AppState>>, body: Bytes) -> Response {
    let mut value: serde_json::Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return field_errors(vec![FieldError { field: "body".into(), message: e.to_string() }]),
    };
    if let Some(obj) = value.as_object_mut() {
        obj.entry("timestamp").or_insert_with(|| json!(now_millis()));
    }
    let rating: RatingRecord = match serde_json::from_value(value) {
        Ok(r) => r,
        Err(e) => return field_errors(vec![FieldError { field: "body".into(), message: e.to_string() }]),
    };
    if let Err(errs) = rating.validate() {
        return field_errors(errs);
    }
    match st.bundle.item_kind(&rating.utterance_id) {
        None => return (StatusCode::NOT_FOUND, Json(json!({ "error": "unknown item id" }))).into_response(),
        Some(kind) if kind != rating.kind => {
            return field_errors(vec![FieldError {
                field: "kind".into(),
                message: format!("item `{}` takes {kind:?} ratings", rating.utterance_id),
            }])
        }
        Some(_) => {}
    }
    let replaced = match st.store.lock().await.upsert(rating.clone()) {
        Ok(r) => r,
        Err(e) => return internal(e),
    };
    let status = if replaced { StatusCode::OK } else { StatusCode::CREATED };
    (status, Json(rating)).into_response()
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
}

async fn results(State(st): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    let Some(token) = &st.admin_token else {
        return (StatusCode::FORBIDDEN, Json(json!({ "error": "results endpoint disabled" }))).into_response();
    };
    if bearer(&headers) != Some(token.as_str()) {
        return (StatusCode::UNAUTHORIZED, Json(json!({ "error": "admin token required" }))).into_response();
    }
    let Some(key) = &st.key else {
        return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "error": "no bundle key loaded" }))).into_response();
    };
    let ratings = st.store.lock().await.ratings();
    Json(aggregate_subjective(&ratings, &st.bundle, key)).into_response()
}

pub fn router(state: Arc<AppState>, cors_origin: Option<&str>) -> Result<Router> {
    let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let cors = match cors_origin {
        Some(o) => cors.allow_origin(HeaderValue::from_str(o).map_err(|e| Error::Config(format!("bad CORS origin `{o}`: {e}")))?),
        None => cors.allow_origin(Any),
    };
    Ok(Router::new()
        .route("/api/health", get(health))
        .route("/api/bundle", get(bundle))
        .route("/api/audio/{id}", get(audio))
        .route("/api/ratings", post(post_rating))
        .route("/api/results", get(results))
        .layer(cors)
        .with_state(state))
}

/// Runs the API until Ctrl-C.
pub async fn serve_rating_api(cfg: &ServerConfig, addr: SocketAddr) -> Result<()> {
    let state = Arc::new(AppState::load(cfg)?);
    let app = router(state, cfg.cors_origin.as_deref())?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("rating API listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
