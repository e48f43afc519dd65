use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot};
use tower_http::services::ServeDir;

use crate::log::DecisionLog;
use crate::queue::{Choice, QueueItem, QueueStore, ReviewDecision};
use crate::{Error, Result};

pub const DEFAULT_PORT: u16 = 8713;

type WriteRequest = (ReviewDecision, oneshot::Sender<Result<QueueItem>>);

/// Shared service state. Reads take the lock directly; decisions go through
/// one writer thread that owns the log, so log order and state agree.
#[derive(Clone)]
pub struct AppState {
    store: Arc<RwLock<QueueStore>>,
    writer: mpsc::Sender<WriteRequest>,
}

impl AppState {
    /// Replays `log` over `store` and starts the writer.
    pub fn new(mut store: QueueStore, log: DecisionLog) -> Result<Self> {
        log.replay(&mut store)?;
        let store = Arc::new(RwLock::new(store));
        let (tx, rx) = mpsc::channel(64);
        let shared = Arc::clone(&store);
        std::thread::spawn(move || write_loop(log, shared, rx));
        Ok(Self { store, writer: tx })
    }

    pub fn snapshot(&self) -> QueueStore {
        self.store.read().expect("queue lock").clone()
    }
}

fn write_loop(mut log: DecisionLog, store: Arc<RwLock<QueueStore>>, mut rx: mpsc::Receiver<WriteRequest>) {
    while let Some((decision, reply)) = rx.blocking_recv() {
        let result = (|| {
            if !store.read().expect("queue lock").items.contains_key(&decision.id) {
                return Err(Error::UnknownId(decision.id.clone()));
            }
            log.append(&decision)?;
            let mut guard = store.write().expect("queue lock");
            guard.apply(decision.clone())?;
            Ok(guard.items[&decision.id].clone())
        })();
        let _ = reply.send(result);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub id: String,
    pub choice: Choice,
    #[serde(default)]
    pub reviewer: String,
    #[serde(default)]
    pub note: String,
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

async fn queue(State(state): State<AppState>) -> Json<Vec<QueueItem>> {
    let store = state.store.read().expect("queue lock");
    Json(store.pending().into_iter().cloned().collect())
}

async fn item(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    let store = state.store.read().expect("queue lock");
    match store.items.get(&id) {
        Some(item) => Json(item.clone()).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown id `{id}`")),
    }
}

async fn media(State(state): State<AppState>, UrlPath((id, file)): UrlPath<(String, String)>) -> Response {
    let store = state.store.read().expect("queue lock");
    let Some(m) = store.media.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown id `{id}`"));
    };
    let bytes = match file.as_str() {
        "image.png" => &m.image,
        "labels.png" => &m.labels,
        "rps.png" => &m.rps,
        _ => return error(StatusCode::NOT_FOUND, format!("no media `{file}`")),
    };
    ([(header::CONTENT_TYPE, "image/png")], bytes.clone()).into_response()
}

async fn decide(State(state): State<AppState>, Json(req): Json<DecisionRequest>) -> Response {
    let decision = ReviewDecision {
        id: req.id,
        choice: req.choice,
        reviewer: req.reviewer,
        note: req.note,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
    };
    let (tx, rx) = oneshot::channel();
    if state.writer.send((decision, tx)).await.is_err() {
        return error(StatusCode::SERVICE_UNAVAILABLE, "decision writer stopped");
    }
    match rx.await {
        Ok(Ok(item)) => Json(item).into_response(),
        Ok(Err(e @ Error::UnknownId(_))) => error(StatusCode::NOT_FOUND, e.to_string()),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(_) => error(StatusCode::SERVICE_UNAVAILABLE, "decision writer stopped"),
    }
}

/// The HTTP API, plus static files from `static_dir` at `/` when given.
pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/queue", get(queue))
        .route("/api/item/{id}", get(item))
        .route("/api/decision", post(decide))
        .route("/media/{id}/{file}", get(media))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until the process stops.
pub async fn serve(state: AppState, addr: SocketAddr, static_dir: Option<&Path>) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state, static_dir)).await?;
    Ok(())
}
