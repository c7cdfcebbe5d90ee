//! HTTP session API for annotation mode.
//!
//! Each session's state machine sits behind an async mutex (single
//! writer). Readers poll a published [`View`] through a watch channel, so
//! `query` and `status` never wait on a retrain. Retraining and scoring run
//! on the blocking pool; the snapshot is rewritten after every transition
//! so a restarted server resumes where it stopped.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query as UrlQuery, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{error, info, warn};
use ndarray::Array2;
use prepal_core::dataset::{load_embeddings, DatasetManifest};
use prepal_core::protocol::{
    Label, Progress, Query, Session, SessionConfig, SessionSnapshot, SessionStatus,
};
use prepal_core::Error as CoreError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::{watch, Mutex};

use crate::config::{from_json_str, resolve};
use crate::error::{CliError, Result};

const REGISTRY: &str = "datasets.json";
const SESSIONS: &str = "sessions";

/// A registered dataset, loaded once and shared by its sessions.
struct Dataset {
    spec: DatasetSpec,
    features: Arc<Array2<f64>>,
    manifest: Arc<DatasetManifest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Defaults to the manifest's name.
    #[serde(default)]
    pub name: Option<String>,
    pub embeddings: PathBuf,
    pub manifest: PathBuf,
}

/// What pollers see of a session.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct View {
    pub status: SessionStatus,
    pub pending: Option<Query>,
    /// Pending documents without an answer yet.
    pub remaining: Vec<usize>,
    pub progress: Progress,
    pub last_cycle_seconds: Option<f64>,
    /// Set when the last retrain failed; the session stays in `retraining`.
    pub error: Option<String>,
}

impl View {
    fn of(session: &Session, error: Option<String>) -> Self {
        Self {
            status: session.status(),
            pending: session.pending().cloned(),
            remaining: session.unanswered().map(|q| q.indices).unwrap_or_default(),
            progress: session.progress(),
            last_cycle_seconds: session.last_cycle_seconds(),
            error,
        }
    }
}

struct Entry {
    id: String,
    dataset: String,
    session: Mutex<Session>,
    view: watch::Sender<View>,
}

#[derive(Serialize, Deserialize)]
struct Persisted {
    id: String,
    dataset: String,
    snapshot: SessionSnapshot,
}

pub struct AppState {
    root: PathBuf,
    datasets: RwLock<HashMap<String, Arc<Dataset>>>,
    sessions: RwLock<HashMap<String, Arc<Entry>>>,
}

impl AppState {
    /// Opens `root`, reloading registered datasets and persisted sessions.
    pub fn open(root: impl Into<PathBuf>) -> Result<Arc<Self>> {
        let root = root.into();
        let sessions_dir = root.join(SESSIONS);
        fs::create_dir_all(&sessions_dir).map_err(|e| CliError::io(&sessions_dir, e))?;
        let state = Arc::new(Self {
            root,
            datasets: RwLock::new(HashMap::new()),
            sessions: RwLock::new(HashMap::new()),
        });
        let registry = state.root.join(REGISTRY);
        if registry.exists() {
            let text = fs::read_to_string(&registry).map_err(|e| CliError::io(&registry, e))?;
            let specs: Vec<DatasetSpec> = serde_json::from_str(&text).map_err(prepal_core::Error::from)?;
            for spec in specs {
                let dataset = state.load_dataset(spec)?;
                let name = dataset.spec.name.clone().expect("registered names are filled");
                state.datasets.write().expect("lock").insert(name, Arc::new(dataset));
            }
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&sessions_dir)
            .map_err(|e| CliError::io(&sessions_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let saved: Persisted = serde_json::from_str(&text).map_err(prepal_core::Error::from)?;
            let Some(dataset) = state.dataset(&saved.dataset) else {
                warn!("session {} refers to unknown dataset {}", saved.id, saved.dataset);
                continue;
            };
            let session = Session::restore(saved.snapshot, dataset.features.clone(), dataset.manifest.clone())?;
            state.insert(saved.id, saved.dataset, session);
        }
        Ok(state)
    }

    fn load_dataset(&self, spec: DatasetSpec) -> Result<Dataset> {
        let root = Some(self.root.as_path());
        let embeddings = load_embeddings(resolve(root, &spec.embeddings))?;
        let manifest = DatasetManifest::load(resolve(root, &spec.manifest))?;
        manifest.validate()?;
        if embeddings.rows() != manifest.n {
            return Err(CoreError::Validation(format!(
                "manifest describes {} documents but the embeddings have {} rows",
                manifest.n,
                embeddings.rows()
            ))
            .into());
        }
        let name = spec.name.clone().unwrap_or_else(|| manifest.name.clone());
        Ok(Dataset {
            spec: DatasetSpec {
                name: Some(name),
                ..spec
            },
            features: Arc::new(embeddings.to_f64()),
            manifest: Arc::new(manifest),
        })
    }

    fn dataset(&self, name: &str) -> Option<Arc<Dataset>> {
        self.datasets.read().expect("lock").get(name).cloned()
    }

    fn entry(&self, id: &str) -> Option<Arc<Entry>> {
        self.sessions.read().expect("lock").get(id).cloned()
    }

    fn insert(&self, id: String, dataset: String, session: Session) -> Arc<Entry> {
        let (view, _) = watch::channel(View::of(&session, None));
        let entry = Arc::new(Entry {
            id: id.clone(),
            dataset,
            session: Mutex::new(session),
            view,
        });
        self.sessions.write().expect("lock").insert(id, entry.clone());
        entry
    }

    fn save_registry(&self) -> Result<()> {
        let mut specs: Vec<DatasetSpec> = self
            .datasets
            .read()
            .expect("lock")
            .values()
            .map(|d| d.spec.clone())
            .collect();
        specs.sort_by(|a, b| a.name.cmp(&b.name));
        let text = serde_json::to_string_pretty(&specs).map_err(prepal_core::Error::from)?;
        write_atomic(&self.root.join(REGISTRY), text.as_bytes())
    }

    fn persist(&self, entry: &Entry, session: &Session) -> Result<()> {
        let saved = Persisted {
            id: entry.id.clone(),
            dataset: entry.dataset.clone(),
            snapshot: session.snapshot().clone(),
        };
        let text = serde_json::to_vec(&saved).map_err(prepal_core::Error::from)?;
        write_atomic(&self.root.join(SESSIONS).join(format!("{}.json", entry.id)), &text)
    }

    /// Starts retraining for every restored session that was mid-cycle.
    pub fn resume(self: &Arc<Self>) {
        let entries: Vec<Arc<Entry>> = self.sessions.read().expect("lock").values().cloned().collect();
        for entry in entries {
            if entry.view.borrow().status == SessionStatus::Retraining {
                info!("resuming session {}", entry.id);
                spawn_advance(self.clone(), entry);
            }
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Retrains and scores the next batch off the request path.
fn spawn_advance(state: Arc<AppState>, entry: Arc<Entry>) -> tokio::task::JoinHandle<()> {
    tokio::task::spawn_blocking(move || {
        let mut session = entry.session.blocking_lock();
        if session.status() != SessionStatus::Retraining {
            return;
        }
        let advanced = session.advance().map_err(CliError::from);
        let failure = advanced
            .and_then(|()| state.persist(&entry, &session))
            .err()
            .map(|e| {
                error!("session {}: {e}", entry.id);
                e.to_string()
            });
        entry.view.send_replace(View::of(&session, failure));
    })
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/datasets", post(register_dataset))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/query", get(next_query))
        .route("/sessions/{id}/labels", post(submit_labels))
        .route("/sessions/{id}/status", get(session_status))
        .route("/sessions/{id}/export", get(export_session))
        .with_state(state)
}

/// Serves until the listener fails or ctrl-c arrives.
pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    state.resume();
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// An error response: status code plus a JSON body.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown {what} {id:?}"))
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let message = e.to_string();
        match e {
            CoreError::Rejected { index, .. } => Self {
                status: StatusCode::CONFLICT,
                body: json!({ "error": message, "index": index }),
            },
            CoreError::NotReady(_) => Self::new(StatusCode::CONFLICT, message),
            CoreError::InvalidArgument { field, .. } => Self {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: json!({ "error": message, "field": field }),
            },
            CoreError::Validation(_)
            | CoreError::Format(_)
            | CoreError::SizeMismatch { .. }
            | CoreError::UnlabeledInBenchmark { .. }
            | CoreError::Unsupported(_)
            | CoreError::Configuration(_)
            | CoreError::IncompatibleBackbones { .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
            }
            CoreError::Io { .. } => Self::new(StatusCode::BAD_REQUEST, message),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, message),
        }
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        match e {
            CliError::Core(e) => e.into(),
            CliError::Io { .. } => Self::new(StatusCode::BAD_REQUEST, e.to_string()),
            other => Self::new(StatusCode::UNPROCESSABLE_ENTITY, other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// Parses a request body, naming the offending field on failure.
fn parse<T: serde::de::DeserializeOwned>(body: &str) -> ApiResult<T> {
    from_json_str(body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e))
}

async fn register_dataset(State(state): State<Arc<AppState>>, body: String) -> ApiResult<Response> {
    let spec: DatasetSpec = parse(&body)?;
    let loader = state.clone();
    let dataset = tokio::task::spawn_blocking(move || loader.load_dataset(spec))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let name = dataset.spec.name.clone().expect("filled by load_dataset");
    let info = json!({
        "name": name,
        "n": dataset.manifest.n,
        "dims": dataset.features.ncols(),
        "num_classes": dataset.manifest.num_classes,
    });
    {
        let mut datasets = state.datasets.write().expect("lock");
        if let Some(existing) = datasets.get(&name) {
            if existing.spec == dataset.spec {
                return Ok((StatusCode::OK, Json(info)).into_response());
            }
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("dataset {name:?} is already registered with other files"),
            ));
        }
        datasets.insert(name, Arc::new(dataset));
    }
    state.save_registry()?;
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    dataset: String,
    #[serde(default)]
    config: SessionConfig,
}

async fn create_session(State(state): State<Arc<AppState>>, body: String) -> ApiResult<Response> {
    let request: CreateSession = parse(&body)?;
    let dataset = state
        .dataset(&request.dataset)
        .ok_or_else(|| ApiError::not_found("dataset", &request.dataset))?;
    let session = Session::new(dataset.features.clone(), dataset.manifest.clone(), request.config)?;
    let id = uuid::Uuid::new_v4().to_string();
    let entry = state.insert(id.clone(), request.dataset, session);
    let status = {
        let session = entry.session.lock().await;
        state.persist(&entry, &session)?;
        session.status()
    };
    if status == SessionStatus::Retraining {
        spawn_advance(state.clone(), entry);
    }
    info!("created session {id}");
    Ok((StatusCode::CREATED, Json(json!({ "id": id, "status": status }))).into_response())
}

fn retry_later(view: &View) -> Response {
    (
        StatusCode::ACCEPTED,
        [(header::RETRY_AFTER, "1")],
        Json(json!({
            "status": view.status,
            "progress": view.progress,
            "error": view.error,
        })),
    )
        .into_response()
}

async fn next_query(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let entry = state.entry(&id).ok_or_else(|| ApiError::not_found("session", &id))?;
    let view = entry.view.borrow().clone();
    match (view.status, &view.pending) {
        (SessionStatus::AwaitingLabels, Some(query)) => {
            let texts = state.dataset(&entry.dataset).and_then(|d| {
                d.manifest
                    .texts
                    .as_ref()
                    .map(|t| query.indices.iter().map(|&i| t[i].clone()).collect::<Vec<_>>())
            });
            Ok(Json(json!({
                "status": view.status,
                "iteration": query.iteration,
                "indices": query.indices,
                "scores": query.scores,
                "texts": texts,
                "remaining": view.remaining,
                "progress": view.progress,
            }))
            .into_response())
        }
        (SessionStatus::Complete, _) => Ok(Json(json!({
            "status": view.status,
            "done": true,
            "labeled": view.progress.labeled,
            "progress": view.progress,
        }))
        .into_response()),
        _ => Ok(retry_later(&view)),
    }
}

#[derive(Deserialize)]
struct SubmitParams {
    #[serde(default)]
    wait: bool,
}

async fn submit_labels(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    UrlQuery(params): UrlQuery<SubmitParams>,
    body: String,
) -> ApiResult<Response> {
    let entry = state.entry(&id).ok_or_else(|| ApiError::not_found("session", &id))?;
    let labels: BTreeMap<usize, Label> = parse(&body)?;
    let answers: Vec<(usize, Label)> = labels.into_iter().collect();
    let outcome = {
        let mut session = entry.session.lock().await;
        let outcome = session.submit(&answers)?;
        state.persist(&entry, &session)?;
        entry.view.send_replace(View::of(&session, None));
        outcome
    };
    if outcome.status == SessionStatus::Retraining {
        let task = spawn_advance(state.clone(), entry.clone());
        if params.wait {
            task.await
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        }
    }
    // Without `wait` the cycle time is the previous retrain's.
    let view = entry.view.borrow().clone();
    Ok(Json(json!({
        "status": view.status,
        "accepted": outcome.accepted,
        "remaining": outcome.remaining,
        "iteration": view.pending.as_ref().map(|q| q.iteration),
        "progress": view.progress,
        "last_cycle_seconds": view.last_cycle_seconds,
        "error": view.error,
    }))
    .into_response())
}

async fn session_status(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let entry = state.entry(&id).ok_or_else(|| ApiError::not_found("session", &id))?;
    let view = entry.view.borrow().clone();
    Ok(Json(json!({
        "id": entry.id,
        "dataset": entry.dataset,
        "status": view.status,
        "iteration": view.pending.as_ref().map(|q| q.iteration),
        "progress": view.progress,
        "last_cycle_seconds": view.last_cycle_seconds,
        "error": view.error,
    }))
    .into_response())
}

#[derive(Deserialize)]
struct ExportParams {
    #[serde(default)]
    partial: bool,
    #[serde(default)]
    format: Option<String>,
}

async fn export_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    UrlQuery(params): UrlQuery<ExportParams>,
) -> ApiResult<Response> {
    let entry = state.entry(&id).ok_or_else(|| ApiError::not_found("session", &id))?;
    let record = entry.session.lock().await.export(params.partial)?;
    match params.format.as_deref() {
        None | Some("json") => Ok((
            [(header::CONTENT_TYPE, "application/json")],
            record.to_json()?,
        )
            .into_response()),
        Some("csv") => Ok(([(header::CONTENT_TYPE, "text/csv")], record.index_csv()?).into_response()),
        Some(other) => Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("unknown export format {other:?}, expected json or csv"),
        )),
    }
}
