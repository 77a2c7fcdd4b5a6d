//! HTTP API over an engine.
//!
//! Reads are served from an immutable view republished after every
//! mutation, so they never wait on a running phase. Mutations run one at a
//! time on a blocking thread and, when the API was given a state directory,
//! are saved there before the response is sent.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::watch;

use super::{Decision, Engine, EngineError, ProjectState};
use crate::ingestion::PaperRecord;
use crate::transcript::Event;
use crate::world_model::WorldModel;

struct View {
    wm: WorldModel,
    projects: BTreeMap<String, ProjectState>,
}

impl View {
    fn of(engine: &Engine) -> Self {
        View {
            wm: engine.world_model().clone(),
            projects: engine.projects().map(|p| (p.id.clone(), p.clone())).collect(),
        }
    }
}

struct Shared {
    engine: Mutex<Engine>,
    view: RwLock<Arc<View>>,
    version: watch::Sender<u64>,
    persist: Option<PathBuf>,
}

#[derive(Clone)]
pub struct ApiState {
    shared: Arc<Shared>,
}

impl ApiState {
    /// `persist` names a state directory saved after every mutation.
    pub fn new(engine: Engine, persist: Option<PathBuf>) -> Self {
        let view = Arc::new(View::of(&engine));
        ApiState {
            shared: Arc::new(Shared {
                engine: Mutex::new(engine),
                view: RwLock::new(view),
                version: watch::channel(0).0,
                persist,
            }),
        }
    }

    fn view(&self) -> Arc<View> {
        self.shared.view.read().expect("view lock poisoned").clone()
    }

    /// Runs `f` with exclusive access to the engine.
    pub fn with_engine<T>(&self, f: impl FnOnce(&Engine) -> T) -> T {
        f(&self.shared.engine.lock().expect("engine lock poisoned"))
    }

    async fn mutate<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Engine) -> Result<T, EngineError> + Send + 'static,
    {
        let shared = Arc::clone(&self.shared);
        tokio::task::spawn_blocking(move || {
            let mut engine = shared.engine.lock().expect("engine lock poisoned");
            let out = f(&mut engine)?;
            if let Some(dir) = &shared.persist {
                engine.save_dir(dir)?;
            }
            *shared.view.write().expect("view lock poisoned") = Arc::new(View::of(&engine));
            shared.version.send_modify(|v| *v += 1);
            Ok(out)
        })
        .await
        .map_err(|e| ApiError(EngineError::Io(format!("worker failed: {e}"))))?
    }
}

pub struct ApiError(pub EngineError);

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            EngineError::UnknownProject(_) => StatusCode::NOT_FOUND,
            e if e.is_conflict() => StatusCode::CONFLICT,
            EngineError::EmptyInterest
            | EngineError::Bootstrap(_)
            | EngineError::TooManySeeds(_)
            | EngineError::InvalidProjectId(_)
            | EngineError::UnknownCategory(_) => StatusCode::BAD_REQUEST,
            EngineError::Gateway(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({"error": self.0.to_string()}))).into_response()
    }
}

fn project<'a>(view: &'a View, id: &str) -> Result<&'a ProjectState, ApiError> {
    view.projects
        .get(id)
        .ok_or_else(|| ApiError(EngineError::UnknownProject(id.to_owned())))
}

pub fn router(state: ApiState) -> Router {
    Router::new()
        .route("/projects", get(list_projects).post(start_project))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/graph", get(graph))
        .route("/projects/{id}/gaps", get(gaps))
        .route("/projects/{id}/decisions", get(decisions).post(submit_decision))
        .route("/projects/{id}/transcript", get(transcript))
        .route("/projects/{id}/advance", post(advance))
        .with_state(state)
}

pub async fn bind(addr: &str) -> Result<TcpListener, EngineError> {
    TcpListener::bind(addr)
        .await
        .map_err(|e| EngineError::Io(format!("cannot bind {addr}: {e}")))
}

pub async fn serve(state: ApiState, listener: TcpListener) -> Result<(), EngineError> {
    axum::serve(listener, router(state))
        .await
        .map_err(|e| EngineError::Io(format!("server stopped: {e}")))
}

async fn list_projects(State(s): State<ApiState>) -> Response {
    let view = s.view();
    let list: Vec<_> = view.projects.values().map(ProjectState::summary).collect();
    Json(list).into_response()
}

#[derive(Deserialize)]
struct StartRequest {
    id: String,
    interest: String,
    #[serde(default)]
    seeds: Vec<PaperRecord>,
}

async fn start_project(State(s): State<ApiState>, Json(req): Json<StartRequest>) -> Result<Response, ApiError> {
    let summary = s
        .mutate(move |e| e.start_project(&req.id, &req.interest, req.seeds).map(ProjectState::summary))
        .await?;
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

async fn get_project(State(s): State<ApiState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let view = s.view();
    Ok(Json(project(&view, &id)?.summary()).into_response())
}

async fn graph(State(s): State<ApiState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let view = s.view();
    project(&view, &id)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], view.wm.to_canonical_json()).into_response())
}

async fn gaps(State(s): State<ApiState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let view = s.view();
    Ok(Json(project(&view, &id)?.gaps(&view.wm)).into_response())
}

async fn decisions(State(s): State<ApiState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let view = s.view();
    let p = project(&view, &id)?;
    Ok(Json(json!({"pending": p.pending, "history": p.decisions})).into_response())
}

async fn submit_decision(
    State(s): State<ApiState>,
    Path(id): Path<String>,
    Json(d): Json<Decision>,
) -> Result<Response, ApiError> {
    let summary = s
        .mutate(move |e| e.submit_decision(&id, &d).map(ProjectState::summary))
        .await?;
    Ok(Json(summary).into_response())
}

async fn advance(State(s): State<ApiState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let report = s.mutate(move |e| e.advance(&id)).await?;
    Ok(Json(report).into_response())
}

#[derive(Deserialize)]
struct TranscriptQuery {
    after: Option<u64>,
    follow: Option<bool>,
}

struct Cursor {
    state: ApiState,
    project: String,
    from: u64,
    follow: bool,
    changes: watch::Receiver<u64>,
}

fn sse_event(e: &Event) -> SseEvent {
    let kind = serde_json::to_value(e.kind).ok();
    let kind = kind.as_ref().and_then(|k| k.as_str()).unwrap_or("event");
    SseEvent::default()
        .id(e.seq.to_string())
        .event(kind)
        .json_data(e)
        .expect("events serialize")
}

/// Replays the project transcript after `Last-Event-ID` (or `?after=`),
/// then follows new events unless `?follow=false`.
async fn transcript(
    State(s): State<ApiState>,
    Path(id): Path<String>,
    Query(q): Query<TranscriptQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let changes = s.shared.version.subscribe();
    project(&s.view(), &id)?;
    let last = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .or(q.after);
    let cursor = Cursor {
        state: s,
        project: id,
        from: last.map_or(0, |l| l + 1),
        follow: q.follow.unwrap_or(true),
        changes,
    };
    let events = stream::unfold(cursor, |mut c| async move {
        loop {
            let batch: Vec<Event> = {
                let view = c.state.view();
                view.projects
                    .get(&c.project)
                    .map(|p| p.transcript.events().iter().filter(|e| e.seq >= c.from).cloned().collect())
                    .unwrap_or_default()
            };
            if let Some(last) = batch.last() {
                c.from = last.seq + 1;
                return Some((batch, c));
            }
            if !c.follow || c.changes.changed().await.is_err() {
                return None;
            }
        }
    })
    .flat_map(|batch| stream::iter(batch.into_iter().map(|e| Ok(sse_event(&e)))));
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}
