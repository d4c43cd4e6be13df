//! HTTP/JSON layer through which a human teacher scores a live run.
//!
//! The trainer and the service share nothing mutable. The trainer publishes
//! queries and immutable snapshots on one channel; every write from a client
//! goes back to the trainer on another channel.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path as FsPath, PathBuf};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::buffers::TrajectoryId;
use crate::envs::SceneAnnotation;
use crate::trainer::{EvalPoint, Phase};

pub const DEFAULT_PORT: u16 = 8080;
pub const MAX_RENDER_POINTS: usize = 200;
pub const MAX_REFERENCES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStatus {
    Pending,
    Scored,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderData {
    pub positions: Vec<[f64; 2]>,
    pub annotations: Vec<SceneAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreQuery {
    pub query_id: u64,
    pub trajectory_id: TrajectoryId,
    pub render: RenderData,
    pub predicted_return: f64,
    /// Training episode at which the query was issued.
    pub created_at: u64,
    pub status: QueryStatus,
}

/// A member of D as seen by the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSummary {
    pub trajectory_id: TrajectoryId,
    pub score: f64,
    pub predicted_return: f64,
    pub render: RenderData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub episode: usize,
    pub episodes: usize,
    pub phase: Phase,
    pub dataset_size: usize,
    pub budget_used: usize,
    pub budget: usize,
    pub pending: usize,
    pub finished: bool,
    pub eval_curve: Vec<EvalPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub status: StatusReport,
    pub scoring_range: (f64, f64),
    pub scored: Vec<ScoredSummary>,
}

impl RunSnapshot {
    pub fn empty(scoring_range: (f64, f64)) -> Self {
        Self {
            status: StatusReport {
                episode: 0,
                episodes: 0,
                phase: Phase::Fast,
                dataset_size: 0,
                budget_used: 0,
                budget: 0,
                pending: 0,
                finished: false,
                eval_curve: Vec::new(),
            },
            scoring_range,
            scored: Vec::new(),
        }
    }
}

/// Trainer to service.
#[derive(Debug, Clone)]
pub enum TrainerEvent {
    Queries(Vec<ScoreQuery>),
    Snapshot(Arc<RunSnapshot>),
}

/// Service to trainer.
#[derive(Debug, Clone, PartialEq)]
pub enum TeacherCommand {
    Score { query_id: u64, score: f64 },
    Revise { trajectory_id: TrajectoryId, score: f64 },
    Skip { query_id: u64 },
    Phase(Phase),
}

/// The trainer's ends of the two queues.
#[derive(Debug)]
pub struct TrainerLink {
    pub events: Sender<TrainerEvent>,
    pub commands: Receiver<TeacherCommand>,
}

/// The service's ends of the two queues.
#[derive(Debug)]
pub struct ServiceLink {
    pub events: Receiver<TrainerEvent>,
    pub commands: Sender<TeacherCommand>,
}

pub fn link() -> (TrainerLink, ServiceLink) {
    let (ev_tx, ev_rx) = mpsc::channel();
    let (cmd_tx, cmd_rx) = mpsc::channel();
    (
        TrainerLink {
            events: ev_tx,
            commands: cmd_rx,
        },
        ServiceLink {
            events: ev_rx,
            commands: cmd_tx,
        },
    )
}

/// Evenly spaced subsequence of at most [`MAX_RENDER_POINTS`] points that
/// keeps both endpoints.
pub fn downsample(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = points.len();
    if n <= MAX_RENDER_POINTS {
        return points.to_vec();
    }
    let m = MAX_RENDER_POINTS;
    (0..m).map(|k| points[(k * (n - 1) + (m - 1) / 2) / (m - 1)]).collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DtwError {
    #[error("dtw needs two non-empty series")]
    EmptySeries,
}

/// Classic dynamic time warping with Euclidean point cost and no window.
pub fn dtw_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64, DtwError> {
    if a.is_empty() || b.is_empty() {
        return Err(DtwError::EmptySeries);
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for p in a {
        cur[0] = f64::INFINITY;
        for (j, q) in b.iter().enumerate() {
            let cost = (p[0] - q[0]).hypot(p[1] - q[1]);
            cur[j + 1] = cost + prev[j].min(prev[j + 1]).min(cur[j]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceCriterion {
    PredictedReturn,
    Dtw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub trajectory_id: TrajectoryId,
    pub score: f64,
    pub predicted_return: f64,
    pub criterion: ReferenceCriterion,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub trajectory_id: TrajectoryId,
    pub references: Vec<Reference>,
}

/// Up to two members of `scored` closest in predicted return, then up to two
/// more closest by DTW over positions, skipping any already chosen. The query
/// trajectory itself is never its own reference.
pub fn select_references(
    query_id: TrajectoryId,
    query_positions: &[[f64; 2]],
    query_predicted: f64,
    scored: &[ScoredSummary],
) -> Vec<Reference> {
    let pool: Vec<&ScoredSummary> = scored.iter().filter(|s| s.trajectory_id != query_id).collect();
    let mut by_return: Vec<(f64, &ScoredSummary)> = pool
        .iter()
        .map(|s| ((s.predicted_return - query_predicted).abs(), *s))
        .collect();
    by_return.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.trajectory_id.cmp(&b.1.trajectory_id)));
    let mut out: Vec<Reference> = by_return
        .iter()
        .take(MAX_REFERENCES / 2)
        .map(|&(d, s)| Reference {
            trajectory_id: s.trajectory_id,
            score: s.score,
            predicted_return: s.predicted_return,
            criterion: ReferenceCriterion::PredictedReturn,
            distance: d,
        })
        .collect();
    let mut by_dtw: Vec<(f64, &ScoredSummary)> = pool
        .iter()
        .filter(|s| !out.iter().any(|r| r.trajectory_id == s.trajectory_id))
        .filter_map(|s| dtw_distance(query_positions, &s.render.positions).ok().map(|d| (d, *s)))
        .collect();
    by_dtw.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.trajectory_id.cmp(&b.1.trajectory_id)));
    out.extend(by_dtw.iter().take(MAX_REFERENCES - out.len()).map(|&(d, s)| Reference {
        trajectory_id: s.trajectory_id,
        score: s.score,
        predicted_return: s.predicted_return,
        criterion: ReferenceCriterion::Dtw,
        distance: d,
    }));
    out
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("trainer is no longer accepting commands")]
    TrainerGone,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let code = match self {
            ApiError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::TrainerGone => StatusCode::SERVICE_UNAVAILABLE,
        };
        (code, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

struct Inner {
    queries: BTreeMap<u64, ScoreQuery>,
    snapshot: Arc<RunSnapshot>,
    /// Scores accepted by the service that the latest snapshot may not show yet.
    accepted: HashMap<TrajectoryId, f64>,
}

/// Shared handler state. Reads come from the latest snapshot; writes are
/// validated here and forwarded to the trainer.
pub struct ServiceState {
    inner: Mutex<Inner>,
    events: Mutex<Receiver<TrainerEvent>>,
    commands: Mutex<Sender<TeacherCommand>>,
}

impl ServiceState {
    pub fn new(link: ServiceLink, scoring_range: (f64, f64)) -> Arc<Self> {
        Arc::new(Self {
            inner: Mutex::new(Inner {
                queries: BTreeMap::new(),
                snapshot: Arc::new(RunSnapshot::empty(scoring_range)),
                accepted: HashMap::new(),
            }),
            events: Mutex::new(link.events),
            commands: Mutex::new(link.commands),
        })
    }

    /// Pulls everything the trainer has published so far.
    fn sync(&self) -> std::sync::MutexGuard<'_, Inner> {
        let mut inner = self.inner.lock().expect("service state poisoned");
        let events = self.events.lock().expect("event queue poisoned");
        while let Ok(ev) = events.try_recv() {
            match ev {
                TrainerEvent::Queries(qs) => {
                    for q in qs {
                        inner.queries.insert(q.query_id, q);
                    }
                }
                TrainerEvent::Snapshot(s) => {
                    for e in &s.scored {
                        if inner.accepted.get(&e.trajectory_id) == Some(&e.score) {
                            inner.accepted.remove(&e.trajectory_id);
                        }
                    }
                    inner.snapshot = s;
                }
            }
        }
        inner
    }

    fn send(&self, cmd: TeacherCommand) -> Result<(), ApiError> {
        self.commands
            .lock()
            .expect("command queue poisoned")
            .send(cmd)
            .map_err(|_| ApiError::TrainerGone)
    }

    fn check_score(range: (f64, f64), score: f64) -> Result<(), ApiError> {
        let (lo, hi) = range;
        if !score.is_finite() || score < lo || score > hi {
            return Err(ApiError::Validation(format!("score {score} outside [{lo}, {hi}]")));
        }
        Ok(())
    }

    pub fn pending_queries(&self) -> Vec<ScoreQuery> {
        self.sync()
            .queries
            .values()
            .filter(|q| q.status == QueryStatus::Pending)
            .cloned()
            .collect()
    }

    pub fn status(&self) -> StatusReport {
        self.sync().snapshot.status.clone()
    }

    pub fn render(&self, id: TrajectoryId) -> Result<RenderData, ApiError> {
        let inner = self.sync();
        if let Some(q) = inner.queries.values().find(|q| q.trajectory_id == id) {
            return Ok(q.render.clone());
        }
        inner
            .snapshot
            .scored
            .iter()
            .find(|s| s.trajectory_id == id)
            .map(|s| s.render.clone())
            .ok_or_else(|| ApiError::NotFound(format!("unknown trajectory {id}")))
    }

    pub fn references(&self, id: TrajectoryId) -> Result<ReferenceSet, ApiError> {
        let inner = self.sync();
        let (positions, predicted) = if let Some(q) = inner.queries.values().find(|q| q.trajectory_id == id) {
            (q.render.positions.clone(), q.predicted_return)
        } else if let Some(s) = inner.snapshot.scored.iter().find(|s| s.trajectory_id == id) {
            (s.render.positions.clone(), s.predicted_return)
        } else {
            return Err(ApiError::NotFound(format!("unknown trajectory {id}")));
        };
        let scored: Vec<ScoredSummary> = inner
            .snapshot
            .scored
            .iter()
            .map(|s| {
                let mut s = s.clone();
                if let Some(&score) = inner.accepted.get(&s.trajectory_id) {
                    s.score = score;
                }
                s
            })
            .collect();
        Ok(ReferenceSet {
            trajectory_id: id,
            references: select_references(id, &positions, predicted, &scored),
        })
    }

    pub fn submit_score(&self, query_id: u64, score: f64) -> Result<(), ApiError> {
        let mut inner = self.sync();
        Self::check_score(inner.snapshot.scoring_range, score)?;
        let q = inner
            .queries
            .get(&query_id)
            .ok_or_else(|| ApiError::NotFound(format!("unknown query {query_id}")))?;
        if q.status != QueryStatus::Pending {
            return Err(ApiError::Conflict(format!("query {query_id} is already {:?}", q.status).to_lowercase()));
        }
        let tid = q.trajectory_id;
        self.send(TeacherCommand::Score { query_id, score })?;
        inner.queries.get_mut(&query_id).expect("checked above").status = QueryStatus::Scored;
        inner.accepted.insert(tid, score);
        Ok(())
    }

    pub fn revise(&self, trajectory_id: TrajectoryId, score: f64) -> Result<(), ApiError> {
        let mut inner = self.sync();
        Self::check_score(inner.snapshot.scoring_range, score)?;
        let known = inner.accepted.contains_key(&trajectory_id)
            || inner.snapshot.scored.iter().any(|s| s.trajectory_id == trajectory_id);
        if !known {
            return Err(ApiError::NotFound(format!("trajectory {trajectory_id} has no score")));
        }
        self.send(TeacherCommand::Revise { trajectory_id, score })?;
        inner.accepted.insert(trajectory_id, score);
        Ok(())
    }

    pub fn skip(&self, query_id: u64) -> Result<(), ApiError> {
        let mut inner = self.sync();
        let q = inner
            .queries
            .get(&query_id)
            .ok_or_else(|| ApiError::NotFound(format!("unknown query {query_id}")))?;
        if q.status != QueryStatus::Pending {
            return Err(ApiError::Conflict(format!("query {query_id} is already {:?}", q.status).to_lowercase()));
        }
        self.send(TeacherCommand::Skip { query_id })?;
        inner.queries.get_mut(&query_id).expect("checked above").status = QueryStatus::Skipped;
        Ok(())
    }

    pub fn set_phase(&self, phase: Phase) -> Result<(), ApiError> {
        self.send(TeacherCommand::Phase(phase))
    }
}

type AppState = (Arc<ServiceState>, Option<Arc<PathBuf>>);

#[derive(Deserialize)]
struct ScoreBody {
    query_id: u64,
    score: f64,
}

#[derive(Deserialize)]
struct ReviseBody {
    score: f64,
}

#[derive(Deserialize)]
struct PhaseBody {
    phase: Phase,
}

fn ack() -> Json<serde_json::Value> {
    Json(json!({ "ok": true }))
}

async fn get_queries(State((s, _)): State<AppState>) -> Json<Vec<ScoreQuery>> {
    Json(s.pending_queries())
}

async fn get_trajectory(State((s, _)): State<AppState>, Path(id): Path<TrajectoryId>) -> Result<Json<RenderData>, ApiError> {
    s.render(id).map(Json)
}

async fn get_references(State((s, _)): State<AppState>, Path(id): Path<TrajectoryId>) -> Result<Json<ReferenceSet>, ApiError> {
    s.references(id).map(Json)
}

async fn post_score(State((s, _)): State<AppState>, Json(body): Json<ScoreBody>) -> Result<Json<serde_json::Value>, ApiError> {
    s.submit_score(body.query_id, body.score).map(|_| ack())
}

async fn post_revise(
    State((s, _)): State<AppState>,
    Path(id): Path<TrajectoryId>,
    Json(body): Json<ReviseBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    s.revise(id, body.score).map(|_| ack())
}

async fn post_skip(State((s, _)): State<AppState>, Path(id): Path<u64>) -> Result<Json<serde_json::Value>, ApiError> {
    s.skip(id).map(|_| ack())
}

async fn get_status(State((s, _)): State<AppState>) -> Json<StatusReport> {
    Json(s.status())
}

async fn post_phase(State((s, _)): State<AppState>, Json(body): Json<PhaseBody>) -> Result<Json<serde_json::Value>, ApiError> {
    s.set_phase(body.phase).map(|_| ack())
}

fn content_type(path: &FsPath) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

async fn static_file(State((_, dir)): State<AppState>, uri: Uri) -> Response {
    let Some(dir) = dir else {
        return StatusCode::NOT_FOUND.into_response();
    };
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    if rel.split('/').any(|part| part == "..") {
        return StatusCode::NOT_FOUND.into_response();
    }
    let path = dir.join(rel);
    match std::fs::read(&path) {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

/// API routes, plus static files from `static_dir` for any other path.
pub fn router(state: Arc<ServiceState>, static_dir: Option<PathBuf>) -> Router {
    Router::new()
        .route("/api/queries", get(get_queries))
        .route("/api/trajectories/{id}", get(get_trajectory))
        .route("/api/references/{id}", get(get_references))
        .route("/api/scores", post(post_score))
        .route("/api/scores/{trajectory_id}/revise", post(post_revise))
        .route("/api/queries/{id}/skip", post(post_skip))
        .route("/api/status", get(get_status))
        .route("/api/phase", post(post_phase))
        .fallback(static_file)
        .with_state((state, static_dir.map(Arc::new)))
}

/// A server running on its own thread.
pub struct ServiceHandle {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn shutdown(mut self) -> std::io::Result<()> {
        self.stop()
    }

    fn stop(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves on a background thread.
pub fn spawn(state: Arc<ServiceState>, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<ServiceHandle> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let app = router(state, static_dir);
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = rx.await;
                })
                .await
        })
    });
    log::info!("scoring service listening on http://{addr}");
    Ok(ServiceHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
