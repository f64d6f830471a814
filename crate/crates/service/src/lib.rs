//! HTTP/JSON service over the engine.
//!
//! | method | path                        | body                    | reply                |
//! |--------|-----------------------------|-------------------------|----------------------|
//! | GET    | `/health`                   |                         | `"ok"`               |
//! | GET    | `/programs`                 |                         | bundled names        |
//! | GET    | `/programs/{name}`          |                         | `BuiltinProgram`     |
//! | POST   | `/validate`                 | `ValidateRequest`       | `ValidateResponse`   |
//! | POST   | `/run`                      | `RunRequest`            | `RunResponse`        |
//! | POST   | `/gen-trace`                | `GenTraceRequest`       | `GenTraceResponse`   |
//! | POST   | `/calibrate`                | `CalibrateRequest`      | `CalibrationReport`  |
//! | POST   | `/sessions`                 | `CreateSessionRequest`  | `SessionInfo` (201)  |
//! | GET    | `/sessions/{id}`            |                         | `SessionInfo`        |
//! | POST   | `/sessions/{id}/packets`    | `PacketsRequest`        | `PacketsResponse`    |
//! | GET    | `/sessions/{id}/stats`      |                         | `RunStats`           |
//! | DELETE | `/sessions/{id}`            |                         | 204                  |
//!
//! Failures reply with an `ApiError` body.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use uuid::Uuid;

use opp_core::api::{
    self, ApiError, BuiltinProgram, CalibrateRequest, CreateSessionRequest, ErrorKind, GenTraceRequest,
    GenTraceResponse, PacketsRequest, PacketsResponse, RunRequest, RunResponse, SessionInfo, ValidateRequest,
    ValidateResponse, VerdictRow,
};
use opp_core::calibrate::CalibrationReport;
use opp_core::runner::Session;
use opp_core::stats::RunStats;
use opp_core::trace::Trace;

pub const DEFAULT_BODY_LIMIT: usize = 256 * 1024 * 1024;

/// JSON error reply.
#[derive(Debug)]
pub struct Failure(pub ApiError);

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure(e)
    }
}

pub fn status_of(kind: ErrorKind) -> StatusCode {
    match kind {
        ErrorKind::Usage | ErrorKind::Parse => StatusCode::BAD_REQUEST,
        ErrorKind::Validation => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorKind::NotFound => StatusCode::NOT_FOUND,
        ErrorKind::Io | ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (status_of(self.0.kind), Json(self.0)).into_response()
    }
}

type Reply<T> = Result<Json<T>, Failure>;

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<Mutex<HashMap<Uuid, Arc<Mutex<Session>>>>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, Failure> {
        let missing = || Failure(ApiError::new(ErrorKind::NotFound, format!("no session `{id}`")));
        let id = Uuid::parse_str(id).map_err(|_| missing())?;
        self.sessions
            .lock()
            .expect("session map lock")
            .get(&id)
            .cloned()
            .ok_or_else(missing)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { Json("ok") }))
        .route("/programs", get(list_programs))
        .route("/programs/{name}", get(get_program))
        .route("/validate", post(validate))
        .route("/run", post(run))
        .route("/gen-trace", post(gen_trace))
        .route("/calibrate", post(calibrate))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info).delete(delete_session))
        .route("/sessions/{id}/packets", post(feed_packets))
        .route("/sessions/{id}/stats", get(session_stats))
        .layer(DefaultBodyLimit::max(DEFAULT_BODY_LIMIT))
        .with_state(state)
}

/// Runs CPU-bound work off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Reply<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map(Json).map_err(Failure),
        Err(e) => Err(Failure(ApiError::new(
            ErrorKind::Internal,
            format!("worker failed: {e}"),
        ))),
    }
}

async fn list_programs() -> Json<Vec<String>> {
    Json(api::list_builtins())
}

async fn get_program(Path(name): Path<String>) -> Reply<BuiltinProgram> {
    Ok(Json(api::get_builtin(&name)?))
}

async fn validate(Json(req): Json<ValidateRequest>) -> Reply<ValidateResponse> {
    blocking(move || api::validate(&req)).await
}

async fn run(Json(req): Json<RunRequest>) -> Reply<RunResponse> {
    blocking(move || api::run(&req)).await
}

async fn gen_trace(Json(req): Json<GenTraceRequest>) -> Reply<GenTraceResponse> {
    blocking(move || api::gen_trace(&req)).await
}

async fn calibrate(Json(req): Json<CalibrateRequest>) -> Reply<CalibrationReport> {
    blocking(move || api::calibrate(&req)).await
}

fn info(id: Uuid, s: &Session) -> SessionInfo {
    SessionInfo {
        id: id.to_string(),
        programs: s.programs().iter().map(|p| p.name.clone()).collect(),
        packets: s.packets(),
    }
}

async fn create_session(
    State(state): State<AppState>,
    Json(req): Json<CreateSessionRequest>,
) -> Result<(StatusCode, Json<SessionInfo>), Failure> {
    let programs = api::load_chain(&req.programs, &req.globals)?;
    let session = Session::new(programs, req.options).map_err(ApiError::from)?;
    let id = Uuid::new_v4();
    let reply = info(id, &session);
    state
        .sessions
        .lock()
        .expect("session map lock")
        .insert(id, Arc::new(Mutex::new(session)));
    tracing::info!(%id, programs = ?reply.programs, "session created");
    Ok((StatusCode::CREATED, Json(reply)))
}

async fn session_info(State(state): State<AppState>, Path(id): Path<String>) -> Reply<SessionInfo> {
    let s = state.session(&id)?;
    let s = s.lock().expect("session lock");
    Ok(Json(info(Uuid::parse_str(&id).expect("validated above"), &s)))
}

async fn feed_packets(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<PacketsRequest>,
) -> Reply<PacketsResponse> {
    let session = state.session(&id)?;
    blocking(move || {
        let trace = Trace::read_csv(req.trace_csv.as_bytes())?;
        let mut s = session.lock().expect("session lock");
        let verdicts = s.feed_trace(&trace)?;
        let programs = s.programs().to_vec();
        Ok(PacketsResponse {
            verdicts: verdicts
                .iter()
                .flatten()
                .map(|v| VerdictRow::new(v, &programs[v.stage]))
                .collect(),
        })
    })
    .await
}

async fn session_stats(State(state): State<AppState>, Path(id): Path<String>) -> Reply<RunStats> {
    let s = state.session(&id)?;
    let s = s.lock().expect("session lock");
    Ok(Json(s.stats()))
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, Failure> {
    state.session(&id)?;
    let id = Uuid::parse_str(&id).expect("validated above");
    state.sessions.lock().expect("session map lock").remove(&id);
    Ok(StatusCode::NO_CONTENT)
}

/// Serves until the listener fails or `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(AppState::new()))
        .with_graceful_shutdown(shutdown)
        .await
}
