//! JSON API for reviewing a run's generated stories, plus optional static
//! hosting of the browser UI.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/runs` | loaded runs |
//! | GET | `/runs/{id}/documents` | document summaries |
//! | GET | `/runs/{id}/review-report` | cross-session aggregate |
//! | GET | `/documents/{*id}?run=` | text, gold, parsed and raw responses |
//! | GET, POST | `/sessions` | list / create (`{run_id, reviewer_id}`) |
//! | GET | `/sessions/{id}` | session state |
//! | POST | `/sessions/{id}/judgments` | story or document judgment |
//! | POST | `/sessions/{id}/preferences` | pairwise preference |
//! | POST | `/sessions/{id}/complete` | close the session |

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use privstory_core::corpus::FileType;
use privstory_core::review::{aggregate_review, Judgment, ReviewError, ReviewReport, ReviewSession, ReviewStore};
use privstory_core::run::{RunData, RunDir, RunDocument, RunError};

pub struct AppState {
    runs: BTreeMap<String, Arc<RunData>>,
    store: ReviewStore,
    ui_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(runs: Vec<RunData>, store: ReviewStore, ui_dir: Option<PathBuf>) -> Self {
        AppState {
            runs: runs
                .into_iter()
                .map(|r| (r.run_id().to_string(), Arc::new(r)))
                .collect(),
            store,
            ui_dir,
        }
    }

    /// Load runs from run directories and open the session store.
    pub fn load(run_dirs: &[PathBuf], review_dir: &FsPath, ui_dir: Option<PathBuf>) -> Result<Self, LoadError> {
        let mut runs = Vec::new();
        for d in run_dirs {
            runs.push(RunData::load(&RunDir::new(d))?);
        }
        Ok(Self::new(runs, ReviewStore::open(review_dir)?, ui_dir))
    }

    pub fn store(&self) -> &ReviewStore {
        &self.store
    }

    fn run(&self, id: &str) -> Result<&Arc<RunData>, ApiError> {
        self.runs
            .get(id)
            .ok_or_else(|| ApiError::not_found(format!("unknown run `{id}`")))
    }
}

#[derive(Debug)]
pub enum LoadError {
    Run(RunError),
    Review(ReviewError),
}

impl std::fmt::Display for LoadError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LoadError::Run(e) => write!(f, "{e}"),
            LoadError::Review(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for LoadError {}

impl From<RunError> for LoadError {
    fn from(e: RunError) -> Self {
        LoadError::Run(e)
    }
}

impl From<ReviewError> for LoadError {
    fn from(e: ReviewError) -> Self {
        LoadError::Review(e)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn not_found(message: String) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            message,
        }
    }

    fn bad_request(message: String) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message,
        }
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let status = match &e {
            ReviewError::UnknownRun(_) | ReviewError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ReviewError::DuplicateSession { .. } | ReviewError::Closed(_) | ReviewError::Incomplete { .. } => {
                StatusCode::CONFLICT
            }
            ReviewError::Log { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError {
            status,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

type Shared = Arc<AppState>;
type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub model_name: String,
    pub template_variant: String,
    pub documents: usize,
    pub stories: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DocumentSummary {
    pub document_id: String,
    pub file_type: FileType,
    pub stories: usize,
    pub responses: u32,
    pub gold_stories: usize,
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub run_id: String,
    pub reviewer_id: String,
}

#[derive(Debug, Deserialize)]
pub struct PreferenceBody {
    pub document_id: String,
    pub chosen_response_index: u32,
    pub rejected_response_index: u32,
}

#[derive(Debug, Deserialize)]
pub struct DocumentQuery {
    pub run: Option<String>,
}

async fn list_runs(State(s): State<Shared>) -> Json<Vec<RunSummary>> {
    Json(
        s.runs
            .values()
            .map(|r| RunSummary {
                run_id: r.run_id().to_string(),
                model_name: r.info.model_name.clone(),
                template_variant: r.info.template_variant.clone(),
                documents: r.documents.len(),
                stories: r.story_count(),
            })
            .collect(),
    )
}

async fn run_documents(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Vec<DocumentSummary>> {
    let run = s.run(&id)?;
    Ok(Json(
        run.documents
            .iter()
            .map(|d| DocumentSummary {
                document_id: d.document_id.clone(),
                file_type: d.file_type,
                stories: d.reviewed_stories().len(),
                responses: d.response_count(),
                gold_stories: d.gold.as_ref().map_or(0, |g| g.stories.len()),
            })
            .collect(),
    ))
}

async fn document(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<DocumentQuery>,
) -> ApiResult<RunDocument> {
    let run = match q.run {
        Some(r) => s.run(&r)?,
        None if s.runs.len() == 1 => s.runs.values().next().expect("one run"),
        None => return Err(ApiError::bad_request("several runs loaded; pass ?run=<id>".into())),
    };
    run.document(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("document `{id}` is not in run `{}`", run.run_id())))
}

async fn create_session(
    State(s): State<Shared>,
    Json(body): Json<CreateSession>,
) -> Result<(StatusCode, Json<ReviewSession>), ApiError> {
    let run = s.run(&body.run_id)?.clone();
    let session = s.store.create_session(&run, &body.reviewer_id)?;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn list_sessions(State(s): State<Shared>) -> Json<Vec<ReviewSession>> {
    Json(s.store.list())
}

async fn get_session(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<ReviewSession> {
    s.store
        .get(&id)
        .map(Json)
        .ok_or_else(|| ReviewError::UnknownSession(id).into())
}

async fn post_judgment(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Json(j): Json<Judgment>,
) -> ApiResult<ReviewSession> {
    Ok(Json(s.store.record(&id, &j)?))
}

async fn post_preference(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Json(p): Json<PreferenceBody>,
) -> ApiResult<ReviewSession> {
    let j = Judgment::Preference {
        document_id: p.document_id,
        chosen_response_index: p.chosen_response_index,
        rejected_response_index: p.rejected_response_index,
    };
    Ok(Json(s.store.record(&id, &j)?))
}

async fn complete_session(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<ReviewSession> {
    Ok(Json(s.store.complete(&id)?))
}

async fn review_report(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<ReviewReport> {
    let run = s.run(&id)?;
    let sessions = s.store.sessions_for_run(&id);
    Ok(Json(aggregate_review(run, &sessions)?))
}

pub fn router(state: AppState) -> Router {
    let ui_dir = state.ui_dir.clone();
    let api = Router::new()
        .route("/runs", get(list_runs))
        .route("/runs/{id}/documents", get(run_documents))
        .route("/runs/{id}/review-report", get(review_report))
        .route("/documents/{*id}", get(document))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/judgments", post(post_judgment))
        .route("/sessions/{id}/preferences", post(post_preference))
        .route("/sessions/{id}/complete", post(complete_session))
        .with_state(Arc::new(state));
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serve until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("review service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
