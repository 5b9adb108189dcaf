//! Local HTTP service for previews, font uploads and generation jobs.
//!
//! | method | path                    | body                          |
//! |--------|-------------------------|-------------------------------|
//! | POST   | `/api/fonts`            | multipart, one font file      |
//! | GET    | `/api/fonts`            |                               |
//! | POST   | `/api/preview`          | `{"config": {...}, "count": n}` |
//! | POST   | `/api/jobs`             | config JSON                   |
//! | GET    | `/api/jobs/{id}`        |                               |
//! | GET    | `/api/jobs/{id}/archive`|                               |
//! | DELETE | `/api/jobs/{id}`        |                               |
//!
//! Errors are JSON `{"error": ..., "issues": [{"path", "message"}]}` with
//! 400 for malformed JSON, 422 for invalid configs, 404 for unknown jobs
//! and 409 for conflicts.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use glyphgen_core::config::{ConfigIssue, InputPaths};
use glyphgen_core::engine::{GenerateError, Generator};
use glyphgen_core::packaging::{open_sink, split_point, SinkLayout, ARCHIVE_NAME};
use glyphgen_core::{ConfigError, FontEntry, GenerateOptions, GeneratorConfig, StorageMode};

pub const DEFAULT_PORT: u16 = 8787;
pub const MAX_PREVIEW: usize = 16;
const MAX_UPLOAD: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Serialize)]
pub struct UploadedFont {
    pub font_id: String,
    pub family_name: String,
    pub file_name: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

pub struct Job {
    id: String,
    config: GeneratorConfig,
    dir: PathBuf,
    state: Mutex<JobState>,
    produced: AtomicU64,
    skips: AtomicU64,
    error: Mutex<Option<String>>,
    cancel: Arc<AtomicBool>,
}

impl Job {
    fn state(&self) -> JobState {
        *self.state.lock().unwrap()
    }

    /// Moves forward only; a finished job never returns to running.
    fn advance(&self, next: JobState) {
        let mut s = self.state.lock().unwrap();
        if next > *s {
            *s = next;
        }
    }

    fn view(&self) -> Value {
        json!({
            "id": self.id,
            "state": self.state(),
            "produced": self.produced.load(Ordering::Relaxed),
            "total": self.config.count,
            "skips": self.skips.load(Ordering::Relaxed),
            "error": *self.error.lock().unwrap(),
            "config": self.config,
        })
    }
}

/// Shared service state. Uploaded fonts and job outputs live in temporary
/// directories removed when the state is dropped.
pub struct AppState {
    font_store: tempfile::TempDir,
    work_dir: tempfile::TempDir,
    base_dir: Option<PathBuf>,
    fonts: Mutex<Vec<UploadedFont>>,
    jobs: Mutex<HashMap<String, Arc<Job>>>,
    active: Mutex<Option<String>>,
}

impl AppState {
    /// `base_dir` resolves relative corpus, font and background paths in
    /// submitted configs.
    pub fn new(base_dir: Option<PathBuf>) -> std::io::Result<Arc<Self>> {
        Ok(Arc::new(AppState {
            font_store: tempfile::Builder::new().prefix("glyphgen-fonts").tempdir()?,
            work_dir: tempfile::Builder::new().prefix("glyphgen-jobs").tempdir()?,
            base_dir,
            fonts: Mutex::new(Vec::new()),
            jobs: Mutex::new(HashMap::new()),
            active: Mutex::new(None),
        }))
    }

    pub fn input_paths(&self) -> InputPaths {
        InputPaths {
            base_dir: self.base_dir.clone(),
            font_store: Some(self.font_store.path().to_path_buf()),
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/fonts", post(upload_font).get(list_fonts))
        .route("/api/preview", post(preview))
        .route("/api/jobs", post(create_job))
        .route("/api/jobs/{id}", get(job_status).delete(cancel_job))
        .route("/api/jobs/{id}/archive", get(job_archive))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state)
}

/// Serves on `addr` until Ctrl-C.
pub async fn serve(addr: SocketAddr, base_dir: Option<PathBuf>) -> std::io::Result<()> {
    let state = AppState::new(base_dir)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub fn loopback(port: u16) -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], port))
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    issues: Vec<ConfigIssue>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            issues: Vec::new(),
        }
    }

    fn invalid(issues: Vec<ConfigIssue>) -> Self {
        let message = issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            message,
            issues,
        }
    }

    fn not_found(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, format!("no job {id}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.message, "issues": self.issues });
        (self.status, Json(body)).into_response()
    }
}

impl From<ConfigError> for ApiError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Syntax(e) => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
            ConfigError::Invalid(issues) => ApiError::invalid(issues),
        }
    }
}

impl From<GenerateError> for ApiError {
    fn from(e: GenerateError) -> Self {
        let path = match &e {
            GenerateError::Config(ConfigError::Invalid(issues)) => return ApiError::invalid(issues.clone()),
            GenerateError::Config(ConfigError::Syntax(_)) => return ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
            GenerateError::Text(_) => "corpus",
            GenerateError::Font(_) | GenerateError::UnresolvedFont(_) => "fonts",
            GenerateError::Render(_) => "background",
            GenerateError::NothingFits { .. } => "width",
            GenerateError::PreviewTooLarge(_) => "count",
            _ => return ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        };
        ApiError::invalid(vec![ConfigIssue::new(path, e.to_string())])
    }
}

fn parse_json(body: &[u8]) -> Result<Value, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed JSON: {e}")))
}

fn parse_config(value: Value) -> Result<GeneratorConfig, ApiError> {
    let cfg = GeneratorConfig::from_value(value)?;
    cfg.validate()?;
    Ok(cfg)
}

async fn upload_font(State(state): State<Arc<AppState>>, mut multipart: Multipart) -> Result<Json<UploadedFont>, ApiError> {
    let bad = |m: String| ApiError::invalid(vec![ConfigIssue::new("file", m)]);
    let field = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?
        .ok_or_else(|| bad("no file in upload".into()))?;
    let file_name = field.file_name().unwrap_or("font.ttf").to_string();
    let data = field
        .bytes()
        .await
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let entry = FontEntry::from_bytes(file_name.clone(), data.to_vec(), 100.0).map_err(|e| bad(e.to_string()))?;
    let font_id = uuid::Uuid::new_v4().simple().to_string();
    let path = state.font_store.path().join(&font_id);
    tokio::fs::write(&path, &data)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let font = UploadedFont {
        font_id,
        family_name: entry.family_name().to_string(),
        file_name,
        bytes: data.len() as u64,
    };
    state.fonts.lock().unwrap().push(font.clone());
    Ok(Json(font))
}

async fn list_fonts(State(state): State<Arc<AppState>>) -> Json<Vec<UploadedFont>> {
    Json(state.fonts.lock().unwrap().clone())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PreviewRequest {
    config: Value,
    #[serde(default = "default_preview_count")]
    count: usize,
}

fn default_preview_count() -> usize {
    8
}

#[derive(Debug, Serialize)]
pub struct PreviewSample {
    pub index: u64,
    pub png_base64: String,
    pub label: String,
    pub font: String,
    pub size: u32,
    pub recipe: String,
}

async fn preview(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<Vec<PreviewSample>>, ApiError> {
    let value = parse_json(&body)?;
    let req: PreviewRequest = serde_json::from_value(value)
        .map_err(|e| ApiError::invalid(vec![ConfigIssue::new("$", e.to_string())]))?;
    if req.count > MAX_PREVIEW {
        return Err(ApiError::invalid(vec![ConfigIssue::new(
            "count",
            format!("at most {MAX_PREVIEW} previews per request, got {}", req.count),
        )]));
    }
    let cfg = parse_config(req.config)?;
    let paths = state.input_paths();
    let records = tokio::task::spawn_blocking(move || Generator::new(&cfg, &paths)?.preview(req.count))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let b64 = base64::engine::general_purpose::STANDARD;
    Ok(Json(
        records
            .into_iter()
            .map(|r| PreviewSample {
                index: r.index,
                png_base64: b64.encode(&r.image_png),
                label: r.label,
                font: r.font_used,
                size: r.size_used,
                recipe: r.recipe_summary,
            })
            .collect(),
    ))
}

async fn create_job(State(state): State<Arc<AppState>>, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let cfg = parse_config(parse_json(&body)?)?;
    if cfg.storage != StorageMode::Zip {
        return Err(ApiError::invalid(vec![ConfigIssue::new(
            "storage",
            "service jobs produce a single archive; use zip",
        )]));
    }
    let paths = state.input_paths();
    // Load inputs up front so config problems surface as 422, not as a
    // failed job.
    let generator = {
        let cfg = cfg.clone();
        tokio::task::spawn_blocking(move || Generator::new(&cfg, &paths))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??
    };

    let job = {
        let mut active = state.active.lock().unwrap();
        if let Some(id) = active.as_ref() {
            let jobs = state.jobs.lock().unwrap();
            if jobs.get(id).is_some_and(|j| j.state() <= JobState::Running) {
                return Err(ApiError::new(StatusCode::CONFLICT, format!("job {id} is still running")));
            }
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let job = Arc::new(Job {
            dir: state.work_dir.path().join(&id),
            id: id.clone(),
            config: cfg,
            state: Mutex::new(JobState::Queued),
            produced: AtomicU64::new(0),
            skips: AtomicU64::new(0),
            error: Mutex::new(None),
            cancel: Arc::new(AtomicBool::new(false)),
        });
        state.jobs.lock().unwrap().insert(id.clone(), job.clone());
        *active = Some(id);
        job
    };

    let runner = job.clone();
    tokio::task::spawn_blocking(move || run_job(&runner, &generator));
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job.id }))))
}

fn run_job(job: &Job, generator: &Generator) {
    job.advance(JobState::Running);
    let result = (|| -> Result<(), GenerateError> {
        let cfg = generator.config();
        let layout = SinkLayout {
            format: cfg.format,
            train_count: split_point(cfg.count, cfg.split).map_err(GenerateError::Packaging)?,
        };
        let mut sink = open_sink(cfg.storage, &job.dir, layout, cfg.batch_size)?;
        let opts = GenerateOptions {
            progress: Some(Box::new(|e| {
                job.produced.fetch_max(e.produced, Ordering::Relaxed);
                job.skips.fetch_max(e.skips, Ordering::Relaxed);
            })),
            cancel: Some(job.cancel.clone()),
            timestamp: Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
            ..Default::default()
        };
        generator.run(sink.as_mut(), opts)?;
        Ok(())
    })();
    match result {
        Ok(()) => job.advance(JobState::Done),
        Err(e) => {
            *job.error.lock().unwrap() = Some(e.to_string());
            job.advance(JobState::Failed);
        }
    }
}

fn find_job(state: &AppState, id: &str) -> Result<Arc<Job>, ApiError> {
    state.jobs.lock().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found(id))
}

async fn job_status(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    Ok(Json(find_job(&state, &id)?.view()))
}

async fn job_archive(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let job = find_job(&state, &id)?;
    match job.state() {
        JobState::Done => {}
        JobState::Failed => {
            return Err(ApiError::new(StatusCode::CONFLICT, format!("job {id} failed; no archive")));
        }
        _ => return Err(ApiError::new(StatusCode::CONFLICT, format!("job {id} has not finished"))),
    }
    let bytes = tokio::fs::read(job.dir.join(ARCHIVE_NAME))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/zip"),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"dataset.zip\""),
        ],
        bytes,
    )
        .into_response())
}

async fn cancel_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let job = find_job(&state, &id)?;
    job.cancel.store(true, Ordering::Relaxed);
    Ok(Json(job.view()))
}
