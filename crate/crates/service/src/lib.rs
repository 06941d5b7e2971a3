//! HTTP front end: submit a re-aggregation job, poll its status, fetch the
//! summary CSV and the diagnostics.
//!
//! | route | response |
//! |---|---|
//! | `POST /v1/jobs` | `202 {"id", "status"}`; `400` on invalid jobs; `429` when the queue is full |
//! | `GET /v1/jobs/{id}` | status JSON; `404` for unknown ids |
//! | `GET /v1/jobs/{id}/result` | summary CSV once done; `409` before that |
//! | `GET /v1/diagnostics/{id}` | dependence and sampler diagnostics JSON once done; `409` before |
//!
//! A job body is a job JSON document whose inputs are inline (`{"csv": ...}`)
//! or base64 (`{"csv_base64": ...}`) CSV payloads. Alternatively a
//! `multipart/form-data` body carries the document in a `job` part and the
//! CSV files in parts named after the inputs (`source_counts`,
//! `covariates`, `source_map`, `dest_map`). File paths are refused.

use std::collections::HashMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use reagg_core::io::{diagnostics_json, summary_csv, InputRef, JobSpec};
use reagg_core::{reaggregate, ReaggError, ReaggregationJob};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::mpsc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Debug, Clone)]
pub struct JobEnvelope {
    pub id: String,
    pub status: JobStatus,
    pub result_csv: Option<String>,
    pub diagnostics: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub workers: usize,
    /// Jobs waiting beyond this many are refused with 429.
    pub queue_cap: usize,
    /// Completed results are also written here as `<id>.csv` and `<id>.json`.
    pub persist_dir: Option<PathBuf>,
    pub body_limit: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            queue_cap: 1024,
            persist_dir: None,
            body_limit: 64 * 1024 * 1024,
        }
    }
}

/// Bind address from `REAGG_ADDR` (default 127.0.0.1) and `REAGG_PORT`
/// (default 8080).
pub fn addr_from_env() -> Result<SocketAddr, String> {
    let ip = match std::env::var("REAGG_ADDR") {
        Ok(s) => s.parse::<IpAddr>().map_err(|e| format!("REAGG_ADDR `{s}`: {e}"))?,
        Err(_) => IpAddr::V4(Ipv4Addr::LOCALHOST),
    };
    let port = match std::env::var("REAGG_PORT") {
        Ok(s) => s.parse::<u16>().map_err(|e| format!("REAGG_PORT `{s}`: {e}"))?,
        Err(_) => 8080,
    };
    Ok(SocketAddr::new(ip, port))
}

#[derive(Clone)]
pub struct AppState {
    registry: Arc<Mutex<HashMap<String, JobEnvelope>>>,
    next_id: Arc<AtomicU64>,
    queue: mpsc::Sender<(String, ReaggregationJob)>,
    persist_dir: Option<PathBuf>,
}

impl AppState {
    /// Starts the worker pool; must run inside a tokio runtime.
    pub fn start(config: &ServiceConfig) -> Self {
        let (tx, rx) = mpsc::channel::<(String, ReaggregationJob)>(config.queue_cap.max(1));
        let state = Self {
            registry: Arc::default(),
            next_id: Arc::new(AtomicU64::new(1)),
            queue: tx,
            persist_dir: config.persist_dir.clone(),
        };
        let rx = Arc::new(tokio::sync::Mutex::new(rx));
        for _ in 0..config.workers.max(1) {
            let (rx, state) = (rx.clone(), state.clone());
            tokio::spawn(async move {
                loop {
                    let Some((id, job)) = rx.lock().await.recv().await else {
                        break;
                    };
                    state.run(id, job).await;
                }
            });
        }
        state
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut JobEnvelope)) {
        if let Some(env) = self.registry.lock().expect("registry lock").get_mut(id) {
            if !env.status.is_terminal() {
                f(env);
            }
        }
    }

    async fn run(&self, id: String, job: ReaggregationJob) {
        self.update(&id, |e| e.status = JobStatus::Running);
        let outcome = tokio::task::spawn_blocking(move || reaggregate(&job)).await;
        let (csv, diagnostics, error) = match outcome {
            Ok(Ok(summary)) => (Some(summary_csv(&summary)), Some(diagnostics_json(&summary)), None),
            Ok(Err(e)) => (None, None, Some(e.to_string())),
            Err(e) => (None, None, Some(format!("job panicked: {e}"))),
        };
        if let (Some(dir), Some(csv), Some(diag)) = (&self.persist_dir, &csv, &diagnostics) {
            let write = std::fs::write(dir.join(format!("{id}.csv")), csv)
                .and_then(|_| std::fs::write(dir.join(format!("{id}.json")), diag));
            if let Err(e) = write {
                log::warn!("could not persist job {id}: {e}");
            }
        }
        self.update(&id, |e| {
            e.status = if error.is_none() { JobStatus::Done } else { JobStatus::Failed };
            e.result_csv = csv;
            e.diagnostics = diagnostics;
            e.error = error;
        });
    }

    fn get(&self, id: &str) -> Option<JobEnvelope> {
        self.registry.lock().expect("registry lock").get(id).cloned()
    }
}

pub fn router(state: AppState, body_limit: usize) -> Router {
    Router::new()
        .route("/v1/jobs", post(submit))
        .route("/v1/jobs/{id}", get(status))
        .route("/v1/jobs/{id}/result", get(result))
        .route("/v1/diagnostics/{id}", get(diagnostics))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    if let Some(dir) = &config.persist_dir {
        std::fs::create_dir_all(dir)?;
    }
    let app = router(AppState::start(&config), config.body_limit);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn bad_request(e: impl std::fmt::Display) -> Response {
    error(StatusCode::BAD_REQUEST, e.to_string())
}

async fn parse_multipart(req: Request, state: &AppState) -> Result<JobSpec, Response> {
    let mut multipart = Multipart::from_request(req, state).await.map_err(bad_request)?;
    let mut spec: Option<JobSpec> = None;
    let mut files: Vec<(String, String)> = Vec::new();
    while let Some(field) = multipart.next_field().await.map_err(bad_request)? {
        let name = field.name().unwrap_or_default().to_owned();
        let text = field.text().await.map_err(bad_request)?;
        if name == "job" {
            spec = Some(JobSpec::from_json("job", &text).map_err(bad_request)?);
        } else {
            files.push((name, text));
        }
    }
    let mut spec = spec.unwrap_or_default();
    for (name, csv) in files {
        let slot = match name.as_str() {
            "source_counts" => &mut spec.inputs.source_counts,
            "covariates" => &mut spec.inputs.covariates,
            "source_map" => &mut spec.inputs.source_map,
            "dest_map" => &mut spec.inputs.dest_map,
            other => return Err(bad_request(format!("unknown multipart field `{other}`"))),
        };
        *slot = Some(InputRef::Inline { csv });
    }
    Ok(spec)
}

async fn submit(State(state): State<AppState>, req: Request) -> Response {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let spec = if is_multipart {
        match parse_multipart(req, &state).await {
            Ok(spec) => spec,
            Err(resp) => return resp,
        }
    } else {
        let body = match axum::body::to_bytes(req.into_body(), usize::MAX).await {
            Ok(b) => b,
            Err(e) => return bad_request(e),
        };
        match std::str::from_utf8(&body)
            .map_err(|e| ReaggError::InvalidInput(e.to_string()))
            .and_then(|text| JobSpec::from_json("request body", text))
        {
            Ok(spec) => spec,
            Err(e) => return bad_request(e),
        }
    };
    let job = match spec.resolve(false) {
        Ok(job) => job,
        Err(e) => return bad_request(e),
    };

    let id = format!("job-{}", state.next_id.fetch_add(1, Ordering::Relaxed));
    state.registry.lock().expect("registry lock").insert(
        id.clone(),
        JobEnvelope {
            id: id.clone(),
            status: JobStatus::Queued,
            result_csv: None,
            diagnostics: None,
            error: None,
        },
    );
    if state.queue.try_send((id.clone(), job)).is_err() {
        state.registry.lock().expect("registry lock").remove(&id);
        return error(StatusCode::TOO_MANY_REQUESTS, "job queue is full");
    }
    (StatusCode::ACCEPTED, Json(json!({ "id": id, "status": JobStatus::Queued }))).into_response()
}

fn not_found(id: &str) -> Response {
    error(StatusCode::NOT_FOUND, format!("unknown job `{id}`"))
}

async fn status(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.get(&id) {
        None => not_found(&id),
        Some(e) => Json(json!({ "id": e.id, "status": e.status, "error": e.error })).into_response(),
    }
}

fn not_done(e: &JobEnvelope) -> Response {
    (
        StatusCode::CONFLICT,
        Json(json!({ "error": "job has not completed successfully", "status": e.status, "job_error": e.error })),
    )
        .into_response()
}

async fn result(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.get(&id) {
        None => not_found(&id),
        Some(JobEnvelope {
            status: JobStatus::Done,
            result_csv: Some(csv),
            ..
        }) => ([(header::CONTENT_TYPE, "text/csv")], csv).into_response(),
        Some(e) => not_done(&e),
    }
}

async fn diagnostics(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.get(&id) {
        None => not_found(&id),
        Some(JobEnvelope {
            status: JobStatus::Done,
            diagnostics: Some(d),
            ..
        }) => ([(header::CONTENT_TYPE, "application/json")], d).into_response(),
        Some(e) => not_done(&e),
    }
}
