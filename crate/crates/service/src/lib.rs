//! Local HTTP service over a directory of pullback containers.
//!
//! Routes are listed in `docs/api.md`. Every error body is
//! `{"error": "..."}`; 409 responses also carry the current revision.

pub mod raster;
pub mod state;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use octopus_core::config::PipelineConfig;
use octopus_core::io::{self, IoError};
use octopus_core::model::Calibration;
use octopus_core::pipeline::{AnalysisJob, JobHook, JobQueue};
use octopus_core::quant::{enface_maps, lesion_quant, longitudinal_view, EnFaceKind, Measurement};
use octopus_core::registration::{
    register_auto, register_landmark, thickness_signal, AutoRegistrationConfig, RegistrationMode,
};

use crate::raster::Stroke;
use crate::state::{Analysis, Edit, EditError, EditOutcome, Entry, Registry};

pub const REVISION_HEADER: &str = "x-revision";

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub revision: Option<u64>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            revision: None,
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, what)
    }

    fn invalid(why: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, why)
    }

    fn busy() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "analysis in progress")
    }
}

impl From<IoError> for ApiError {
    fn from(e: IoError) -> Self {
        let status = if e.is_format() {
            StatusCode::UNPROCESSABLE_ENTITY
        } else {
            StatusCode::INTERNAL_SERVER_ERROR
        };
        Self::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::invalid(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::invalid(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        let mut headers = HeaderMap::new();
        if let Some(r) = self.revision {
            body["revision"] = json!(r);
            headers.insert(REVISION_HEADER, HeaderValue::from(r));
        }
        (self.status, headers, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Inner {
    registry: Arc<Registry>,
    queue: JobQueue,
    defaults: PipelineConfig,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Register every container under `root`. `defaults` is the analysis
    /// configuration used when a request brings none.
    pub fn open(root: &Path, defaults: PipelineConfig) -> Result<AppState, IoError> {
        let registry = Arc::new(Registry::scan(root)?);
        let reg = Arc::clone(&registry);
        let hook: JobHook = Arc::new(move |job: &AnalysisJob, out| {
            if out.is_none() {
                return;
            }
            if let Some(entry) = reg.by_dir(&job.path) {
                if let Err(e) = entry.reload_analysis() {
                    log::error!("reloading {}: {e}", entry.id);
                }
            }
        });
        Ok(AppState(Arc::new(Inner {
            registry,
            queue: JobQueue::with_hook(Some(hook)),
            defaults,
        })))
    }

    pub fn registry(&self) -> &Registry {
        &self.0.registry
    }

    pub fn queue(&self) -> &JobQueue {
        &self.0.queue
    }

    fn entry(&self, id: &str) -> ApiResult<Arc<Entry>> {
        self.0
            .registry
            .get(id)
            .ok_or_else(|| ApiError::not_found(format!("no pullback {id:?}")))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/pullbacks", get(list_pullbacks))
        .route("/pullbacks/{id}", get(get_pullback))
        .route("/pullbacks/{id}/analyze", post(analyze))
        .route("/jobs/{job}", get(get_job))
        .route("/pullbacks/{id}/frames/{n}", get(frame_image))
        .route("/pullbacks/{id}/labels/{n}", get(get_labels).put(put_labels))
        .route("/pullbacks/{id}/edits", get(get_edits))
        .route("/pullbacks/{id}/quant.csv", get(quant_csv))
        .route("/pullbacks/{id}/lesions.csv", get(lesions_csv))
        .route("/pullbacks/{id}/enface", get(enface))
        .route("/pullbacks/{id}/longitudinal", get(longitudinal))
        .route("/pullbacks/{id}/struts", get(struts))
        .route("/pullbacks/{id}/annotations/{n}", get(get_annotations))
        .route("/pullbacks/{id}/annotations/{n}/measure", post(measure))
        .route("/registration", post(registration))
        .with_state(state)
}

/// Serve until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn bytes_response(content_type: &'static str, body: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, content_type)], body).into_response()
}

fn check_frame(entry: &Entry, n: usize) -> ApiResult<()> {
    if n >= entry.meta.n_frames {
        return Err(ApiError::not_found(format!(
            "frame {n} out of range (pullback has {})",
            entry.meta.n_frames
        )));
    }
    Ok(())
}

fn not_analyzed(entry: &Entry) -> ApiError {
    ApiError::not_found(format!("pullback {:?} has no analysis", entry.id))
}

fn with_analysis<T>(entry: &Entry, f: impl FnOnce(&Analysis) -> ApiResult<T>) -> ApiResult<T> {
    let guard = entry.analysis.read().expect("analysis lock");
    match guard.as_ref() {
        Some(a) => f(a),
        None => Err(not_analyzed(entry)),
    }
}

#[derive(Serialize)]
struct PullbackSummary {
    id: String,
    n_frames: usize,
    n_alines: usize,
    n_r: usize,
    calibration: Calibration,
    analyzed: bool,
    revision: Option<u64>,
    busy: bool,
}

fn summary(state: &AppState, e: &Entry) -> PullbackSummary {
    let revision = e.analysis.read().expect("analysis lock").as_ref().map(Analysis::revision);
    PullbackSummary {
        id: e.id.clone(),
        n_frames: e.meta.n_frames,
        n_alines: e.meta.n_alines,
        n_r: e.meta.n_r,
        calibration: e.meta.calibration(),
        analyzed: revision.is_some(),
        revision,
        busy: state.queue().is_busy(&e.dir),
    }
}

async fn list_pullbacks(State(state): State<AppState>) -> Json<Vec<PullbackSummary>> {
    Json(state.registry().list().iter().map(|e| summary(&state, e)).collect())
}

async fn get_pullback(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<PullbackSummary>> {
    let e = state.entry(&id)?;
    Ok(Json(summary(&state, &e)))
}

async fn analyze(State(state): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Response> {
    let entry = state.entry(&id)?;
    let cfg = if body.iter().all(u8::is_ascii_whitespace) {
        state.0.defaults.clone()
    } else {
        let text = std::str::from_utf8(&body).map_err(|e| ApiError::invalid(e.to_string()))?;
        PipelineConfig::from_json(text).map_err(|e| ApiError::invalid(e.to_string()))?
    };
    cfg.validate().map_err(|e| ApiError::invalid(e.to_string()))?;
    if let Some(roi) = cfg.roi {
        if roi.end >= entry.meta.n_frames {
            return Err(ApiError::invalid(format!(
                "roi {}:{} outside {} frames",
                roi.start, roi.end, entry.meta.n_frames
            )));
        }
    }
    if state.queue().is_busy(&entry.dir) {
        return Err(ApiError::busy());
    }
    let job_id = state.queue().submit(entry.dir.clone(), cfg);
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))).into_response())
}

async fn get_job(State(state): State<AppState>, UrlPath(job): UrlPath<u64>) -> ApiResult<Json<AnalysisJob>> {
    state
        .queue()
        .get(job)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no job {job}")))
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
enum View {
    #[default]
    Rtheta,
    Xy,
}

#[derive(Debug, Deserialize)]
struct FrameQuery {
    #[serde(default)]
    view: View,
    #[serde(default)]
    overlay: u8,
    #[serde(default = "default_size")]
    size: usize,
}

fn default_size() -> usize {
    512
}

async fn frame_image(
    State(state): State<AppState>,
    UrlPath((id, n)): UrlPath<(String, usize)>,
    query: Result<Query<FrameQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    if !(16..=4096).contains(&q.size) {
        return Err(ApiError::invalid("size must be within 16..=4096"));
    }
    let entry = state.entry(&id)?;
    check_frame(&entry, n)?;
    let png = blocking(move || {
        let pb = entry.pullback()?;
        let guard = entry.analysis.read().expect("analysis lock");
        let labels = if q.overlay != 0 {
            guard.as_ref().map(|a| a.labels.frame(n))
        } else {
            None
        };
        let frame = pb.frame(n);
        Ok(match q.view {
            View::Rtheta => io::frame_png_rtheta(frame, labels),
            View::Xy => io::frame_png_xy(frame, labels, q.size),
        })
    })
    .await?;
    Ok(bytes_response("image/png", png))
}

async fn get_labels(State(state): State<AppState>, UrlPath((id, n)): UrlPath<(String, usize)>) -> ApiResult<Response> {
    let entry = state.entry(&id)?;
    check_frame(&entry, n)?;
    let (bytes, rev) = with_analysis(&entry, |a| Ok((a.labels.frame(n).to_vec(), a.revision())))?;
    let mut resp = bytes_response("application/octet-stream", bytes);
    resp.headers_mut().insert(REVISION_HEADER, HeaderValue::from(rev));
    Ok(resp)
}

fn expected_revision(headers: &HeaderMap) -> ApiResult<u64> {
    let raw = headers.get(REVISION_HEADER).ok_or_else(|| {
        ApiError::new(
            StatusCode::PRECONDITION_REQUIRED,
            format!("{REVISION_HEADER} header required"),
        )
    })?;
    raw.to_str()
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| ApiError::invalid(format!("{REVISION_HEADER} must be an unsigned integer")))
}

fn is_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"))
}

async fn put_labels(
    State(state): State<AppState>,
    UrlPath((id, n)): UrlPath<(String, usize)>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let entry = state.entry(&id)?;
    check_frame(&entry, n)?;
    let expected = expected_revision(&headers)?;
    let stroke = if is_json(&headers) {
        Some(serde_json::from_slice::<Stroke>(&body).map_err(|e| ApiError::invalid(e.to_string()))?)
    } else {
        None
    };
    let busy_state = state.clone();
    let outcome = blocking(move || {
        if busy_state.queue().is_busy(&entry.dir) {
            return Err(ApiError::busy());
        }
        let mut guard = entry.analysis.write().expect("analysis lock");
        let a = guard.as_mut().ok_or_else(|| not_analyzed(&entry))?;
        let result = match stroke {
            Some(s) => a.edit(&entry.dir, expected, n, Edit::Stroke(s)),
            None => a.replace_frame(&entry.dir, expected, n, &body),
        };
        result.map_err(|e| match e {
            EditError::Stale { current } => ApiError {
                status: StatusCode::CONFLICT,
                message: format!("revision {expected} is stale"),
                revision: Some(current),
            },
            EditError::Geometry(g) => ApiError::invalid(g.to_string()),
            EditError::BadFrame(m) => ApiError::invalid(m),
            EditError::Io(e) => e.into(),
        })
    })
    .await?;
    let body = match outcome {
        EditOutcome::Applied { revision, pixels } => json!({ "revision": revision, "pixels": pixels, "replayed": false }),
        EditOutcome::Replayed { revision } => json!({ "revision": revision, "pixels": 0, "replayed": true }),
    };
    Ok((
        [(REVISION_HEADER, HeaderValue::from(outcome.revision()))],
        Json(body),
    )
        .into_response())
}

async fn get_edits(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let entry = state.entry(&id)?;
    with_analysis(&entry, |a| Ok(Json(a.transcript.clone()).into_response()))
}

async fn quant_csv(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let entry = state.entry(&id)?;
    let csv = blocking(move || with_analysis(&entry, |a| Ok(io::quant_csv(&a.quant(&entry.meta))))).await?;
    Ok(bytes_response("text/csv", csv))
}

async fn lesions_csv(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let entry = state.entry(&id)?;
    let thresholds = state.0.defaults.quant.score;
    let csv = blocking(move || {
        with_analysis(&entry, |a| {
            let rows = a.quant(&entry.meta);
            let gate = &a.gated[a.roi.start..=a.roi.end];
            let mut lesions = lesion_quant(&rows, gate, &entry.meta.calibration(), &thresholds);
            for l in &mut lesions {
                l.start_frame += a.roi.start;
                l.end_frame += a.roi.start;
            }
            Ok(io::lesion_csv(&lesions))
        })
    })
    .await?;
    Ok(bytes_response("text/csv", csv))
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    #[default]
    Png,
    Json,
    Csv,
}

#[derive(Debug, Deserialize)]
struct EnFaceQuery {
    map: EnFaceKind,
    #[serde(default)]
    format: Format,
}

async fn enface(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<EnFaceQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    let entry = state.entry(&id)?;
    let bins = state.0.defaults.quant.enface_bins;
    blocking(move || {
        with_analysis(&entry, |a| {
            let maps = enface_maps(&a.labels.slice(a.roi.start, a.roi.end), &entry.meta.calibration(), bins);
            Ok(match q.format {
                Format::Png => bytes_response("image/png", io::enface_png(&maps, q.map)),
                Format::Json | Format::Csv => {
                    let values = maps.values(q.map);
                    let rows: Vec<&[f64]> = (0..values.rows()).map(|r| values.row(r)).collect();
                    Json(json!({
                        "map": q.map,
                        "first_frame": a.roi.start,
                        "bins": bins,
                        "values": rows,
                    }))
                    .into_response()
                }
            })
        })
    })
    .await
}

#[derive(Debug, Deserialize)]
struct LongitudinalQuery {
    #[serde(default)]
    angle: f64,
    #[serde(default = "one")]
    overlay: u8,
}

fn one() -> u8 {
    1
}

async fn longitudinal(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<LongitudinalQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    if !q.angle.is_finite() {
        return Err(ApiError::invalid("angle must be finite"));
    }
    let entry = state.entry(&id)?;
    let png = blocking(move || {
        let pb = entry.pullback()?;
        let guard = entry.analysis.read().expect("analysis lock");
        let labels = guard.as_ref().map(|a| &a.labels);
        let view = longitudinal_view(&pb, labels, q.angle);
        Ok(io::longitudinal_png(&view, q.overlay != 0 && labels.is_some()))
    })
    .await?;
    Ok(bytes_response("image/png", png))
}

#[derive(Debug, Deserialize)]
struct StrutQuery {
    #[serde(default = "json_format")]
    format: Format,
}

fn json_format() -> Format {
    Format::Json
}

async fn struts(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<StrutQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    let entry = state.entry(&id)?;
    with_analysis(&entry, |a| {
        let stent = a
            .stent
            .as_ref()
            .ok_or_else(|| ApiError::not_found(format!("pullback {id:?} has no stent analysis")))?;
        Ok(match q.format {
            Format::Csv => bytes_response("text/csv", io::strut_csv(&stent.records)),
            _ => Json(json!({ "struts": stent.records, "report": stent.report })).into_response(),
        })
    })
}

async fn get_annotations(
    State(state): State<AppState>,
    UrlPath((id, n)): UrlPath<(String, usize)>,
) -> ApiResult<Response> {
    let entry = state.entry(&id)?;
    check_frame(&entry, n)?;
    let list = entry
        .annotations
        .lock()
        .expect("annotations lock")
        .get(&n)
        .cloned()
        .unwrap_or_default();
    Ok(Json(list).into_response())
}

async fn measure(
    State(state): State<AppState>,
    UrlPath((id, n)): UrlPath<(String, usize)>,
    body: Result<Json<Measurement>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(m) = body?;
    let entry = state.entry(&id)?;
    check_frame(&entry, n)?;
    if let Measurement::FrameSpan { from, to } = m {
        check_frame(&entry, from.max(to))?;
    }
    let a = blocking(move || entry.annotate(n, m).map_err(ApiError::from))
        .await?
        .ok_or_else(|| ApiError::invalid("degenerate measurement"))?;
    Ok((StatusCode::CREATED, Json(a)).into_response())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Landmarks {
    pub reference: [usize; 2],
    pub floating: [usize; 2],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrationRequest {
    pub reference: String,
    pub floating: String,
    pub mode: RegistrationMode,
    #[serde(default)]
    pub landmarks: Option<Landmarks>,
    #[serde(default)]
    pub config: Option<AutoRegistrationConfig>,
}

async fn registration(
    State(state): State<AppState>,
    body: Result<Json<RegistrationRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let reference = state.entry(&req.reference)?;
    let floating = state.entry(&req.floating)?;
    let result = match req.mode {
        RegistrationMode::Landmark => {
            let lm = req
                .landmarks
                .ok_or_else(|| ApiError::invalid("landmark mode needs landmarks"))?;
            register_landmark(lm.reference, lm.floating, reference.meta.n_frames, floating.meta.n_frames)
        }
        RegistrationMode::Automatic => {
            let cfg = req.config.unwrap_or_else(|| state.0.defaults.registration.clone());
            blocking(move || {
                let signal = |e: &Entry| {
                    with_analysis(e, |a| Ok(thickness_signal(&a.labels, &e.meta.calibration(), &e.id)))
                };
                let (r, f) = (signal(&reference)?, signal(&floating)?);
                Ok(register_auto(&r, &f, &cfg))
            })
            .await?
        }
    };
    let result = result.map_err(|e| ApiError::invalid(e.to_string()))?;
    Ok(Json(result).into_response())
}
