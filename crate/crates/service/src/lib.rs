//! HTTP facade over a trained model: rendering by codes, asynchronous fit
//! jobs, code-bank discovery and interpolation paths.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use facefield::camera::{DEFAULT_FOV_DEG, DEFAULT_RADIUS};
use facefield::fit::{align_landmarks, fit_codes_with_progress, random_init, AlignOptions, AlignedView, FitOptions, FitTarget, TracePoint};
use facefield::metrics::psnr_from_mse;
use facefield::model::{CodeRanges, Model};
use facefield::morph::interpolate;
use facefield::synth::landmarks_for;
use facefield::{Camera, CodeKind, FaceCodes, Image, LandmarkSet, Mask};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

pub const API_VERSION: u32 = 1;
pub const DEFAULT_RESOLUTION: usize = 128;
pub const MAX_RESOLUTION: usize = 1024;
pub const YAW_ENVELOPE: (f64, f64) = (-90.0, 90.0);
pub const PITCH_ENVELOPE: (f64, f64) = (-30.0, 45.0);
const BODY_LIMIT: usize = 64 * 1024 * 1024;

pub const HEADER_RENDER_MS: &str = "x-render-ms";
pub const HEADER_EXTRAPOLATED: &str = "x-extrapolated";
pub const HEADER_API_VERSION: &str = "x-api-version";

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl From<facefield::Error> for ApiError {
    fn from(e: facefield::Error) -> Self {
        use facefield::Error as E;
        let status = match &e {
            E::Config(_) | E::InvalidInput(_) => StatusCode::UNPROCESSABLE_ENTITY,
            E::Schema { .. } => StatusCode::BAD_REQUEST,
            E::AlignmentFailed { .. } | E::FitDiverged { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            E::Io { .. } | E::NonFiniteLoss { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    fn rank(self) -> u8 {
        match self {
            JobStatus::Queued => 0,
            JobStatus::Running => 1,
            JobStatus::Done | JobStatus::Failed => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Fit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobProgress {
    pub iteration: usize,
    pub total: usize,
    pub best_error: f64,
}

/// Milliseconds since the service started.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct JobTimings {
    pub queued_ms: u64,
    pub started_ms: Option<u64>,
    pub finished_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitJobResult {
    pub codes: FaceCodes<f32>,
    pub view: AlignedView,
    pub error: f64,
    pub psnr: f64,
    pub initial_error: f64,
    pub best_iteration: usize,
    pub trace: Vec<TracePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: u64,
    pub kind: JobKind,
    pub status: JobStatus,
    pub progress: Option<JobProgress>,
    pub result: Option<FitJobResult>,
    pub error: Option<String>,
    pub diagnostic: Option<serde_json::Value>,
    pub timings: JobTimings,
}

/// Shared service state: one swappable model snapshot and the job registry.
pub struct AppState {
    model: RwLock<Option<Arc<Model>>>,
    checkpoint: Option<PathBuf>,
    jobs: Mutex<BTreeMap<u64, JobRecord>>,
    next_job: AtomicU64,
    fit_slots: Arc<Semaphore>,
    canonical: LandmarkSet,
    started: Instant,
}

impl AppState {
    /// `fit_workers` bounds how many fit jobs run at once.
    pub fn new(model: Option<Model>, checkpoint: Option<PathBuf>, fit_workers: usize) -> Arc<Self> {
        Arc::new(Self {
            model: RwLock::new(model.map(Arc::new)),
            checkpoint,
            jobs: Mutex::new(BTreeMap::new()),
            next_job: AtomicU64::new(1),
            fit_slots: Arc::new(Semaphore::new(fit_workers.max(1))),
            canonical: landmarks_for(&[], 0),
            started: Instant::now(),
        })
    }

    /// Loads the checkpoint at `dir` and serves from it.
    pub fn from_checkpoint(dir: PathBuf, fit_workers: usize) -> facefield::Result<Arc<Self>> {
        let model = Model::load(&dir)?;
        Ok(Self::new(Some(model), Some(dir), fit_workers))
    }

    pub fn model(&self) -> Option<Arc<Model>> {
        self.model.read().expect("model lock").clone()
    }

    /// Replaces the served snapshot. In-flight requests keep their old one.
    pub fn swap_model(&self, model: Model) {
        *self.model.write().expect("model lock") = Some(Arc::new(model));
    }

    pub fn job(&self, id: u64) -> Option<JobRecord> {
        self.jobs.lock().expect("job lock").get(&id).cloned()
    }

    fn now_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn require_model(&self) -> ApiResult<Arc<Model>> {
        self.model()
            .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no model loaded"))
    }

    fn update_job(&self, id: u64, f: impl FnOnce(&mut JobRecord)) {
        if let Some(job) = self.jobs.lock().expect("job lock").get_mut(&id) {
            let before = job.status;
            f(job);
            debug_assert!(job.status.rank() >= before.rank());
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/render", post(render))
        .route("/fit", post(fit))
        .route("/jobs/{id}", get(job))
        .route("/subjects", get(subjects))
        .route("/expressions", get(expressions))
        .route("/bank/ranges", get(bank_ranges))
        .route("/interpolate", post(interpolate_path))
        .route("/reload", post(reload))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .layer(axum::middleware::map_response(stamp_version))
        .with_state(state)
}

async fn stamp_version(mut res: Response) -> Response {
    res.headers_mut()
        .insert(HeaderName::from_static(HEADER_API_VERSION), HeaderValue::from(API_VERSION));
    res
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub api_version: u32,
    pub model_loaded: bool,
    pub step: Option<u64>,
}

async fn healthz(State(st): State<Arc<AppState>>) -> Json<Health> {
    let model = st.model();
    Json(Health {
        status: "ok".into(),
        api_version: API_VERSION,
        model_loaded: model.is_some(),
        step: model.map(|m| m.step),
    })
}

async fn reload(State(st): State<Arc<AppState>>) -> ApiResult<Json<Health>> {
    let Some(dir) = st.checkpoint.clone() else {
        return Err(ApiError::new(StatusCode::CONFLICT, "service was started without a checkpoint"));
    };
    let model = tokio::task::spawn_blocking(move || Model::load(&dir))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    st.swap_model(model);
    Ok(healthz(State(st)).await)
}

/// Codes given explicitly or pulled from the bank by subject and expression.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CodeSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codes: Option<FaceCodes<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<usize>,
    /// Expression label for bank lookups; neutral when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<usize>,
}

impl CodeSource {
    fn resolve(&self, model: &Model) -> ApiResult<FaceCodes<f32>> {
        let cfg = &model.config.field;
        match (&self.codes, self.subject_id) {
            (Some(_), Some(_)) => Err(ApiError::bad_request("give either codes or subject_id, not both")),
            (None, None) => Err(ApiError::bad_request("codes or subject_id required")),
            (Some(c), None) => {
                c.validate(cfg.shape_dim, cfg.expr_dim)?;
                Ok(c.clone())
            }
            (None, Some(s)) => {
                let e = self.expression.unwrap_or(0);
                if s >= model.n_subjects() {
                    return Err(ApiError::not_found(format!("unknown subject {s}")));
                }
                if e >= model.n_expressions() {
                    return Err(ApiError::not_found(format!("unknown expression {e}")));
                }
                Ok(model.codes(s, e)?)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CameraSpec {
    pub yaw: f64,
    pub pitch: f64,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_radius() -> f64 {
    DEFAULT_RADIUS
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

impl CameraSpec {
    pub fn extrapolated(&self) -> bool {
        !(YAW_ENVELOPE.0..=YAW_ENVELOPE.1).contains(&self.yaw)
            || !(PITCH_ENVELOPE.0..=PITCH_ENVELOPE.1).contains(&self.pitch)
    }

    fn camera(&self) -> ApiResult<Camera> {
        if self.resolution == 0 || self.resolution > MAX_RESOLUTION {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("resolution must lie in 1..={MAX_RESOLUTION}"),
            ));
        }
        Ok(Camera::orbit_with_fov(
            self.yaw,
            self.pitch,
            self.radius,
            self.resolution,
            self.resolution,
            DEFAULT_FOV_DEG,
        )?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderRequest {
    #[serde(flatten)]
    pub source: CodeSource,
    pub camera: CameraSpec,
    /// Coarse pass only, for interactive latency.
    #[serde(default)]
    pub coarse_only: bool,
}

async fn render(State(st): State<Arc<AppState>>, Json(req): Json<RenderRequest>) -> ApiResult<Response> {
    let model = st.require_model()?;
    let codes = req.source.resolve(&model)?;
    let cam = req.camera.camera()?;
    let mut settings = model.render_settings();
    settings.coarse_only = req.coarse_only;
    let start = Instant::now();
    let png = tokio::task::spawn_blocking(move || model.render(&codes, &cam, &settings).map(|img| img.to_png_bytes()))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let headers = [
        (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
        (HeaderName::from_static(HEADER_RENDER_MS), HeaderValue::from_str(&format!("{ms:.1}")).expect("ascii")),
        (
            HeaderName::from_static(HEADER_EXTRAPOLATED),
            HeaderValue::from_static(if req.camera.extrapolated() { "true" } else { "false" }),
        ),
    ];
    Ok((headers, png).into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectInfo {
    pub id: usize,
    pub shape: Vec<f32>,
    pub appearance: Vec<f32>,
}

async fn subjects(State(st): State<Arc<AppState>>) -> ApiResult<Json<serde_json::Value>> {
    let model = st.require_model()?;
    let list: Vec<SubjectInfo> = (0..model.n_subjects())
        .map(|id| SubjectInfo {
            id,
            shape: model.bank.shape[id].clone(),
            appearance: model.bank.appearance[id].clone(),
        })
        .collect();
    Ok(Json(serde_json::json!({ "subjects": list })))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpressionInfo {
    pub label: usize,
    pub name: String,
    pub code: Vec<f32>,
}

async fn expressions(State(st): State<Arc<AppState>>) -> ApiResult<Json<serde_json::Value>> {
    let model = st.require_model()?;
    let list: Vec<ExpressionInfo> = model
        .expression_labels()
        .into_iter()
        .enumerate()
        .map(|(label, name)| ExpressionInfo {
            label,
            name,
            code: model.bank.expression[label].clone(),
        })
        .collect();
    Ok(Json(serde_json::json!({ "expressions": list })))
}

async fn bank_ranges(State(st): State<Arc<AppState>>) -> ApiResult<Json<CodeRanges>> {
    Ok(Json(st.require_model()?.code_ranges()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpolateRequest {
    pub a: CodeSource,
    pub b: CodeSource,
    pub ts: Vec<f64>,
    /// Components to morph; all three when absent.
    #[serde(default)]
    pub dims: Option<Vec<CodeKind>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpolateResponse {
    pub ts: Vec<f64>,
    pub codes: Vec<FaceCodes<f32>>,
}

async fn interpolate_path(
    State(st): State<Arc<AppState>>,
    Json(req): Json<InterpolateRequest>,
) -> ApiResult<Json<InterpolateResponse>> {
    let model = st.require_model()?;
    let a = req.a.resolve(&model)?;
    let b = req.b.resolve(&model)?;
    let dims = req
        .dims
        .unwrap_or_else(|| vec![CodeKind::Shape, CodeKind::Appearance, CodeKind::Expression]);
    let codes = req
        .ts
        .iter()
        .map(|&t| interpolate(&a, &b, t, &dims))
        .collect::<facefield::Result<Vec<_>>>()?;
    Ok(Json(InterpolateResponse { ts: req.ts, codes }))
}

/// Optional tuning sent alongside a fit upload.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitJobOptions {
    /// Partial [`FitOptions`]; rendering defaults to the model's settings.
    pub fit: serde_json::Value,
    pub align: AlignOptions,
    pub init_std: f64,
    pub init_seed: u64,
}

impl Default for FitJobOptions {
    fn default() -> Self {
        Self {
            fit: serde_json::json!({}),
            align: AlignOptions::default(),
            init_std: 0.3,
            init_seed: 0,
        }
    }
}

impl FitJobOptions {
    fn resolve(&self, model: &Model) -> ApiResult<FitOptions> {
        let mut fit = match &self.fit {
            serde_json::Value::Null => serde_json::json!({}),
            v @ serde_json::Value::Object(_) => v.clone(),
            _ => return Err(ApiError::bad_request("fit options must be a JSON object")),
        };
        if fit.get("render").is_none() {
            fit["render"] = serde_json::to_value(model.render_settings()).expect("settings serialize");
        }
        let opts: FitOptions =
            serde_json::from_value(fit).map_err(|e| ApiError::bad_request(format!("fit options: {e}")))?;
        opts.validate()?;
        Ok(opts)
    }
}

struct FitUpload {
    target: FitTarget,
    options: FitJobOptions,
}

async fn read_upload(mut mp: Multipart) -> ApiResult<FitUpload> {
    let (mut image, mut mask, mut landmarks, mut options) = (None, None, None, None);
    while let Some(field) = mp
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(format!("multipart: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request(format!("multipart field {name}: {e}")))?;
        match name.as_str() {
            "image" => {
                image = Some(Image::from_png_bytes(&bytes).map_err(|e| ApiError::bad_request(format!("image: {e}")))?)
            }
            "mask" => mask = Some(Mask::from_png_bytes(&bytes).map_err(|e| ApiError::bad_request(format!("mask: {e}")))?),
            "landmarks" => {
                landmarks = Some(
                    serde_json::from_slice::<Vec<[f64; 2]>>(&bytes)
                        .map_err(|e| ApiError::bad_request(format!("landmarks: {e}")))?,
                )
            }
            "options" => {
                options = Some(
                    serde_json::from_slice::<FitJobOptions>(&bytes)
                        .map_err(|e| ApiError::bad_request(format!("options: {e}")))?,
                )
            }
            other => return Err(ApiError::bad_request(format!("unexpected field '{other}'"))),
        }
    }
    let image = image.ok_or_else(|| ApiError::bad_request("missing image"))?;
    let mask = mask.ok_or_else(|| ApiError::bad_request("missing mask"))?;
    let landmarks = landmarks.ok_or_else(|| ApiError::bad_request("missing landmarks"))?;
    let target = FitTarget::new(image, mask, landmarks).map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(FitUpload {
        target,
        options: options.unwrap_or_default(),
    })
}

async fn fit(State(st): State<Arc<AppState>>, mp: Multipart) -> ApiResult<(StatusCode, Json<JobRecord>)> {
    let model = st.require_model()?;
    let upload = read_upload(mp).await?;
    let opts = upload.options.resolve(&model)?;
    let id = st.next_job.fetch_add(1, Ordering::Relaxed);
    let record = JobRecord {
        id,
        kind: JobKind::Fit,
        status: JobStatus::Queued,
        progress: None,
        result: None,
        error: None,
        diagnostic: None,
        timings: JobTimings {
            queued_ms: st.now_ms(),
            ..Default::default()
        },
    };
    st.jobs.lock().expect("job lock").insert(id, record.clone());
    let worker = st.clone();
    tokio::spawn(async move {
        let Ok(_permit) = worker.fit_slots.clone().acquire_owned().await else {
            return;
        };
        let started = worker.now_ms();
        worker.update_job(id, |j| {
            j.status = JobStatus::Running;
            j.timings.started_ms = Some(started);
        });
        let inner = worker.clone();
        let outcome =
            tokio::task::spawn_blocking(move || run_fit(&inner, id, &model, &upload.target, &upload.options, &opts)).await;
        let finished = worker.now_ms();
        worker.update_job(id, |j| {
            j.timings.finished_ms = Some(finished);
            match outcome {
                Ok(Ok(result)) => {
                    j.status = JobStatus::Done;
                    j.result = Some(result);
                }
                Ok(Err(e)) => {
                    j.status = JobStatus::Failed;
                    j.diagnostic = diagnostic(&e);
                    j.error = Some(e.to_string());
                }
                Err(e) => {
                    j.status = JobStatus::Failed;
                    j.error = Some(format!("fit worker panicked: {e}"));
                }
            }
        });
    });
    Ok((StatusCode::ACCEPTED, Json(record)))
}

fn diagnostic(e: &facefield::Error) -> Option<serde_json::Value> {
    match e {
        facefield::Error::FitDiverged {
            iteration,
            error,
            initial,
            trace,
        } => Some(serde_json::json!({
            "kind": "diverged",
            "iteration": iteration,
            "error": error,
            "initial": initial,
            "trace": trace,
        })),
        facefield::Error::AlignmentFailed {
            residual_px,
            threshold_px,
            yaw_deg,
            pitch_deg,
            scale,
        } => Some(serde_json::json!({
            "kind": "alignment_failed",
            "residual_px": finite_or_null(*residual_px),
            "threshold_px": threshold_px,
            "yaw_deg": finite_or_null(*yaw_deg),
            "pitch_deg": finite_or_null(*pitch_deg),
            "scale": finite_or_null(*scale),
        })),
        _ => None,
    }
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        v.into()
    } else {
        serde_json::Value::Null
    }
}

fn run_fit(
    st: &AppState,
    id: u64,
    model: &Model,
    target: &FitTarget,
    job: &FitJobOptions,
    opts: &FitOptions,
) -> facefield::Result<FitJobResult> {
    let view = align_landmarks(target, &st.canonical, &job.align)?;
    let neutral = model.bank.expression.first().cloned().unwrap_or_default();
    let init = random_init(model.config.field.shape_dim, neutral, job.init_std, job.init_seed)?;
    let r = fit_codes_with_progress(target, &model.weights, &view, init, opts, &mut |p| {
        st.update_job(id, |j| {
            j.progress = Some(JobProgress {
                iteration: p.iteration,
                total: p.total,
                best_error: p.best_error,
            })
        })
    })?;
    Ok(FitJobResult {
        psnr: psnr_from_mse(r.error),
        codes: r.codes,
        view: r.view,
        error: r.error,
        initial_error: r.initial_error,
        best_iteration: r.best_iteration,
        trace: r.trace,
    })
}

async fn job(State(st): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult<Json<JobRecord>> {
    st.job(id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown job {id}")))
}
