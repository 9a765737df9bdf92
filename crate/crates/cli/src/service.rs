use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use sssp_core::data::CameraDistribution;
use sssp_core::harness::{load_codec, Checkpoint, SsspModel, TrainConfig};
use sssp_core::image::{ContourImage, Image, SketchImage};
use sssp_core::render::Camera;
use sssp_core::vq::SketchCodec;
use tower_http::services::ServeDir;

use crate::gallery::{build_gallery, GalleryEntry};
use crate::session::SessionStore;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub session_ttl: Duration,
    pub session_capacity: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { session_ttl: Duration::from_secs(15 * 60), session_capacity: 256 }
    }
}

/// Loaded models plus the session store. Weights are read-only after
/// construction; only the session store mutates.
pub struct AppState {
    pub model: Option<Arc<SsspModel>>,
    pub codec: Option<Arc<SketchCodec>>,
    /// Pose range the portrait model was trained on; requests are clamped to it.
    pub cameras: CameraDistribution,
    pub sessions: SessionStore,
    pub gallery: Vec<GalleryEntry>,
    pub checkpoint_hash: Option<String>,
}

impl AppState {
    /// `portrait` is an SSSP checkpoint; `sketch` a contour-stage checkpoint
    /// (holding the full `vq.*` codec).
    pub fn from_checkpoints(portrait: Option<&Checkpoint>, sketch: Option<&Checkpoint>, cfg: &ServiceConfig) -> anyhow::Result<Self> {
        let mut hasher = Sha256::new();
        let mut cameras = CameraDistribution::default();
        let model = match portrait {
            Some(ck) => {
                hasher.update(ck.to_bytes()?);
                let train: TrainConfig = serde_json::from_value(ck.config.clone())?;
                cameras = train.data.cameras;
                Some(Arc::new(SsspModel::from_checkpoint(ck)?))
            }
            None => None,
        };
        let codec = match sketch {
            Some(ck) => {
                hasher.update(ck.to_bytes()?);
                Some(Arc::new(load_codec(ck)?))
            }
            None => None,
        };
        let canvas = codec
            .as_ref()
            .map(|c| c.cfg.resolution)
            .or(model.as_ref().map(|m| m.cfg.image_resolution))
            .unwrap_or(64);
        let checkpoint_hash = (portrait.is_some() || sketch.is_some()).then(|| hex::encode(hasher.finalize()));
        Ok(Self {
            model,
            codec,
            cameras,
            sessions: SessionStore::new(cfg.session_capacity, cfg.session_ttl),
            gallery: build_gallery(canvas)?,
            checkpoint_hash,
        })
    }

    pub fn load(portrait: Option<&Path>, sketch: Option<&Path>, cfg: &ServiceConfig) -> anyhow::Result<Self> {
        let p = portrait.map(Checkpoint::load).transpose()?;
        let s = sketch.map(Checkpoint::load).transpose()?;
        Self::from_checkpoints(p.as_ref(), s.as_ref(), cfg)
    }
}

/// Error body `{"error": message}` with a status code.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/contours", get(contours))
        .route("/api/contour2sketch", post(contour2sketch))
        .route("/api/sketch2portrait", post(sketch2portrait))
        .route("/api/view", get(view))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn health(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let ready = s.model.is_some() && s.codec.is_some();
    Json(json!({
        "status": if ready { "ok" } else { "degraded" },
        "checkpoint_hash": s.checkpoint_hash,
        "portrait_model": s.model.is_some(),
        "sketch_model": s.codec.is_some(),
    }))
}

async fn contours(State(s): State<Arc<AppState>>) -> Json<Vec<GalleryEntry>> {
    Json(s.gallery.clone())
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))
}

/// Decodes a base64 PNG into a grayscale `size × size` image.
fn decode_gray(b64: &str, size: usize) -> ApiResult<Image> {
    let bytes = STANDARD.decode(b64.trim()).map_err(|e| ApiError::bad_request(format!("invalid base64: {e}")))?;
    let img = Image::from_png(&bytes, true).map_err(|e| ApiError::bad_request(format!("invalid PNG: {e}")))?;
    if img.height != size || img.width != size {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("expected a {size}x{size} image, got {}x{}", img.width, img.height),
        ));
    }
    Ok(img)
}

fn encode_png(img: &Image) -> ApiResult<String> {
    Ok(STANDARD.encode(img.to_png().map_err(ApiError::internal)?))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> sssp_core::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?.map_err(ApiError::internal)
}

fn unavailable(what: &str) -> ApiError {
    ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("{what} model not loaded"))
}

#[derive(Deserialize)]
struct ContourRequest {
    contour: String,
}

async fn contour2sketch(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let codec = s.codec.clone().ok_or_else(|| unavailable("sketch"))?;
    let req: ContourRequest = parse_json(&body)?;
    let img = decode_gray(&req.contour, codec.cfg.resolution)?;
    let contour = ContourImage::new(img).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let sketch = blocking(move || codec.contour_to_sketch(&contour)).await?;
    Ok(Json(json!({ "sketch": encode_png(sketch.image())? })))
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
struct Pose {
    yaw: f64,
    pitch: f64,
}

#[derive(Deserialize)]
struct PortraitRequest {
    sketch: String,
    #[serde(default)]
    camera: Pose,
}

/// Camera at the requested pose, clamped to the trained range.
fn posed_camera(cameras: &CameraDistribution, yaw: f64, pitch: f64) -> ApiResult<(Camera, Option<String>)> {
    if !yaw.is_finite() || !pitch.is_finite() {
        return Err(ApiError::bad_request("yaw and pitch must be finite"));
    }
    let (cy, cp) = cameras.clamp(yaw, pitch);
    let warning = (cy != yaw || cp != pitch).then(|| {
        format!(
            "pose ({yaw}, {pitch}) clamped to ({cy}, {cp}); trained range yaw {:?}, pitch {:?}",
            cameras.yaw, cameras.pitch
        )
    });
    let cam = Camera { yaw: cy, pitch: cp, radius: cameras.radius, fov_y: cameras.fov_y, window: Default::default() };
    Ok((cam, warning))
}

async fn sketch2portrait(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let model = s.model.clone().ok_or_else(|| unavailable("portrait"))?;
    let req: PortraitRequest = parse_json(&body)?;
    let img = decode_gray(&req.sketch, model.cfg.image_resolution)?;
    let sketch = SketchImage::new(img).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let (cam, warning) = posed_camera(&s.cameras, req.camera.yaw, req.camera.pitch)?;
    let (portrait, planes, latent) = blocking(move || model.portrait(&sketch, &cam)).await?;
    let session_id = s.sessions.insert(planes, latent, cam);
    let mut out = json!({
        "portrait": encode_png(&portrait)?,
        "session_id": session_id,
        "camera": Pose { yaw: cam.yaw, pitch: cam.pitch },
    });
    if let Some(w) = warning {
        out["warning"] = json!(w);
    }
    Ok(Json(out))
}

fn query_f64(q: &HashMap<String, String>, key: &str) -> ApiResult<Option<f64>> {
    q.get(key)
        .map(|v| v.parse::<f64>().map_err(|_| ApiError::bad_request(format!("{key} must be a number"))))
        .transpose()
}

/// Raw PNG of a cached session at a new pose. Re-renders the cached
/// tri-plane; never runs the encoder or the backbone.
async fn view(State(s): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Response> {
    let model = s.model.clone().ok_or_else(|| unavailable("portrait"))?;
    let id = q.get("session_id").ok_or_else(|| ApiError::bad_request("session_id is required"))?;
    let session = s
        .sessions
        .get(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown or expired session {id}")))?;
    let yaw = query_f64(&q, "yaw")?.unwrap_or(session.camera.yaw);
    let pitch = query_f64(&q, "pitch")?.unwrap_or(session.camera.pitch);
    let (cam, warning) = posed_camera(&s.cameras, yaw, pitch)?;
    let img = blocking(move || model.view(&session.planes, &session.latent, &cam)).await?;
    let png = img.to_png().map_err(ApiError::internal)?;
    let mut resp = ([(header::CONTENT_TYPE, "image/png")], png).into_response();
    if let Some(w) = warning.and_then(|w| HeaderValue::from_str(&w).ok()) {
        resp.headers_mut().insert("x-sssp-warning", w);
    }
    Ok(resp)
}
