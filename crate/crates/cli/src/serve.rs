//! HTTP front end for the scene composer, plus an optional mock model host
//! speaking the `/v1/*` protocol.

use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use bev2ego::metrics::{display_box, matched_confidence, MmsConfig};
use bev2ego::pipeline::{
    evaluate_scenes, mine_errors, read_records, realize_scene, rebuild_run, EvaluationOptions, MiningOptions,
    PipelineConfig, ResultLog, ResumeState,
};
use bev2ego::raster::{mask_to_b64, rgb_from_b64, rgb_to_b64};
use bev2ego::scene::SceneConfig;
use bev2ego::services::protocol::*;
use bev2ego::services::{
    DetectQuery, Detector, OutpaintQuery, RenderQuery, ServiceError, ServiceSet, VqaQuery,
};

use crate::commands::preview_json;
use crate::files::write_scene;

/// Run id stamped on records appended by the service.
pub const SERVE_RUN_ID: &str = "serve";

pub struct AppState {
    pub store: PathBuf,
    pub services: ServiceSet,
    pub cfg: PipelineConfig,
    pub mms: MmsConfig,
    /// Serializes writes to the store.
    write_lock: Mutex<()>,
}

impl AppState {
    pub fn new(store: PathBuf, services: ServiceSet, mms: MmsConfig) -> std::io::Result<Self> {
        fs::create_dir_all(store.join("scenes"))?;
        Ok(Self { store, services, cfg: PipelineConfig::default(), mms, write_lock: Mutex::new(()) })
    }

    fn scenes_dir(&self) -> PathBuf {
        self.store.join("scenes")
    }

    fn results_path(&self) -> PathBuf {
        self.store.join("results.jsonl")
    }

    fn scene_path(&self, id: &str) -> Result<PathBuf, ApiError> {
        if !valid_id(id) {
            return Err(ApiError::bad_request(format!("invalid scene id {id:?}")));
        }
        Ok(self.scenes_dir().join(format!("{id}.json")))
    }

    fn load_scene(&self, id: &str) -> Result<SceneConfig, ApiError> {
        let path = self.scene_path(id)?;
        let text = fs::read_to_string(&path).map_err(|_| ApiError::not_found(format!("no scene {id}")))?;
        SceneConfig::from_document(&text).map_err(|e| ApiError::internal(format!("stored scene {id}: {e}")))
    }

    fn all_scenes(&self) -> Result<Vec<SceneConfig>, ApiError> {
        let mut paths: Vec<PathBuf> = fs::read_dir(self.scenes_dir())
            .map_err(|e| ApiError::internal(e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p).map_err(|e| ApiError::internal(e.to_string()))?;
                SceneConfig::from_document(&text).map_err(|e| ApiError::internal(format!("{}: {e}", p.display())))
            })
            .collect()
    }

    /// The scene with its seeds cut to the configured count.
    fn trimmed(&self, mut scene: SceneConfig) -> Result<SceneConfig, ApiError> {
        let n = self.mms.seeds_per_scene;
        if scene.seeds.len() < n {
            return Err(ApiError::unprocessable(format!("scene {} has {} seeds, the service scores {n}", scene.id, scene.seeds.len())));
        }
        scene.seeds.truncate(n);
        Ok(scene)
    }
}

/// Scene ids double as file names.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code: code.into(), message: message.into() } }
    }

    fn bad_request(m: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", m)
    }

    fn not_found(m: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", m)
    }

    fn conflict(m: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", m)
    }

    fn unprocessable(m: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_scene", m)
    }

    fn internal(m: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", m)
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let (status, code) = e.status_and_code();
        let message = match e {
            ServiceError::Range(m) | ServiceError::Protocol(m) | ServiceError::Unavailable(m) => m,
            other => other.to_string(),
        };
        Self::new(StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR), code, message)
    }
}

impl From<bev2ego::pipeline::PipelineError> for ApiError {
    fn from(e: bev2ego::pipeline::PipelineError) -> Self {
        use bev2ego::pipeline::PipelineError as P;
        match e {
            P::Service { source, .. } => source.into(),
            P::Scene(_) | P::Composition { .. } | P::Config(_) | P::Metrics(_) => Self::unprocessable(e.to_string()),
            other => Self::internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_json<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "protocol_error", e.to_string()))
}

fn parse_scene(body: &[u8]) -> ApiResult<SceneConfig> {
    let text = std::str::from_utf8(body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let scene = SceneConfig::from_document(text).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    if !valid_id(&scene.id) {
        return Err(ApiError::bad_request(format!("invalid scene id {:?}", scene.id)));
    }
    Ok(scene)
}

/// Runs pipeline work off the async workers; the HTTP client it may use blocks.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

type Shared = State<Arc<AppState>>;

async fn health(State(st): Shared) -> Json<Value> {
    Json(json!({ "status": "ok", "detectors": st.services.detector_names() }))
}

async fn list_scenes(State(st): Shared) -> ApiResult<Json<Value>> {
    blocking(move || {
        let scenes = st.all_scenes()?;
        Ok(Json(json!(scenes
            .iter()
            .map(|s| json!({ "id": s.id, "cars": s.cars.len(), "background": s.background, "seeds": s.seeds.len() }))
            .collect::<Vec<_>>())))
    })
    .await
}

async fn create_scene(State(st): Shared, body: Bytes) -> ApiResult<(StatusCode, Json<SceneConfig>)> {
    blocking(move || {
        let scene = parse_scene(&body)?;
        let _g = st.write_lock.lock().expect("store lock");
        if st.scene_path(&scene.id)?.exists() {
            return Err(ApiError::conflict(format!("scene {} exists", scene.id)));
        }
        write_scene(&st.scenes_dir(), &scene).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok((StatusCode::CREATED, Json(scene)))
    })
    .await
}

async fn get_scene(State(st): Shared, Path(id): Path<String>) -> ApiResult<Json<SceneConfig>> {
    blocking(move || st.load_scene(&id).map(Json)).await
}

async fn put_scene(State(st): Shared, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<SceneConfig>> {
    blocking(move || {
        let scene = parse_scene(&body)?;
        if scene.id != id {
            return Err(ApiError::bad_request(format!("body id {} does not match path id {id}", scene.id)));
        }
        let _g = st.write_lock.lock().expect("store lock");
        if !st.scene_path(&id)?.exists() {
            return Err(ApiError::not_found(format!("no scene {id}")));
        }
        write_scene(&st.scenes_dir(), &scene).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(Json(scene))
    })
    .await
}

async fn delete_scene(State(st): Shared, Path(id): Path<String>) -> ApiResult<StatusCode> {
    blocking(move || {
        let path = st.scene_path(&id)?;
        let _g = st.write_lock.lock().expect("store lock");
        fs::remove_file(path).map_err(|_| ApiError::not_found(format!("no scene {id}")))?;
        Ok(StatusCode::NO_CONTENT)
    })
    .await
}

async fn preview_body(State(st): Shared, body: Bytes) -> ApiResult<Json<Value>> {
    blocking(move || {
        let text = std::str::from_utf8(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let scene = SceneConfig::from_document(text).map_err(|e| ApiError::unprocessable(e.to_string()))?;
        preview_json(&scene, &st.cfg).map(Json).map_err(|e| ApiError::unprocessable(e.to_string()))
    })
    .await
}

async fn preview_stored(State(st): Shared, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let scene = st.load_scene(&id)?;
        preview_json(&scene, &st.cfg).map(Json).map_err(|e| ApiError::unprocessable(e.to_string()))
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RealizeBody {
    seed: Option<u64>,
}

async fn realize(State(st): Shared, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    blocking(move || {
        let req: RealizeBody = if body.is_empty() { RealizeBody::default() } else { parse_json(&body)? };
        let scene = st.load_scene(&id)?;
        let seed = req.seed.or_else(|| scene.seeds.first().copied()).unwrap_or(0);
        let r = realize_scene(&scene, seed, &st.services, &st.cfg)?;
        Ok(Json(json!({
            "sidecar": r.sidecar,
            "image_png_b64": rgb_to_b64(&r.image),
            "object_mask_png_b64": mask_to_b64(&r.object_mask),
        })))
    })
    .await
}

/// Scores one stored scene with every detector and appends the records to the
/// store's log; later records for the same scene replace earlier ones.
async fn evaluate(State(st): Shared, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let scene = st.trimmed(st.load_scene(&id)?)?;
        let opts = EvaluationOptions { mms: st.mms.clone(), chunk_size: 1, send_oracle: true };
        let run = {
            let _g = st.write_lock.lock().expect("store lock");
            let (mut log, _) = ResultLog::resume(&st.results_path(), SERVE_RUN_ID)?;
            evaluate_scenes(std::slice::from_ref(&scene), &st.services, &st.cfg, &opts, SERVE_RUN_ID, Some(&mut log), &ResumeState::default())?
        };
        let detectors: Vec<Value> = run
            .detectors
            .iter()
            .enumerate()
            .map(|(d, name)| match &run.evaluations[d][0] {
                None => {
                    let error = run.failures.iter().find(|f| f.detector.as_deref() == Some(name)).map(|f| f.error.clone());
                    json!({ "detector": name, "error": error.unwrap_or_else(|| "evaluation failed".into()) })
                }
                Some(e) => {
                    let seeds: Vec<Value> = e
                        .seeds
                        .iter()
                        .map(|s| {
                            let objects: Vec<Value> = s
                                .ground_truth
                                .iter()
                                .map(|gt| {
                                    let shown = display_box(&s.detections, gt);
                                    json!({
                                        "full": gt.full,
                                        "visible": gt.visible,
                                        "confidence_at_50": matched_confidence(&s.detections, gt, 0.5, &st.mms.target_class),
                                        "display_box": shown.map(|i| &s.detections[i]),
                                    })
                                })
                                .collect();
                            json!({ "seed": s.seed, "detections": s.detections, "objects": objects })
                        })
                        .collect();
                    json!({ "detector": name, "mms": e.mms, "mms_at_50": e.mms_at_50, "seeds": seeds })
                }
            })
            .collect();
        Ok(Json(json!({ "scene_id": scene.id, "detectors": detectors })))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct MiningParams {
    detector: Option<String>,
    min_support: Option<usize>,
    top_k: Option<usize>,
    #[serde(default)]
    at_50: bool,
}

async fn mining(State(st): Shared, Query(p): Query<MiningParams>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let path = st.results_path();
        let records = if path.exists() { read_records(&path)? } else { Vec::new() };
        let scenes: Vec<SceneConfig> =
            st.all_scenes()?.into_iter().filter(|s| s.seeds.len() >= st.mms.seeds_per_scene).map(|s| st.trimmed(s)).collect::<ApiResult<_>>()?;
        let detectors = st.services.detector_names();
        let run = rebuild_run(&scenes, &detectors, &records, &st.mms, &st.cfg)?;
        let name = p.detector.unwrap_or_else(|| detectors[0].clone());
        let d = run.detector_index(&name).ok_or_else(|| ApiError::not_found(format!("no detector {name}")))?;
        let mut opts = MiningOptions::default();
        if let Some(m) = p.min_support {
            opts.min_support = m;
        }
        if let Some(k) = p.top_k {
            opts.top_k = k;
        }
        // only scenes the service has scored take part
        let values = run.values(p.at_50).swap_remove(d);
        let (attrs, vals): (Vec<_>, Vec<_>) =
            run.scenes.iter().cloned().zip(values).filter(|(_, v)| v.is_some()).unzip();
        let report = mine_errors(&name, &attrs, &vals, &opts)?;
        Ok(Json(serde_json::to_value(&report).expect("serializable report")))
    })
    .await
}

// ---------------------------------------------------------------- /v1 mock host

async fn v1_render(State(st): Shared, body: Bytes) -> ApiResult<Json<RenderResponse>> {
    blocking(move || {
        let req: RenderRequest = parse_json(&body)?;
        let q: RenderQuery = req.to_query()?;
        let cutout = st.services.renderer.render(&q)?;
        Ok(Json(RenderResponse::from_cutout(req.request_id, &cutout)))
    })
    .await
}

async fn v1_outpaint(State(st): Shared, body: Bytes) -> ApiResult<Json<OutpaintResponse>> {
    blocking(move || {
        let req: OutpaintRequest = parse_json(&body)?;
        let (image, object_mask, road_mask) = req.decode()?;
        let out = st.services.outpainter.outpaint(&OutpaintQuery {
            image: &image,
            object_mask: &object_mask,
            road_mask: &road_mask,
            prompt: &req.prompt,
            seed: req.seed,
            controlnet_weight: req.controlnet_weight,
        })?;
        Ok(Json(OutpaintResponse { request_id: req.request_id, image_png_b64: rgb_to_b64(&out) }))
    })
    .await
}

async fn v1_segment(State(st): Shared, body: Bytes) -> ApiResult<Json<SegmentResponse>> {
    blocking(move || {
        let req: SegmentRequest = parse_json(&body)?;
        let image = rgb_from_b64(&req.image_png_b64).map_err(ServiceError::from)?;
        let mask = st.services.segmenter.segment(&image, (req.point[0], req.point[1]))?;
        Ok(Json(SegmentResponse { request_id: req.request_id, mask_png_b64: mask_to_b64(&mask) }))
    })
    .await
}

fn detect_with(detector: &dyn Detector, body: &[u8]) -> ApiResult<Json<DetectResponse>> {
    let req: DetectRequest = parse_json(body)?;
    let image = rgb_from_b64(&req.image_png_b64).map_err(ServiceError::from)?;
    let detections =
        detector.detect(&DetectQuery { image: &image, nms_iou: req.nms_iou, oracle: req.test_oracle.as_ref() })?;
    Ok(Json(DetectResponse { request_id: req.request_id, detections }))
}

async fn v1_detect(State(st): Shared, body: Bytes) -> ApiResult<Json<DetectResponse>> {
    blocking(move || detect_with(st.services.detectors[0].detector.as_ref(), &body)).await
}

async fn v1_detect_named(State(st): Shared, Path(name): Path<String>, body: Bytes) -> ApiResult<Json<DetectResponse>> {
    blocking(move || {
        let d = st
            .services
            .detectors
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| ApiError::not_found(format!("no detector {name}")))?;
        detect_with(d.detector.as_ref(), &body)
    })
    .await
}

async fn v1_vqa(State(st): Shared, body: Bytes) -> ApiResult<Json<VqaResponse>> {
    blocking(move || {
        let req: VqaRequest = parse_json(&body)?;
        let image = rgb_from_b64(&req.image_png_b64).map_err(ServiceError::from)?;
        let answer = st.services.vqa.answer(&VqaQuery {
            image: &image,
            question: &req.question,
            choices: &req.choices,
            oracle: req.test_oracle.as_ref(),
        })?;
        Ok(Json(VqaResponse { request_id: req.request_id, answer }))
    })
    .await
}

/// The composer API. With `model_host`, the service set is also exposed under
/// `/v1/*`, and each detector under `/detectors/{name}/v1/detect`.
pub fn router(state: Arc<AppState>, model_host: bool) -> Router {
    let mut app = Router::new()
        .route("/health", get(health))
        .route("/api/scenes", get(list_scenes).post(create_scene))
        .route("/api/scenes/{id}", get(get_scene).put(put_scene).delete(delete_scene))
        .route("/api/scenes/{id}/preview", get(preview_stored))
        .route("/api/scenes/{id}/realize", post(realize))
        .route("/api/scenes/{id}/evaluate", post(evaluate))
        .route("/api/preview", post(preview_body))
        .route("/api/mining", get(mining));
    if model_host {
        app = app
            .route(RENDER_PATH, post(v1_render))
            .route(OUTPAINT_PATH, post(v1_outpaint))
            .route(SEGMENT_PATH, post(v1_segment))
            .route(DETECT_PATH, post(v1_detect))
            .route(VQA_PATH, post(v1_vqa))
            .route(&format!("/detectors/{{name}}{DETECT_PATH}"), post(v1_detect_named));
    }
    app.with_state(state)
}

/// Binds `addr` and serves until the process ends. `on_bound` sees the actual
/// address, which differs from `addr` when port 0 was asked for.
pub fn run(addr: SocketAddr, state: AppState, model_host: bool, on_bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        on_bound(listener.local_addr()?);
        axum::serve(listener, router(Arc::new(state), model_host)).await
    })
}
