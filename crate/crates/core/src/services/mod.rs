//! Model services behind a small trait per operation, with deterministic mocks,
//! the `/v1/*` JSON wire protocol and an HTTP client speaking it.

mod endpoints;
mod http;
pub mod mock;
pub mod protocol;

use std::sync::Arc;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::metrics::Detection;
use crate::raster::{BinaryMask, RasterError};
use crate::scene::{Background, CarColor, CarType};

pub use endpoints::{DetectorMock, EndpointSpec, EndpointsConfig, ENDPOINTS_ENV};
pub use http::{HttpService, ServiceEndpoint};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ServiceError {
    #[error("service unavailable: {0}")]
    Unavailable(String),
    #[error("request timed out after {0} ms")]
    Timeout(u64),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("argument out of range: {0}")]
    Range(String),
    #[error("segmentation produced an empty mask")]
    EmptyMask,
    #[error("request rejected with {status} ({code}): {message}")]
    Rejected { status: u16, code: String, message: String },
}

impl ServiceError {
    /// HTTP status and error code used when a server reports this error.
    pub fn status_and_code(&self) -> (u16, &'static str) {
        match self {
            ServiceError::Range(_) => (422, "range_error"),
            ServiceError::Protocol(_) => (400, "protocol_error"),
            ServiceError::EmptyMask => (422, "empty_mask"),
            ServiceError::Rejected { .. } => (400, "rejected"),
            ServiceError::Timeout(_) => (504, "timeout"),
            ServiceError::Unavailable(_) => (503, "unavailable"),
        }
    }
}

impl From<RasterError> for ServiceError {
    fn from(e: RasterError) -> Self {
        ServiceError::Protocol(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ServiceError>;

/// Ground truth a mock service may read instead of looking at pixels. Real
/// adapters ignore it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOracle {
    pub objects: Vec<OracleObject>,
    pub background: Background,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleObject {
    pub car_type: CarType,
    pub color: CarColor,
    pub full_box: [f64; 4],
    pub visible_box: Option<[f64; 4]>,
    pub occlusion_rate: f64,
    pub azimuth_deg: f64,
}

/// Oracle flag marking an image whose road was deliberately not painted.
pub const FLAG_ROAD_REMOVED: &str = "road_removed";

#[derive(Debug, Clone, PartialEq)]
pub struct RenderQuery {
    pub azimuth_deg: f64,
    pub polar_deg: f64,
    pub height_px: u32,
    pub car_type: CarType,
    pub color: CarColor,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cutout {
    pub image: RgbImage,
    pub alpha: GrayImage,
}

#[derive(Debug, Clone, Copy)]
pub struct OutpaintQuery<'a> {
    pub image: &'a RgbImage,
    pub object_mask: &'a BinaryMask,
    pub road_mask: &'a BinaryMask,
    pub prompt: &'a str,
    pub seed: u64,
    pub controlnet_weight: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct DetectQuery<'a> {
    pub image: &'a RgbImage,
    pub nms_iou: f64,
    pub oracle: Option<&'a TestOracle>,
}

#[derive(Debug, Clone, Copy)]
pub struct VqaQuery<'a> {
    pub image: &'a RgbImage,
    pub question: &'a str,
    pub choices: &'a [String],
    pub oracle: Option<&'a TestOracle>,
}

pub trait Renderer: Send + Sync {
    fn render(&self, q: &RenderQuery) -> Result<Cutout>;
}

pub trait Outpainter: Send + Sync {
    fn outpaint(&self, q: &OutpaintQuery<'_>) -> Result<RgbImage>;
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, image: &RgbImage, point: (u32, u32)) -> Result<BinaryMask>;
}

pub trait Detector: Send + Sync {
    fn detect(&self, q: &DetectQuery<'_>) -> Result<Vec<Detection>>;
}

pub trait Vqa: Send + Sync {
    fn answer(&self, q: &VqaQuery<'_>) -> Result<String>;
}

pub fn check_render_query(q: &RenderQuery) -> Result<()> {
    if !(q.azimuth_deg > -180.0 && q.azimuth_deg <= 180.0) {
        return Err(ServiceError::Range(format!("azimuth {} outside (-180, 180]", q.azimuth_deg)));
    }
    if !(5.0..=15.0).contains(&q.polar_deg) {
        return Err(ServiceError::Range(format!("polar {} outside [5, 15]", q.polar_deg)));
    }
    if q.height_px == 0 || q.height_px > 8192 {
        return Err(ServiceError::Range(format!("height {} px outside [1, 8192]", q.height_px)));
    }
    Ok(())
}

/// A named detector under test.
#[derive(Clone)]
pub struct NamedDetector {
    pub name: String,
    pub detector: Arc<dyn Detector>,
}

/// Every service the pipeline needs.
#[derive(Clone)]
pub struct ServiceSet {
    pub renderer: Arc<dyn Renderer>,
    pub outpainter: Arc<dyn Outpainter>,
    pub segmenter: Arc<dyn Segmenter>,
    pub vqa: Arc<dyn Vqa>,
    pub detectors: Vec<NamedDetector>,
}

impl ServiceSet {
    /// All-mock set with the given detector profiles.
    pub fn mock(profiles: Vec<mock::MockDetectorProfile>) -> Self {
        ServiceSet {
            renderer: Arc::new(mock::MockRenderer::default()),
            outpainter: Arc::new(mock::MockOutpainter::new(mock::OutpaintMode::Faithful)),
            segmenter: Arc::new(mock::MockSegmenter::default()),
            vqa: Arc::new(mock::MockVqa),
            detectors: profiles
                .into_iter()
                .map(|p| NamedDetector { name: p.name.clone(), detector: Arc::new(mock::MockDetector::new(p)) })
                .collect(),
        }
    }

    pub fn detector_names(&self) -> Vec<String> {
        self.detectors.iter().map(|d| d.name.clone()).collect()
    }
}
