//! End-to-end workflows: realize scenes into images, score detectors, persist
//! results and summarize them.

pub mod benchmark;
pub mod evaluate;
pub mod mining;
pub mod realize;
pub mod report;
pub mod sim2real;
pub mod store;

use serde::{Deserialize, Serialize};

use crate::geometry::{CameraModel, GeometryError};
use crate::metrics::MetricsError;
use crate::scene::{AspectRatios, RoadLayout, SceneError};
use crate::services::ServiceError;

pub use benchmark::*;
pub use evaluate::*;
pub use mining::*;
pub use realize::*;
pub use report::*;
pub use sim2real::*;
pub use store::*;

/// Camera focal length in pixels for the default 512 px canvas.
pub const DEFAULT_FOCAL_LENGTH: f64 = 256.0;
pub const DEFAULT_CAMERA_HEIGHT: f64 = 12.0;
/// Distance from the crossroad centre to the camera along -z.
pub const DEFAULT_STANDOFF: f64 = 200.0;
pub const DEFAULT_CANVAS: u32 = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub camera: CameraModel,
    pub canvas_size: u32,
    pub aspect: AspectRatios,
    pub road: RoadLayout,
    /// Road polygons are clipped this far in front of the camera before projection.
    pub near_clip: f64,
    pub controlnet_weight: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            camera: CameraModel::ego(DEFAULT_FOCAL_LENGTH, DEFAULT_CAMERA_HEIGHT, DEFAULT_STANDOFF)
                .expect("default camera is valid"),
            canvas_size: DEFAULT_CANVAS,
            aspect: AspectRatios::default(),
            road: RoadLayout::default(),
            near_clip: 1.0,
            controlnet_weight: 1.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("scene {scene_id}: car {index} falls outside the canvas")]
    Composition { scene_id: String, index: usize },
    #[error("scene {scene_id} seed {seed}: {stage} failed: {source}")]
    Service { scene_id: String, seed: u64, stage: &'static str, source: ServiceError },
    #[error("result log: {0}")]
    Store(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<GeometryError> for PipelineError {
    fn from(e: GeometryError) -> Self {
        PipelineError::Scene(SceneError::Geometry(e))
    }
}

impl PipelineError {
    pub fn service(scene_id: &str, seed: u64, stage: &'static str, source: ServiceError) -> Self {
        PipelineError::Service { scene_id: scene_id.to_string(), seed, stage, source }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
