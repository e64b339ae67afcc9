pub mod geometry;
pub mod metrics;
pub mod raster;
pub mod scene;
pub mod services;
pub mod pipeline;
