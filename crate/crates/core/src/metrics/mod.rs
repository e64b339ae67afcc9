//! Scoring: box matching and MMS, grouped reports, image-quality measures,
//! VQA question templates and rank correlation.

mod detection;
mod groups;
mod image_quality;
mod mms;
mod rank;
mod tifa;

pub use detection::{display_box, effective_iou, iou, matched_confidence, nms, Detection, GroundTruthObject};
pub use groups::{
    group_mms, is_side_view, rotation_bin, rotation_bin_label, CarAttributes, GroupBy, GroupReport, GroupRow,
    SceneAttributes, ROTATION_BINS,
};
pub use image_quality::{mask_iou, masked_crop, masked_l2, ms_ssim, ms_ssim_masked, L2Distance};
pub use mms::{median, mms, mms_from_scores, seed_score, MmsConfig, SceneEvaluation, SeedOutcome};
pub use rank::{average_ranks, spearman, Spearman};
pub use tifa::{common_colors, tifa_questions, tifa_score, Question, PATH_CHOICES};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("invalid metric configuration: {0}")]
    Config(String),
    #[error("expected {expected} seeds, found {found}")]
    SeedCount { expected: usize, found: usize },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((u32, u32), (u32, u32)),
    #[error("mask is empty")]
    MaskEmpty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 values, got {0}")]
    TooShort(usize),
}

pub type Result<T> = std::result::Result<T, MetricsError>;
