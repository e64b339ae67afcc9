use serde::{Deserialize, Serialize};

use super::detection::{matched_confidence, Detection, GroundTruthObject};
use super::{MetricsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmsConfig {
    /// IoU thresholds, ascending.
    pub thresholds: Vec<f64>,
    pub nms_iou: f64,
    pub target_class: String,
    pub seeds_per_scene: usize,
}

impl Default for MmsConfig {
    fn default() -> Self {
        Self {
            thresholds: (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect(),
            nms_iou: 0.5,
            target_class: "car".into(),
            seeds_per_scene: 9,
        }
    }
}

impl MmsConfig {
    /// Same configuration scored at the single threshold 0.5.
    pub fn at_50(&self) -> MmsConfig {
        MmsConfig { thresholds: vec![0.5], ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(MetricsError::Config("threshold set is empty".into()));
        }
        if self.thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(MetricsError::Config("thresholds must lie in (0, 1]".into()));
        }
        if self.thresholds.windows(2).any(|w| w[0] > w[1]) {
            return Err(MetricsError::Config("thresholds must be ascending".into()));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(MetricsError::Config(format!("nms iou {} outside (0, 1]", self.nms_iou)));
        }
        if self.seeds_per_scene == 0 {
            return Err(MetricsError::Config("seeds per scene must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<GroundTruthObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEvaluation {
    pub scene_id: String,
    pub detector: String,
    pub seeds: Vec<SeedOutcome>,
    pub mms: f64,
    pub mms_at_50: f64,
}

impl SceneEvaluation {
    pub fn new(scene_id: String, detector: String, seeds: Vec<SeedOutcome>, cfg: &MmsConfig) -> Result<Self> {
        let mms = mms(&seeds, cfg)?;
        let mms_at_50 = self::mms(&seeds, &cfg.at_50())?;
        Ok(Self { scene_id, detector, seeds, mms, mms_at_50 })
    }
}

/// Per-seed score at one threshold: mean matched confidence over the ground-truth
/// objects. An image without objects counts as fully detected.
pub fn seed_score(dets: &[Detection], gts: &[GroundTruthObject], gamma: f64, class: &str) -> f64 {
    if gts.is_empty() {
        return 1.0;
    }
    gts.iter().map(|g| matched_confidence(dets, g, gamma, class)).sum::<f64>() / gts.len() as f64
}

/// Median; the two middle values are averaged for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// MMS from a score table `scores[seed][threshold]`.
pub fn mms_from_scores(scores: &[Vec<f64>]) -> Result<f64> {
    let n_t = scores.first().map_or(0, Vec::len);
    if n_t == 0 {
        return Err(MetricsError::Config("empty score table".into()));
    }
    let mut column = Vec::with_capacity(scores.len());
    let mut total = 0.0;
    for i in 0..n_t {
        column.clear();
        column.extend(scores.iter().map(|row| row[i]));
        total += 1.0 - median(&column);
    }
    Ok(total / n_t as f64)
}

pub fn mms(seeds: &[SeedOutcome], cfg: &MmsConfig) -> Result<f64> {
    cfg.validate()?;
    if seeds.len() != cfg.seeds_per_scene {
        return Err(MetricsError::SeedCount { expected: cfg.seeds_per_scene, found: seeds.len() });
    }
    let scores: Vec<Vec<f64>> = seeds
        .iter()
        .map(|s| {
            cfg.thresholds.iter().map(|&g| seed_score(&s.detections, &s.ground_truth, g, &cfg.target_class)).collect()
        })
        .collect();
    mms_from_scores(&scores)
}
