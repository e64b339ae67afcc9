use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EvaluationRun, PipelineError, Result};
use crate::metrics::{is_side_view, spearman, MmsConfig, SceneEvaluation, SeedOutcome, GroundTruthObject};
use crate::raster::BinaryMask;
use crate::scene::{Background, CarColor, CarType};
use crate::services::{DetectQuery, OracleObject, ServiceSet, TestOracle};

pub const OCCLUSION_BINS: usize = 10;

/// Ten equal bins on `[0, 1]`, the last one closed.
pub fn occlusion_bin(rate: f64) -> usize {
    ((rate.clamp(0.0, 1.0) * OCCLUSION_BINS as f64).floor() as usize).min(OCCLUSION_BINS - 1)
}

/// Mean MMS per detector and occlusion bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionCurves {
    pub detectors: Vec<String>,
    /// `means[d][b]`, `None` for bins without samples.
    pub means: Vec<Vec<Option<f64>>>,
    pub counts: Vec<usize>,
}

impl OcclusionCurves {
    /// Builds curves from `(bin, per-detector value)` samples.
    pub fn from_samples(detectors: Vec<String>, samples: &[(usize, Vec<Option<f64>>)]) -> Self {
        let nd = detectors.len();
        let mut sums = vec![vec![(0.0, 0usize); OCCLUSION_BINS]; nd];
        let mut counts = vec![0; OCCLUSION_BINS];
        for (bin, values) in samples {
            counts[*bin] += 1;
            for (d, v) in values.iter().enumerate() {
                if let Some(v) = v {
                    sums[d][*bin].0 += v;
                    sums[d][*bin].1 += 1;
                }
            }
        }
        let means = sums
            .into_iter()
            .map(|row| row.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect())
            .collect();
        Self { detectors, means, counts }
    }
}

/// Occlusion curves of the synthetic run, restricted to side-view scenes and
/// binned by the most occluded car.
pub fn synthetic_curves(run: &EvaluationRun) -> OcclusionCurves {
    let samples: Vec<(usize, Vec<Option<f64>>)> = run
        .scenes
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.cars.is_empty() && s.cars.iter().all(|c| is_side_view(c.azimuth_deg)))
        .map(|(i, s)| {
            let occ = s.cars.iter().map(|c| c.occlusion_rate).fold(0.0, f64::max);
            (occlusion_bin(occ), run.evaluations.iter().map(|col| col[i].as_ref().map(|e| e.mms)).collect())
        })
        .collect();
    OcclusionCurves::from_samples(run.detectors.clone(), &samples)
}

#[derive(Debug, Clone)]
pub struct FrameCar {
    pub mask: BinaryMask,
    pub car_type: CarType,
    pub color: CarColor,
    pub azimuth_deg: f64,
}

/// A real photograph with two annotated, non-overlapping side-view cars.
#[derive(Debug, Clone)]
pub struct RealFrame {
    pub id: String,
    pub image: RgbImage,
    pub background: Background,
    /// The car that is moved in front.
    pub front: FrameCar,
    pub back: FrameCar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameCarEntry {
    mask: PathBuf,
    car_type: CarType,
    color: CarColor,
    #[serde(default)]
    azimuth_deg: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameEntry {
    id: String,
    image: PathBuf,
    background: Background,
    front: FrameCarEntry,
    back: FrameCarEntry,
}

/// Reads frames from a JSONL index; paths are relative to the index file.
pub fn load_frames(index: &Path) -> Result<Vec<RealFrame>> {
    let base = index.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(index)?;
    let bad = |e: String| PipelineError::Config(format!("{}: {e}", index.display()));
    let open_mask = |p: &Path| -> Result<BinaryMask> {
        let img = image::open(base.join(p)).map_err(|e| bad(e.to_string()))?.to_luma8();
        Ok(BinaryMask::from_alpha(&img))
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let e: FrameEntry = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            let image = image::open(base.join(&e.image)).map_err(|err| bad(err.to_string()))?.to_rgb8();
            let car = |c: &FrameCarEntry| -> Result<FrameCar> {
                Ok(FrameCar { mask: open_mask(&c.mask)?, car_type: c.car_type, color: c.color, azimuth_deg: c.azimuth_deg })
            };
            Ok(RealFrame { id: e.id.clone(), background: e.background, front: car(&e.front)?, back: car(&e.back)?, image })
        })
        .collect()
}

fn shifted(mask: &BinaryMask, dx: i64, dy: i64) -> BinaryMask {
    let (w, h) = mask.dimensions();
    let mut out = BinaryMask::new(w, h);
    for (x, y) in mask.iter_set() {
        let (nx, ny) = (i64::from(x) + dx, i64::from(y) + dy);
        if nx >= 0 && ny >= 0 && nx < i64::from(w) && ny < i64::from(h) {
            out.set(nx as u32, ny as u32, true);
        }
    }
    out
}

fn occlusion_of(back: &BinaryMask, front: &BinaryMask) -> f64 {
    let total = back.count();
    if total == 0 {
        return 0.0;
    }
    back.intersection(front).expect("same frame").count() as f64 / total as f64
}

/// A frame re-composited so the back car is occluded by about `target`.
#[derive(Debug, Clone)]
pub struct ShiftedFrame {
    pub image: RgbImage,
    pub occlusion_rate: f64,
    pub oracle: TestOracle,
    pub ground_truth: Vec<GroundTruthObject>,
}

/// Slides the front cutout horizontally over the back car, bottoms aligned,
/// and binary-searches the offset whose occlusion is closest to `target`.
pub fn shift_to_occlusion(frame: &RealFrame, target: f64, label: &str) -> Result<Option<ShiftedFrame>> {
    let dims = frame.image.dimensions();
    if frame.front.mask.dimensions() != dims || frame.back.mask.dimensions() != dims {
        return Err(PipelineError::Config(format!("frame {}: mask and image sizes differ", frame.id)));
    }
    let (Some(fb), Some(bb)) = (frame.front.mask.bounds(), frame.back.mask.bounds()) else {
        return Err(PipelineError::Config(format!("frame {}: empty car mask", frame.id)));
    };
    let dy = i64::from(bb.3) - i64::from(fb.3);
    let front_cx = (i64::from(fb.0) + i64::from(fb.2)) / 2;
    let back_cx = (i64::from(bb.0) + i64::from(bb.2)) / 2;
    // approach from the side the front car starts on
    let side = if front_cx <= back_cx { -1 } else { 1 };
    let reach = i64::from(fb.2 - fb.0 + bb.2 - bb.0) / 2 + 2;
    let dx_at = |offset: i64| back_cx + side * offset - front_cx;
    let occ_at = |offset: i64| occlusion_of(&frame.back.mask, &shifted(&frame.front.mask, dx_at(offset), dy));

    // occlusion falls as the offset grows
    let (mut lo, mut hi) = (0i64, reach);
    if occ_at(lo) + 0.05 < target {
        return Ok(None);
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if occ_at(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let best = if (occ_at(lo) - target).abs() <= (occ_at(hi) - target).abs() { lo } else { hi };
    let front = shifted(&frame.front.mask, dx_at(best), dy);
    let occlusion_rate = occlusion_of(&frame.back.mask, &front);

    let mut image = frame.image.clone();
    for (x, y) in frame.front.mask.iter_set() {
        let (nx, ny) = (i64::from(x) + dx_at(best), i64::from(y) + dy);
        if nx >= 0 && ny >= 0 && nx < i64::from(dims.0) && ny < i64::from(dims.1) {
            image.put_pixel(nx as u32, ny as u32, *frame.image.get_pixel(x, y));
        }
    }
    let back_visible = frame.back.mask.difference(&front).expect("same frame");
    let mut objects = Vec::new();
    let mut ground_truth = Vec::new();
    for (car, full, visible, occ) in [
        (&frame.back, frame.back.mask.bounding_box(), back_visible.bounding_box(), occlusion_rate),
        (&frame.front, front.bounding_box(), front.bounding_box(), 0.0),
    ] {
        let Some(full) = full else { continue };
        objects.push(OracleObject {
            car_type: car.car_type,
            color: car.color,
            full_box: full.as_array(),
            visible_box: visible.map(|v| v.as_array()),
            occlusion_rate: occ,
            azimuth_deg: car.azimuth_deg,
        });
        if let Some(v) = visible {
            ground_truth.push(GroundTruthObject { full, visible: v, label: label.to_string() });
        }
    }
    let oracle = TestOracle { objects, background: frame.background, flags: Vec::new() };
    Ok(Some(ShiftedFrame { image, occlusion_rate, oracle, ground_truth }))
}

/// Bin centres used as occlusion targets.
pub fn default_targets() -> Vec<f64> {
    (0..OCCLUSION_BINS).map(|b| (b as f64 + 0.5) / OCCLUSION_BINS as f64).collect()
}

/// Occlusion curves of every detector on shifted real frames.
pub fn real_curves(frames: &[RealFrame], targets: &[f64], services: &ServiceSet, mms: &MmsConfig) -> Result<(OcclusionCurves, usize)> {
    let cfg = MmsConfig { seeds_per_scene: 1, ..mms.clone() };
    cfg.validate()?;
    let jobs: Vec<(&RealFrame, f64)> = frames.iter().flat_map(|f| targets.iter().map(move |&t| (f, t))).collect();
    let results: Vec<Result<Option<(usize, Vec<Option<f64>>)>>> = jobs
        .par_iter()
        .map(|&(frame, target)| {
            let Some(s) = shift_to_occlusion(frame, target, &cfg.target_class)? else { return Ok(None) };
            let values = services
                .detectors
                .iter()
                .map(|d| {
                    let q = DetectQuery { image: &s.image, nms_iou: cfg.nms_iou, oracle: Some(&s.oracle) };
                    match d.detector.detect(&q) {
                        Ok(detections) => {
                            let seeds = vec![SeedOutcome { seed: 0, detections, ground_truth: s.ground_truth.clone() }];
                            SceneEvaluation::new(frame.id.clone(), d.name.clone(), seeds, &cfg).ok().map(|e| e.mms)
                        }
                        Err(e) => {
                            log::warn!("frame {} detector {}: {e}", frame.id, d.name);
                            None
                        }
                    }
                })
                .collect();
            Ok(Some((occlusion_bin(s.occlusion_rate), values)))
        })
        .collect();
    let mut samples = Vec::new();
    let mut skipped = 0;
    for r in results {
        match r? {
            Some(s) => samples.push(s),
            None => skipped += 1,
        }
    }
    Ok((OcclusionCurves::from_samples(services.detector_names(), &samples), skipped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sim2RealReport {
    pub detectors: Vec<String>,
    pub synthetic: OcclusionCurves,
    pub real: OcclusionCurves,
    /// Rank correlation across detectors per bin; `None` when the bin was skipped.
    pub per_bin: Vec<Option<f64>>,
    pub mean_rho: Option<f64>,
    pub warnings: Vec<String>,
}

impl Sim2RealReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        let _ = writeln!(out, "{:<10} {:>6} {:>6} {:>8}", "occlusion", "n_syn", "n_real", "rho");
        for b in 0..OCCLUSION_BINS {
            let rho = self.per_bin[b].map_or_else(|| "-".to_string(), |r| format!("{r:.3}"));
            let label = format!("[{:.1},{:.1}{}", b as f64 / 10.0, (b + 1) as f64 / 10.0, if b + 1 == OCCLUSION_BINS { "]" } else { ")" });
            let _ = writeln!(out, "{label:<10} {:>6} {:>6} {rho:>8}", self.synthetic.counts[b], self.real.counts[b]);
        }
        let mean = self.mean_rho.map_or_else(|| "undefined".to_string(), |r| format!("{r:.3}"));
        let _ = writeln!(out, "mean rho: {mean}");
        out
    }
}

/// Per-bin rank agreement of detectors between synthetic and real curves.
/// Bins where either side has fewer than two detectors, or no variance, are skipped.
pub fn compare_curves(synthetic: &OcclusionCurves, real: &OcclusionCurves) -> Result<Sim2RealReport> {
    if synthetic.detectors != real.detectors {
        return Err(PipelineError::Config("synthetic and real curves cover different detectors".into()));
    }
    let mut warnings = Vec::new();
    if synthetic.detectors.len() < 3 {
        warnings.push(format!("only {} detectors; rank correlation is weak evidence", synthetic.detectors.len()));
    }
    let mut per_bin = vec![None; OCCLUSION_BINS];
    for (b, slot) in per_bin.iter_mut().enumerate() {
        let (xs, ys): (Vec<f64>, Vec<f64>) = (0..synthetic.detectors.len())
            .filter_map(|d| Some((synthetic.means[d][b]?, real.means[d][b]?)))
            .unzip();
        if xs.len() < 2 {
            continue;
        }
        let s = spearman(&xs, &ys)?;
        if !s.degenerate {
            *slot = Some(s.rho);
        }
    }
    let used: Vec<f64> = per_bin.iter().flatten().copied().collect();
    let mean_rho = (!used.is_empty()).then(|| used.iter().sum::<f64>() / used.len() as f64);
    if mean_rho.is_none() {
        warnings.push("no bin had enough detectors with distinct scores".into());
    }
    Ok(Sim2RealReport {
        detectors: synthetic.detectors.clone(),
        synthetic: synthetic.clone(),
        real: real.clone(),
        per_bin,
        mean_rho,
        warnings,
    })
}
