use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{realize_scene, PipelineConfig, Result, ResultLog, ResultRecord, ResumeState, RESULT_SCHEMA};
use crate::metrics::{CarAttributes, MmsConfig, SceneAttributes, SceneEvaluation, SeedOutcome};
use crate::scene::{project_scene, SceneConfig};
use crate::services::{DetectQuery, ServiceSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOptions {
    pub mms: MmsConfig,
    /// Scenes evaluated in parallel before their records are flushed to the log.
    pub chunk_size: usize,
    /// Attach ground truth to detection requests so mock detectors can use it.
    pub send_oracle: bool,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        Self { mms: MmsConfig::default(), chunk_size: 64, send_oracle: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFailure {
    pub scene_id: String,
    pub seed: Option<u64>,
    pub detector: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRun {
    pub detectors: Vec<String>,
    pub scenes: Vec<SceneAttributes>,
    /// `evaluations[d][s]`: detector `d` on scene `s`, `None` when it failed.
    pub evaluations: Vec<Vec<Option<SceneEvaluation>>>,
    pub failures: Vec<SceneFailure>,
}

impl EvaluationRun {
    /// Per-detector score columns aligned with `scenes`.
    pub fn values(&self, at_50: bool) -> Vec<Vec<Option<f64>>> {
        self.evaluations
            .iter()
            .map(|col| col.iter().map(|e| e.as_ref().map(|e| if at_50 { e.mms_at_50 } else { e.mms })).collect())
            .collect()
    }

    pub fn completeness(&self) -> f64 {
        let total = self.detectors.len() * self.scenes.len();
        if total == 0 {
            return 1.0;
        }
        let done: usize = self.evaluations.iter().map(|c| c.iter().filter(|e| e.is_some()).count()).sum();
        done as f64 / total as f64
    }

    /// Scenes with at least one missing detector score.
    pub fn failed_scenes(&self) -> usize {
        (0..self.scenes.len()).filter(|&s| self.evaluations.iter().any(|c| c[s].is_none())).count()
    }

    pub fn detector_index(&self, name: &str) -> Option<usize> {
        self.detectors.iter().position(|d| d == name)
    }
}

/// Attributes used for grouping, from scene geometry alone.
pub fn scene_attributes(scene: &SceneConfig, cfg: &PipelineConfig) -> Result<SceneAttributes> {
    let cars = project_scene(scene, &cfg.camera, &cfg.aspect)?
        .into_iter()
        .map(|c| {
            Ok(CarAttributes {
                car_type: c.car_type,
                color: c.color,
                azimuth_deg: c.azimuth_deg,
                occlusion_rate: c.occlusion_rate()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneAttributes { scene_id: scene.id.clone(), background: scene.background, cars })
}

struct SceneOutcome {
    records: Vec<ResultRecord>,
    per_detector: Vec<Option<SceneEvaluation>>,
    failures: Vec<SceneFailure>,
}

fn failure(run_id: &str, scene_id: &str, seed: Option<u64>, detector: Option<&str>, error: String) -> (ResultRecord, SceneFailure) {
    log::warn!("scene {scene_id} seed {seed:?} detector {detector:?}: {error}");
    (
        ResultRecord::Failure {
            schema: RESULT_SCHEMA.into(),
            run_id: run_id.into(),
            scene_id: scene_id.into(),
            seed,
            detector: detector.map(str::to_string),
            error: error.clone(),
        },
        SceneFailure { scene_id: scene_id.into(), seed, detector: detector.map(str::to_string), error },
    )
}

fn evaluate_scene(
    scene: &SceneConfig,
    services: &ServiceSet,
    cfg: &PipelineConfig,
    opts: &EvaluationOptions,
    run_id: &str,
    resume: &ResumeState,
) -> SceneOutcome {
    let n_det = services.detectors.len();
    let mut out = SceneOutcome { records: Vec::new(), per_detector: vec![None; n_det], failures: Vec::new() };
    let fail = |out: &mut SceneOutcome, seed, det: Option<&str>, err: String| {
        let (r, f) = failure(run_id, &scene.id, seed, det, err);
        out.records.push(r);
        out.failures.push(f);
    };
    if scene.seeds.len() != opts.mms.seeds_per_scene {
        let msg = format!("scene has {} seeds, the run expects {}", scene.seeds.len(), opts.mms.seeds_per_scene);
        fail(&mut out, None, None, msg);
        return out;
    }

    let mut outcomes: Vec<Option<Vec<SeedOutcome>>> = vec![Some(Vec::with_capacity(scene.seeds.len())); n_det];
    for &seed in &scene.seeds {
        let cached: Vec<Option<SeedOutcome>> =
            services.detectors.iter().map(|d| resume.get(&scene.id, seed, &d.name).cloned()).collect();
        let pending = (0..n_det).any(|d| outcomes[d].is_some() && cached[d].is_none());
        let realization = if pending {
            match realize_scene(scene, seed, services, cfg) {
                Ok(r) => Some(r),
                Err(e) => {
                    fail(&mut out, Some(seed), None, e.to_string());
                    return out;
                }
            }
        } else {
            None
        };
        for (d, named) in services.detectors.iter().enumerate() {
            let Some(list) = outcomes[d].as_mut() else { continue };
            if let Some(done) = &cached[d] {
                list.push(done.clone());
                continue;
            }
            let r = realization.as_ref().expect("realized when a detector is pending");
            let oracle = opts.send_oracle.then(|| r.sidecar.oracle());
            let query = DetectQuery { image: &r.image, nms_iou: opts.mms.nms_iou, oracle: oracle.as_ref() };
            match named.detector.detect(&query) {
                Ok(detections) => {
                    let ground_truth = r.sidecar.ground_truth(&opts.mms.target_class);
                    out.records.push(ResultRecord::Detection {
                        schema: RESULT_SCHEMA.into(),
                        run_id: run_id.into(),
                        scene_id: scene.id.clone(),
                        seed,
                        detector: named.name.clone(),
                        detections: detections.clone(),
                        ground_truth: ground_truth.clone(),
                    });
                    list.push(SeedOutcome { seed, detections, ground_truth });
                }
                Err(e) => {
                    fail(&mut out, Some(seed), Some(&named.name), e.to_string());
                    outcomes[d] = None;
                }
            }
        }
    }
    for (d, list) in outcomes.into_iter().enumerate() {
        let Some(seeds) = list else { continue };
        let name = services.detectors[d].name.clone();
        match SceneEvaluation::new(scene.id.clone(), name.clone(), seeds, &opts.mms) {
            Ok(e) => out.per_detector[d] = Some(e),
            Err(e) => fail(&mut out, None, Some(&name), e.to_string()),
        }
    }
    out
}

/// Scores every detector on every scene. Failures are recorded per scene and
/// do not abort the run; records go to `log` in scene order.
pub fn evaluate_scenes(
    scenes: &[SceneConfig],
    services: &ServiceSet,
    cfg: &PipelineConfig,
    opts: &EvaluationOptions,
    run_id: &str,
    mut log: Option<&mut ResultLog>,
    resume: &ResumeState,
) -> Result<EvaluationRun> {
    opts.mms.validate()?;
    let detectors = services.detector_names();
    let mut run = EvaluationRun {
        detectors: detectors.clone(),
        scenes: Vec::with_capacity(scenes.len()),
        evaluations: vec![Vec::with_capacity(scenes.len()); detectors.len()],
        failures: Vec::new(),
    };
    for chunk in scenes.chunks(opts.chunk_size.max(1)) {
        let results: Vec<(Result<SceneAttributes>, SceneOutcome)> = chunk
            .par_iter()
            .map(|scene| (scene_attributes(scene, cfg), evaluate_scene(scene, services, cfg, opts, run_id, resume)))
            .collect();
        for (scene, (attrs, outcome)) in chunk.iter().zip(results) {
            if let Some(log) = log.as_deref_mut() {
                log.append(&outcome.records)?;
            }
            let attrs = attrs.unwrap_or_else(|e| {
                log::warn!("scene {}: no attributes: {e}", scene.id);
                SceneAttributes { scene_id: scene.id.clone(), background: scene.background, cars: Vec::new() }
            });
            run.scenes.push(attrs);
            for (d, e) in outcome.per_detector.into_iter().enumerate() {
                run.evaluations[d].push(e);
            }
            run.failures.extend(outcome.failures);
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{SamplerConfig, SceneSampler};
    use crate::services::mock::MockDetectorProfile;
    use crate::services::{Detector, NamedDetector, ServiceError};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn scenes(n: usize, seeds: usize) -> Vec<SceneConfig> {
        let cfg = SamplerConfig { seeds_per_scene: seeds, ..SamplerConfig::default() };
        SceneSampler::new(7, cfg).sample_scenes(n, 2).unwrap()
    }

    fn opts(seeds: usize) -> EvaluationOptions {
        EvaluationOptions { mms: MmsConfig { seeds_per_scene: seeds, ..MmsConfig::default() }, chunk_size: 4, send_oracle: true }
    }

    #[test]
    fn identity_detector_scores_zero_everywhere() {
        let services = ServiceSet::mock(vec![MockDetectorProfile::identity(), MockDetectorProfile::null()]);
        let sc = scenes(6, 3);
        let run = evaluate_scenes(&sc, &services, &PipelineConfig::default(), &opts(3), "r", None, &ResumeState::default()).unwrap();
        assert!(run.failures.is_empty(), "{:?}", run.failures);
        assert_eq!(run.completeness(), 1.0);
        for e in run.evaluations[0].iter().flatten() {
            assert_eq!(e.mms, 0.0, "{}", e.scene_id);
        }
        for e in run.evaluations[1].iter().flatten() {
            assert_eq!(e.mms, 1.0);
        }
    }

    struct Flaky {
        calls: AtomicUsize,
        fail_every: usize,
    }

    impl Detector for Flaky {
        fn detect(&self, _q: &DetectQuery<'_>) -> crate::services::Result<Vec<crate::metrics::Detection>> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if self.fail_every > 0 && n % self.fail_every == 0 {
                Err(ServiceError::Unavailable("down".into()))
            } else {
                Ok(Vec::new())
            }
        }
    }

    #[test]
    fn failures_are_isolated_and_resume_skips_done_work() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.jsonl");
        let sc = scenes(5, 2);
        let mut services = ServiceSet::mock(vec![MockDetectorProfile::identity()]);
        let flaky = Arc::new(Flaky { calls: AtomicUsize::new(0), fail_every: 3 });
        services.detectors.push(NamedDetector { name: "flaky".into(), detector: flaky.clone() });
        let cfg = PipelineConfig::default();
        let o = EvaluationOptions { chunk_size: 1, ..opts(2) };
        let mut log = ResultLog::create(&path).unwrap();
        let run = evaluate_scenes(&sc, &services, &cfg, &o, "r", Some(&mut log), &ResumeState::default()).unwrap();
        drop(log);
        assert!(run.evaluations[0].iter().all(Option::is_some));
        assert!(run.evaluations[1].iter().any(Option::is_none));
        assert!(!run.failures.is_empty());

        // second pass with a healthy detector only redoes the failed calls
        let (mut log, records) = ResultLog::resume(&path, "r").unwrap();
        let state = ResumeState::from_records(&records);
        let healed = Arc::new(Flaky { calls: AtomicUsize::new(0), fail_every: 0 });
        services.detectors[1].detector = healed.clone();
        let again = evaluate_scenes(&sc, &services, &cfg, &o, "r", Some(&mut log), &state).unwrap();
        assert_eq!(again.completeness(), 1.0);
        let first_ok = records.iter().filter(|r| matches!(r, ResultRecord::Detection { detector, .. } if detector == "flaky")).count();
        assert_eq!(healed.calls.load(Ordering::SeqCst), 5 * 2 - first_ok);
    }

    #[test]
    fn wrong_seed_count_fails_the_scene() {
        let services = ServiceSet::mock(vec![MockDetectorProfile::identity()]);
        let sc = scenes(2, 3);
        let run = evaluate_scenes(&sc, &services, &PipelineConfig::default(), &opts(9), "r", None, &ResumeState::default()).unwrap();
        assert_eq!(run.failures.len(), 2);
        assert_eq!(run.completeness(), 0.0);
        assert_eq!(run.failed_scenes(), 2);
    }
}
