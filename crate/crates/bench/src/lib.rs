//! Shared fixtures for the benchmarks.

use bev2ego::pipeline::{evaluate_scenes, EvaluationOptions, EvaluationRun, PipelineConfig, ResumeState};
use bev2ego::metrics::MmsConfig;
use bev2ego::scene::{SamplerConfig, SceneConfig, SceneSampler};
use bev2ego::services::mock::MockDetectorProfile;
use bev2ego::services::ServiceSet;

pub fn scenes(n: usize, seeds: usize) -> Vec<SceneConfig> {
    SceneSampler::new(17, SamplerConfig { seeds_per_scene: seeds, ..SamplerConfig::default() })
        .sample_scenes(n, 2)
        .expect("default sampler draws")
}

pub fn services() -> ServiceSet {
    ServiceSet::mock(vec![MockDetectorProfile::default(), MockDetectorProfile::planted()])
}

pub fn scored_run(n: usize, seeds: usize) -> EvaluationRun {
    let opts = EvaluationOptions { mms: MmsConfig { seeds_per_scene: seeds, ..MmsConfig::default() }, ..Default::default() };
    evaluate_scenes(&scenes(n, seeds), &services(), &PipelineConfig::default(), &opts, "bench", None, &ResumeState::default())
        .expect("mock run")
}
