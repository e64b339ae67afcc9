use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{scene_attributes, EvaluationRun, PipelineConfig, Result, ResultRecord, SceneFailure};
use crate::metrics::{group_mms, GroupBy, MmsConfig, SceneAttributes, SceneEvaluation, SeedOutcome};
use crate::scene::SceneConfig;

fn group_file_stem(g: GroupBy) -> &'static str {
    match g {
        GroupBy::CarType => "car_type",
        GroupBy::Background => "background",
        GroupBy::ColorType => "color_type",
        GroupBy::BackgroundType => "background_type",
        GroupBy::RotationBin => "rotation_bin",
    }
}

/// Rebuilds an evaluation from logged records, e.g. to re-run reporting
/// without touching any service.
pub fn rebuild_run(
    scenes: &[SceneConfig],
    detectors: &[String],
    records: &[ResultRecord],
    mms: &MmsConfig,
    cfg: &PipelineConfig,
) -> Result<EvaluationRun> {
    let mut outcomes: HashMap<(&str, &str, u64), SeedOutcome> = HashMap::new();
    let mut failures = Vec::new();
    for r in records {
        match r {
            ResultRecord::Detection { scene_id, seed, detector, detections, ground_truth, .. } => {
                outcomes.insert(
                    (scene_id.as_str(), detector.as_str(), *seed),
                    SeedOutcome { seed: *seed, detections: detections.clone(), ground_truth: ground_truth.clone() },
                );
            }
            ResultRecord::Failure { scene_id, seed, detector, error, .. } => failures.push(SceneFailure {
                scene_id: scene_id.clone(),
                seed: *seed,
                detector: detector.clone(),
                error: error.clone(),
            }),
        }
    }
    let mut run = EvaluationRun {
        detectors: detectors.to_vec(),
        scenes: Vec::with_capacity(scenes.len()),
        evaluations: vec![Vec::with_capacity(scenes.len()); detectors.len()],
        failures: Vec::new(),
    };
    for scene in scenes {
        run.scenes.push(scene_attributes(scene, cfg).unwrap_or_else(|_| SceneAttributes {
            scene_id: scene.id.clone(),
            background: scene.background,
            cars: Vec::new(),
        }));
        for (d, name) in detectors.iter().enumerate() {
            let seeds: Option<Vec<SeedOutcome>> =
                scene.seeds.iter().map(|&s| outcomes.get(&(scene.id.as_str(), name.as_str(), s)).cloned()).collect();
            let eval = seeds.and_then(|s| SceneEvaluation::new(scene.id.clone(), name.clone(), s, mms).ok());
            run.evaluations[d].push(eval);
        }
    }
    // failures that a later resume repaired are dropped
    run.failures = failures
        .into_iter()
        .filter(|f| {
            let Some(s) = run.scenes.iter().position(|a| a.scene_id == f.scene_id) else { return true };
            run.evaluations.iter().any(|col| col[s].is_none())
        })
        .collect();
    Ok(run)
}

/// Markdown table of mean scores per detector.
pub fn summary_table(run: &EvaluationRun) -> String {
    let mut out = String::from("| detector | scenes scored | mean MMS | mean MMS@0.5 |\n|---|---:|---:|---:|\n");
    for (d, name) in run.detectors.iter().enumerate() {
        let done: Vec<&SceneEvaluation> = run.evaluations[d].iter().flatten().collect();
        let mean = |f: fn(&SceneEvaluation) -> f64| {
            if done.is_empty() {
                "-".to_string()
            } else {
                format!("{:.4}", done.iter().map(|e| f(e)).sum::<f64>() / done.len() as f64)
            }
        };
        let _ = writeln!(out, "| {name} | {} | {} | {} |", done.len(), mean(|e| e.mms), mean(|e| e.mms_at_50));
    }
    let _ = writeln!(out, "\ncompleteness: {:.4} ({} scenes with a missing score)", run.completeness(), run.failed_scenes());
    out
}

pub fn scores_csv(run: &EvaluationRun) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scene_id", "detector", "mms", "mms_at_50"]).expect("in-memory csv");
    for (s, scene) in run.scenes.iter().enumerate() {
        for (d, name) in run.detectors.iter().enumerate() {
            let (a, b) = match &run.evaluations[d][s] {
                Some(e) => (e.mms.to_string(), e.mms_at_50.to_string()),
                None => (String::new(), String::new()),
            };
            w.write_record([scene.scene_id.as_str(), name.as_str(), &a, &b]).expect("in-memory csv");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
}

/// Writes the summary, per-scene scores and every group table into `dir`.
pub fn write_run_reports(dir: &Path, run: &EvaluationRun) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    put("summary.md".into(), summary_table(run))?;
    put("scores.csv".into(), scores_csv(run))?;
    for (suffix, at_50) in [("", false), ("_at50", true)] {
        let values = run.values(at_50);
        for &g in GroupBy::ALL {
            let report = group_mms(g, &run.scenes, &run.detectors, &values);
            let stem = group_file_stem(g);
            put(format!("groups_{stem}{suffix}.csv"), report.to_csv())?;
            put(format!("groups_{stem}{suffix}.txt"), report.to_text())?;
        }
    }
    if !run.failures.is_empty() {
        let body: String = run.failures.iter().map(|f| serde_json::to_string(f).expect("serializable") + "\n").collect();
        put("failures.jsonl".into(), body)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{evaluate_scenes, EvaluationOptions, ResultLog, ResumeState, read_records};
    use crate::scene::{SamplerConfig, SceneSampler};
    use crate::services::mock::MockDetectorProfile;
    use crate::services::ServiceSet;

    #[test]
    fn rebuilt_run_matches_live_run_and_reports_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = SceneSampler::new(3, SamplerConfig { seeds_per_scene: 3, ..Default::default() })
            .sample_scenes(8, 2)
            .unwrap();
        let services = ServiceSet::mock(vec![MockDetectorProfile::default(), MockDetectorProfile::uniform()]);
        let opts = EvaluationOptions { mms: MmsConfig { seeds_per_scene: 3, ..MmsConfig::default() }, ..Default::default() };
        let cfg = PipelineConfig::default();
        let log_path = dir.path().join("results.jsonl");
        let mut log = ResultLog::create(&log_path).unwrap();
        let live = evaluate_scenes(&scenes, &services, &cfg, &opts, "r", Some(&mut log), &ResumeState::default()).unwrap();
        drop(log);
        let rebuilt = rebuild_run(&scenes, &live.detectors, &read_records(&log_path).unwrap(), &opts.mms, &cfg).unwrap();
        assert_eq!(rebuilt, live);

        let a = write_run_reports(&dir.path().join("a"), &live).unwrap();
        let b = write_run_reports(&dir.path().join("b"), &rebuilt).unwrap();
        assert_eq!(a.len(), 2 + 2 * 2 * GroupBy::ALL.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
        }
        let summary = fs::read_to_string(dir.path().join("a/summary.md")).unwrap();
        assert!(summary.contains("| mock-default | 8 |"), "{summary}");
    }
}
