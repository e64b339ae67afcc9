use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineConfig, PipelineError, Result, SIDECAR_SCHEMA};
use crate::metrics::{Detection, GroundTruthObject, MmsConfig, SeedOutcome};
use crate::scene::{SceneConfig, SCENE_SCHEMA};

pub const RESULT_SCHEMA: &str = "result/v1";
pub const MANIFEST_SCHEMA: &str = "manifest/v1";

/// One line of the results log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResultRecord {
    Detection {
        schema: String,
        run_id: String,
        scene_id: String,
        seed: u64,
        detector: String,
        detections: Vec<Detection>,
        ground_truth: Vec<GroundTruthObject>,
    },
    Failure {
        schema: String,
        run_id: String,
        scene_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detector: Option<String>,
        error: String,
    },
}

impl ResultRecord {
    pub fn run_id(&self) -> &str {
        match self {
            ResultRecord::Detection { run_id, .. } | ResultRecord::Failure { run_id, .. } => run_id,
        }
    }

    pub fn scene_id(&self) -> &str {
        match self {
            ResultRecord::Detection { scene_id, .. } | ResultRecord::Failure { scene_id, .. } => scene_id,
        }
    }
}

/// Completed detector calls recovered from an earlier, interrupted run.
#[derive(Debug, Default, Clone)]
pub struct ResumeState {
    done: HashMap<(String, u64, String), SeedOutcome>,
}

impl ResumeState {
    pub fn from_records(records: &[ResultRecord]) -> Self {
        let done = records
            .iter()
            .filter_map(|r| match r {
                ResultRecord::Detection { scene_id, seed, detector, detections, ground_truth, .. } => Some((
                    (scene_id.clone(), *seed, detector.clone()),
                    SeedOutcome { seed: *seed, detections: detections.clone(), ground_truth: ground_truth.clone() },
                )),
                ResultRecord::Failure { .. } => None,
            })
            .collect();
        Self { done }
    }

    pub fn get(&self, scene_id: &str, seed: u64, detector: &str) -> Option<&SeedOutcome> {
        self.done.get(&(scene_id.to_string(), seed, detector.to_string()))
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }
}

/// Append-only JSONL results log with a single writer.
#[derive(Debug)]
pub struct ResultLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl ResultLog {
    /// Starts a fresh log, truncating any previous file.
    pub fn create(path: &Path) -> Result<Self> {
        let out = BufWriter::new(File::create(path)?);
        Ok(Self { path: path.to_path_buf(), out })
    }

    /// Reopens an existing log for `run_id`, returning the records already in
    /// it. A torn final line from an interrupted write is dropped.
    pub fn resume(path: &Path, run_id: &str) -> Result<(Self, Vec<ResultRecord>)> {
        if !path.exists() {
            return Ok((Self::create(path)?, Vec::new()));
        }
        let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<std::io::Result<_>>()?;
        let mut records = Vec::with_capacity(lines.len());
        let mut torn = false;
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<ResultRecord>(line) {
                Ok(r) => records.push(r),
                Err(_) if i + 1 == lines.len() => torn = true,
                Err(e) => return Err(PipelineError::Store(format!("{}:{}: {e}", path.display(), i + 1))),
            }
        }
        if let Some(r) = records.iter().find(|r| r.run_id() != run_id) {
            return Err(PipelineError::Store(format!(
                "log belongs to run {} but this run is {run_id}; inputs changed, start a fresh run",
                r.run_id()
            )));
        }
        if torn {
            log::warn!("{}: dropping a torn final line", path.display());
            let mut out = BufWriter::new(File::create(path)?);
            for r in &records {
                writeln!(out, "{}", serde_json::to_string(r).expect("serializable record"))?;
            }
            out.flush()?;
        }
        let out = BufWriter::new(OpenOptions::new().append(true).open(path)?);
        Ok((Self { path: path.to_path_buf(), out }, records))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, records: &[ResultRecord]) -> Result<()> {
        for r in records {
            writeln!(self.out, "{}", serde_json::to_string(r).expect("serializable record"))?;
        }
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| PipelineError::Store(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn scene_digest(scenes: &[SceneConfig]) -> String {
    let mut h = Sha256::new();
    for s in scenes {
        h.update(s.to_document().as_bytes());
        h.update(b"\n");
    }
    hex(&h.finalize())
}

/// Drops credentials before a configuration is persisted or hashed.
pub fn redact(mut value: serde_json::Value) -> serde_json::Value {
    match &mut value {
        serde_json::Value::Object(map) => {
            map.remove("auth_token");
            for v in map.values_mut() {
                *v = redact(v.take());
            }
        }
        serde_json::Value::Array(items) => {
            for v in items.iter_mut() {
                *v = redact(v.take());
            }
        }
        _ => {}
    }
    value
}

/// Everything needed to reproduce a run, written next to its results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub run_id: String,
    pub code_version: String,
    pub scene_schema: String,
    pub result_schema: String,
    pub sidecar_schema: String,
    pub scene_count: usize,
    pub scene_digest: String,
    pub mms: MmsConfig,
    pub pipeline: PipelineConfig,
    pub endpoints: serde_json::Value,
    pub detectors: Vec<String>,
    pub started_at: String,
    #[serde(default)]
    pub finished_at: Option<String>,
    #[serde(default)]
    pub scenes_failed: usize,
    /// Fraction of (scene, detector) pairs that produced a score.
    #[serde(default)]
    pub completeness: f64,
}

impl RunManifest {
    pub fn new(
        scenes: &[SceneConfig],
        mms: &MmsConfig,
        pipeline: &PipelineConfig,
        endpoints: serde_json::Value,
        detectors: Vec<String>,
    ) -> Self {
        let mut m = Self {
            schema: MANIFEST_SCHEMA.into(),
            run_id: String::new(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            scene_schema: SCENE_SCHEMA.into(),
            result_schema: RESULT_SCHEMA.into(),
            sidecar_schema: SIDECAR_SCHEMA.into(),
            scene_count: scenes.len(),
            scene_digest: scene_digest(scenes),
            mms: mms.clone(),
            pipeline: pipeline.clone(),
            endpoints: redact(endpoints),
            detectors,
            started_at: chrono::Utc::now().to_rfc3339(),
            finished_at: None,
            scenes_failed: 0,
            completeness: 0.0,
        };
        m.run_id = m.identity_hash();
        m
    }

    /// Hash over the inputs that determine the results; timestamps and outcome
    /// counts are left out.
    pub fn identity_hash(&self) -> String {
        let identity = serde_json::json!({
            "code_version": self.code_version,
            "schemas": [self.scene_schema, self.result_schema, self.sidecar_schema],
            "scene_digest": self.scene_digest,
            "mms": self.mms,
            "pipeline": self.pipeline,
            "endpoints": self.endpoints,
            "detectors": self.detectors,
        });
        let digest = Sha256::digest(identity.to_string().as_bytes());
        hex(&digest[..8])
    }

    pub fn finish(&mut self, scenes_failed: usize, completeness: f64) {
        self.finished_at = Some(chrono::Utc::now().to_rfc3339());
        self.scenes_failed = scenes_failed;
        self.completeness = completeness;
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self).expect("serializable manifest") + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Store(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::PixelBox;

    fn det(scene: &str, seed: u64) -> ResultRecord {
        ResultRecord::Detection {
            schema: RESULT_SCHEMA.into(),
            run_id: "r1".into(),
            scene_id: scene.into(),
            seed,
            detector: "d".into(),
            detections: vec![Detection::new(PixelBox::new(1.0, 2.0, 3.0, 4.0), "car", 0.5)],
            ground_truth: vec![],
        }
    }

    #[test]
    fn resume_drops_torn_tail_and_rejects_foreign_runs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.jsonl");
        let mut log = ResultLog::create(&path).unwrap();
        log.append(&[det("a", 0), det("a", 1)]).unwrap();
        drop(log);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("{\"kind\":\"detection\",\"sch");
        fs::write(&path, text).unwrap();

        let (mut log, records) = ResultLog::resume(&path, "r1").unwrap();
        assert_eq!(records, vec![det("a", 0), det("a", 1)]);
        log.append(&[det("b", 0)]).unwrap();
        drop(log);
        assert_eq!(read_records(&path).unwrap().len(), 3);

        let state = ResumeState::from_records(&read_records(&path).unwrap());
        assert_eq!(state.len(), 3);
        assert!(state.get("b", 0, "d").is_some());
        assert!(state.get("b", 1, "d").is_none());
        assert!(matches!(ResultLog::resume(&path, "other"), Err(PipelineError::Store(_))));
    }

    #[test]
    fn failure_records_round_trip() {
        let r = ResultRecord::Failure {
            schema: RESULT_SCHEMA.into(),
            run_id: "r".into(),
            scene_id: "s".into(),
            seed: Some(3),
            detector: None,
            error: "boom".into(),
        };
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.starts_with("{\"kind\":\"failure\""), "{text}");
        assert!(!text.contains("detector"));
        assert_eq!(serde_json::from_str::<ResultRecord>(&text).unwrap(), r);
    }

    #[test]
    fn run_id_ignores_timestamps_and_redacts_tokens() {
        let scenes = crate::scene::SceneSampler::new(1, Default::default()).sample_scenes(3, 2).unwrap();
        let ep = serde_json::json!({"detectors": {"x": {"url": "http://x", "auth_token": "secret"}}});
        let a = RunManifest::new(&scenes, &MmsConfig::default(), &PipelineConfig::default(), ep.clone(), vec!["x".into()]);
        let mut b = a.clone();
        b.started_at = "later".into();
        assert_eq!(a.run_id, b.identity_hash());
        assert!(!serde_json::to_string(&a).unwrap().contains("secret"));
        let c = RunManifest::new(&scenes[..2], &MmsConfig::default(), &PipelineConfig::default(), ep, vec!["x".into()]);
        assert_ne!(a.run_id, c.run_id);
        assert_eq!(a.run_id.len(), 16);
    }
}
