use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{realize_scene, PipelineConfig, PipelineError, Result};
use crate::metrics::{mask_iou, masked_l2, ms_ssim_masked, tifa_questions, tifa_score};
use crate::raster::BinaryMask;
use crate::scene::SceneConfig;
use crate::services::{Outpainter, ServiceError, ServiceSet, VqaQuery};

/// An outpainting model under comparison.
#[derive(Clone)]
pub struct OutpaintMethod {
    pub name: String,
    pub outpainter: Arc<dyn Outpainter>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSem {
    pub mean: f64,
    /// Standard error of the mean (sample standard deviation over sqrt n).
    pub sem: f64,
    pub n: usize,
}

pub fn mean_sem(xs: &[f64]) -> MeanSem {
    let n = xs.len();
    if n == 0 {
        return MeanSem { mean: f64::NAN, sem: f64::NAN, n };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let sem = if n < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() / (n as f64).sqrt()
    };
    MeanSem { mean, sem, n }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub method: String,
    pub sam_iou: MeanSem,
    pub tifa: MeanSem,
    pub ms_ssim: MeanSem,
    pub l2: MeanSem,
    pub l2_normalized: MeanSem,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub scenes: usize,
    pub seeds: usize,
    pub methods: Vec<MethodScores>,
}

impl BenchmarkReport {
    pub fn method(&self, name: &str) -> Option<&MethodScores> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} scenes x {} seeds\n", self.scenes, self.seeds);
        let _ = writeln!(out, "{:<16} {:>16} {:>16} {:>16} {:>18} {:>8}", "method", "SAM-IoU", "TIFA", "MS-SSIM", "L2", "failed");
        let cell = |m: &MeanSem| format!("{:.3} ± {:.3}", m.mean, m.sem);
        for m in &self.methods {
            let _ = writeln!(
                out,
                "{:<16} {:>16} {:>16} {:>16} {:>18} {:>8}",
                m.method,
                cell(&m.sam_iou),
                cell(&m.tifa),
                cell(&m.ms_ssim),
                format!("{:.1} ± {:.1}", m.l2.mean, m.l2.sem),
                m.failures
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "metric", "mean", "sem", "n"]).expect("in-memory csv");
        for m in &self.methods {
            for (name, v) in [
                ("sam_iou", m.sam_iou),
                ("tifa", m.tifa),
                ("ms_ssim", m.ms_ssim),
                ("l2", m.l2),
                ("l2_normalized", m.l2_normalized),
            ] {
                w.write_record([m.method.clone(), name.into(), v.mean.to_string(), v.sem.to_string(), v.n.to_string()])
                    .expect("in-memory csv");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
    }
}

struct Sample {
    sam_iou: f64,
    tifa: f64,
    ms_ssim: f64,
    l2: f64,
    l2_normalized: f64,
}

fn score_sample(scene: &SceneConfig, seed: u64, services: &ServiceSet, cfg: &PipelineConfig) -> Result<Sample> {
    // quality is judged at canvas resolution
    let full = SceneConfig { scale: 1.0, ..scene.clone() };
    let r = realize_scene(&full, seed, services, cfg)?;
    let fail = |stage, e: ServiceError| PipelineError::service(&scene.id, seed, stage, e);

    let mut segmented = BinaryMask::new(r.outpainted.width(), r.outpainted.height());
    for visible in &r.visible_masks {
        let Some(point) = visible.interior_point() else { continue };
        match services.segmenter.segment(&r.outpainted, point) {
            Ok(m) if m.dimensions() == segmented.dimensions() => segmented.union_in_place(&m),
            Ok(_) => return Err(fail("segment", ServiceError::Protocol("mask size differs from image".into()))),
            Err(ServiceError::EmptyMask) => {}
            Err(e) => return Err(fail("segment", e)),
        }
    }
    let sam_iou = mask_iou(&segmented, &r.object_mask)?;

    let first = &full.cars[0];
    let second = full.cars.get(1).unwrap_or(first);
    let questions = tifa_questions(
        first.car_type.as_str(),
        second.car_type.as_str(),
        first.color.as_str(),
        second.color.as_str(),
    );
    let oracle = r.sidecar.oracle();
    let answers = questions
        .iter()
        .map(|q| {
            services
                .vqa
                .answer(&VqaQuery { image: &r.outpainted, question: &q.question, choices: &q.choices, oracle: Some(&oracle) })
                .map_err(|e| fail("vqa", e))
        })
        .collect::<Result<Vec<_>>>()?;

    let ms_ssim = ms_ssim_masked(&r.composite, &r.outpainted, &r.object_mask)?;
    let l2 = masked_l2(&r.composite, &r.outpainted, &r.object_mask)?;
    Ok(Sample { sam_iou, tifa: tifa_score(&questions, &answers), ms_ssim, l2: l2.raw, l2_normalized: l2.normalized })
}

/// Scores each outpainting method on every scene and seed.
pub fn benchmark_outpainting(
    scenes: &[SceneConfig],
    seeds: &[u64],
    methods: &[OutpaintMethod],
    services: &ServiceSet,
    cfg: &PipelineConfig,
) -> Result<BenchmarkReport> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(PipelineError::Config("benchmark needs at least one method and one seed".into()));
    }
    let jobs: Vec<(&SceneConfig, u64)> = scenes.iter().flat_map(|s| seeds.iter().map(move |&seed| (s, seed))).collect();
    let methods = methods
        .iter()
        .map(|m| {
            let set = ServiceSet { outpainter: m.outpainter.clone(), ..services.clone() };
            let samples: Vec<Result<Sample>> = jobs.par_iter().map(|&(s, seed)| score_sample(s, seed, &set, cfg)).collect();
            let mut ok = Vec::with_capacity(samples.len());
            let mut failures = 0;
            for s in samples {
                match s {
                    Ok(s) => ok.push(s),
                    Err(e) => {
                        log::warn!("{}: {e}", m.name);
                        failures += 1;
                    }
                }
            }
            let col = |f: fn(&Sample) -> f64| mean_sem(&ok.iter().map(f).collect::<Vec<_>>());
            MethodScores {
                method: m.name.clone(),
                sam_iou: col(|s| s.sam_iou),
                tifa: col(|s| s.tifa),
                ms_ssim: col(|s| s.ms_ssim),
                l2: col(|s| s.l2),
                l2_normalized: col(|s| s.l2_normalized),
                failures,
            }
        })
        .collect();
    Ok(BenchmarkReport { scenes: scenes.len(), seeds: seeds.len(), methods })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneSampler;
    use crate::services::mock::{MockDetectorProfile, MockOutpainter, OutpaintMode};

    #[test]
    fn mean_sem_matches_hand_values() {
        let m = mean_sem(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        // sample sd sqrt(5/3), over sqrt 4
        assert!((m.sem - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-12);
        assert_eq!(mean_sem(&[7.0]).sem, 0.0);
        assert!(mean_sem(&[]).mean.is_nan());
    }

    #[test]
    fn mock_methods_separate_on_the_expected_metrics() {
        let scenes = SceneSampler::new(11, Default::default()).sample_scenes(6, 2).unwrap();
        let services = ServiceSet::mock(vec![MockDetectorProfile::identity()]);
        let method = |name: &str, o: MockOutpainter| OutpaintMethod { name: name.into(), outpainter: Arc::new(o) };
        let methods = vec![
            method("faithful", MockOutpainter::new(OutpaintMode::Faithful)),
            method("dilate", MockOutpainter::new(OutpaintMode::Dilate(1.3))),
            method("recolor", MockOutpainter::new(OutpaintMode::Recolor)),
            method("no-road", MockOutpainter { mode: OutpaintMode::Faithful, drop_road: true }),
        ];
        let r = benchmark_outpainting(&scenes, &[0, 1], &methods, &services, &PipelineConfig::default()).unwrap();
        let get = |n: &str| r.method(n).unwrap();
        assert!(r.methods.iter().all(|m| m.failures == 0), "{}", r.to_text());
        assert_eq!(get("faithful").sam_iou.mean, 1.0, "{}", r.to_text());
        assert_eq!(get("faithful").tifa.mean, 1.0);
        assert_eq!(get("faithful").ms_ssim.mean, 1.0);
        assert_eq!(get("faithful").l2.mean, 0.0);
        assert!(get("dilate").sam_iou.mean < 0.9);
        assert!(get("recolor").ms_ssim.mean < 0.9);
        assert!(get("recolor").tifa.mean < 1.0);
        assert!(get("no-road").tifa.mean <= 7.0 / 9.0);
        assert!(r.to_csv().lines().count() == 1 + 4 * 5);
    }
}
