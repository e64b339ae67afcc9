use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Args;
use serde_json::{json, Value};

use bev2ego::metrics::MmsConfig;
use bev2ego::pipeline::{
    benchmark_outpainting, compare_curves, default_targets, evaluate_scenes, load_frames, mine_errors, read_records,
    real_curves, realize_scene, rebuild_run, summary_table, synthetic_curves, write_run_reports, EvaluationOptions,
    EvaluationRun, MiningOptions, OutpaintMethod, PipelineConfig, ResultLog, ResumeState, RunManifest,
};
use bev2ego::raster::Canvas;
use bev2ego::scene::{project_scene, SamplerConfig, SceneConfig, SceneSampler};
use bev2ego::services::mock::{MockOutpainter, OutpaintMode};
use bev2ego::services::{DetectQuery, EndpointsConfig, HttpService, Outpainter, ServiceEndpoint, ServiceSet};

use crate::files::{load_scenes, write_atomic, write_json, write_scene};
use crate::{CliError, CliResult};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Flags shared by every command that talks to model services or scores results.
#[derive(Debug, Clone, Args)]
pub struct ServiceArgs {
    /// Endpoints file, or `mock`. The BEV2EGO_ENDPOINTS variable takes precedence.
    #[arg(long)]
    pub endpoints: Option<String>,
    /// IoU threshold of the detectors' non-maximum suppression.
    #[arg(long, default_value_t = 0.5)]
    pub nms_iou: f64,
    /// Comma-separated IoU thresholds; defaults to 0.50:0.05:0.95.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Use only the first N seeds of every scene.
    #[arg(long)]
    pub seeds: Option<usize>,
}

impl ServiceArgs {
    pub fn endpoints(&self) -> CliResult<EndpointsConfig> {
        Ok(EndpointsConfig::load(self.endpoints.as_deref())?)
    }

    pub fn services(&self) -> CliResult<(EndpointsConfig, ServiceSet)> {
        let cfg = self.endpoints()?;
        let set = cfg.build()?;
        Ok((cfg, set))
    }

    /// Scenes trimmed to the requested seed count, plus the matching score config.
    pub fn prepare(&self, mut scenes: Vec<SceneConfig>) -> CliResult<(Vec<SceneConfig>, MmsConfig)> {
        if let Some(n) = self.seeds {
            if n == 0 {
                return Err(CliError::config("--seeds must be at least 1"));
            }
            for s in &mut scenes {
                if s.seeds.len() < n {
                    return Err(CliError::config(format!("scene {} has only {} seeds", s.id, s.seeds.len())));
                }
                s.seeds.truncate(n);
            }
        }
        let n = scenes.first().map_or(1, |s| s.seeds.len());
        if let Some(s) = scenes.iter().find(|s| s.seeds.len() != n) {
            return Err(CliError::config(format!("scene {} has {} seeds, expected {n}; pass --seeds", s.id, s.seeds.len())));
        }
        let mut mms = MmsConfig { nms_iou: self.nms_iou, seeds_per_scene: n, ..MmsConfig::default() };
        if let Some(t) = &self.thresholds {
            mms.thresholds = t.clone();
        }
        mms.validate().map_err(CliError::config)?;
        Ok((scenes, mms))
    }
}

// ---------------------------------------------------------------- sample-scenes

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Number of scenes.
    #[arg(long, default_value_t = 1200)]
    pub scenes: usize,
    /// Cars per scene (1, 2 or 3).
    #[arg(long, default_value_t = 2)]
    pub cars: usize,
    /// Seeds per scene.
    #[arg(long, default_value_t = 9)]
    pub seeds: usize,
    /// Sampler RNG seed.
    #[arg(long, default_value_t = 0)]
    pub rng_seed: u64,
    /// JSON sampler configuration (grid, weights, ...).
    #[arg(long)]
    pub sampler: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn sample_scenes(args: &SampleArgs) -> CliResult<usize> {
    let mut cfg: SamplerConfig = match &args.sampler {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => SamplerConfig::default(),
    };
    cfg.seeds_per_scene = args.seeds;
    let scenes = SceneSampler::new(args.rng_seed, cfg).sample_scenes(args.scenes, args.cars)?;
    fs::create_dir_all(&args.out)?;
    for s in &scenes {
        write_scene(&args.out, s)?;
    }
    Ok(scenes.len())
}

// ---------------------------------------------------------------- preview

/// Geometry of a scene as seen from the EGO camera, cars listed back to front.
pub fn preview_json(scene: &SceneConfig, cfg: &PipelineConfig) -> CliResult<Value> {
    scene.validate()?;
    let cars = project_scene(scene, &cfg.camera, &cfg.aspect)?;
    let canvas = Canvas::new(cfg.canvas_size, cfg.canvas_size);
    let mut order: Vec<usize> = (0..cars.len()).collect();
    order.sort_by(|&a, &b| cars[b].depth.total_cmp(&cars[a].depth).then(a.cmp(&b)));
    let cars: Vec<Value> = order
        .into_iter()
        .map(|i| {
            let c = &cars[i];
            let polygon: Vec<[f64; 2]> = c.polygon().iter().map(|p| [p.u, p.v]).collect();
            let pixel_polygon: Vec<[f64; 2]> = c
                .polygon()
                .iter()
                .map(|p| {
                    let (x, y) = canvas.to_pixel(p.u, p.v);
                    [x, y]
                })
                .collect();
            json!({
                "index": c.index,
                "car_type": c.car_type,
                "color": c.color,
                "depth": c.depth,
                "azimuth_deg": c.azimuth_deg,
                "polar_deg": c.polar_deg,
                "height": c.height,
                "width": c.width,
                "polygon": polygon,
                "pixel_polygon": pixel_polygon,
                "pixel_box": canvas.rect_to_box(&c.bounding_box()),
                "visible_area": c.visible_area(),
                "occlusion_rate": c.occlusion_rate().unwrap_or(0.0),
            })
        })
        .collect();
    Ok(json!({ "scene_id": scene.id, "canvas": cfg.canvas_size, "cars": cars }))
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    /// A scene file.
    pub scene: PathBuf,
}

pub fn preview(args: &PreviewArgs) -> CliResult<Value> {
    let scenes = load_scenes(&args.scene)?;
    let cfg = PipelineConfig::default();
    if scenes.len() == 1 {
        return preview_json(&scenes[0], &cfg);
    }
    Ok(Value::Array(scenes.iter().map(|s| preview_json(s, &cfg)).collect::<CliResult<_>>()?))
}

// ---------------------------------------------------------------- realize

#[derive(Debug, Args)]
pub struct RealizeArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub service: ServiceArgs,
}

pub fn realize(args: &RealizeArgs) -> CliResult<usize> {
    let (scenes, _) = args.service.prepare(load_scenes(&args.scenes)?)?;
    let (_, services) = args.service.services()?;
    let cfg = PipelineConfig::default();
    fs::create_dir_all(&args.out)?;
    let mut written = 0;
    for scene in &scenes {
        for &seed in &scene.seeds {
            let r = realize_scene(scene, seed, &services, &cfg)?;
            let stem = args.out.join(format!("{}_s{seed}", scene.id));
            r.image.save(stem.with_extension("png")).context("writing image")?;
            r.object_mask.to_gray().save(args.out.join(format!("{}_s{seed}_mask.png", scene.id))).context("writing mask")?;
            write_json(&stem.with_extension("json"), &r.sidecar)?;
            written += 1;
        }
    }
    Ok(written)
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    /// Run directory for the result log, manifest and reports.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue a run whose log already exists, skipping finished records.
    #[arg(long)]
    pub resume: bool,
    /// Largest tolerated fraction of missing (scene, detector) scores before exiting with status 2.
    #[arg(long, default_value_t = 0.0)]
    pub max_failure_rate: f64,
    /// Scenes evaluated in parallel between log flushes.
    #[arg(long, default_value_t = 64)]
    pub chunk_size: usize,
    #[command(flatten)]
    pub service: ServiceArgs,
}

/// Renders the first scene once and asks every detector, so that a dead
/// endpoint stops the run before any work is logged.
fn preflight(scene: &SceneConfig, services: &ServiceSet, cfg: &PipelineConfig, nms_iou: f64) -> CliResult<()> {
    let r = realize_scene(scene, scene.seeds[0], services, cfg)?;
    let oracle = r.sidecar.oracle();
    for d in &services.detectors {
        d.detector
            .detect(&DetectQuery { image: &r.image, nms_iou, oracle: Some(&oracle) })
            .map_err(|e| CliError::from(bev2ego::pipeline::PipelineError::service(&scene.id, scene.seeds[0], "detect", e)))?;
    }
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<EvaluationRun> {
    if !(0.0..=1.0).contains(&args.max_failure_rate) {
        return Err(CliError::config("--max-failure-rate must lie in [0, 1]"));
    }
    let (scenes, mms) = args.service.prepare(load_scenes(&args.scenes)?)?;
    let (endpoints, services) = args.service.services()?;
    let cfg = PipelineConfig::default();
    let opts = EvaluationOptions { mms: mms.clone(), chunk_size: args.chunk_size.max(1), send_oracle: true };
    let endpoints_json = serde_json::to_value(&endpoints).context("serializing endpoints")?;
    let mut manifest = RunManifest::new(&scenes, &mms, &cfg, endpoints_json, services.detector_names());

    fs::create_dir_all(&args.out)?;
    let log_path = args.out.join(RESULTS_FILE);
    let existing = log_path.exists();
    if existing && !args.resume {
        return Err(CliError::config(format!("{} exists; pass --resume to continue it", log_path.display())));
    }
    if !existing {
        preflight(&scenes[0], &services, &cfg, mms.nms_iou)?;
    }
    let (mut log, resume) = if existing {
        let (log, records) = ResultLog::resume(&log_path, &manifest.run_id).map_err(CliError::config)?;
        log::info!("resuming run {} with {} records", manifest.run_id, records.len());
        (log, ResumeState::from_records(&records))
    } else {
        (ResultLog::create(&log_path)?, ResumeState::default())
    };
    manifest.save(&args.out.join(MANIFEST_FILE))?;

    let run = evaluate_scenes(&scenes, &services, &cfg, &opts, &manifest.run_id, Some(&mut log), &resume)?;
    manifest.finish(run.failed_scenes(), run.completeness());
    manifest.save(&args.out.join(MANIFEST_FILE))?;
    write_run_reports(&args.out.join("reports"), &run)?;
    Ok(run)
}

/// Exit status 2 when the share of missing scores exceeds the allowance.
pub fn check_failures(run: &EvaluationRun, max_rate: f64) -> CliResult<()> {
    let missing = 1.0 - run.completeness();
    if missing > max_rate {
        return Err(CliError::Partial(format!(
            "{} of {} scenes incomplete ({:.1}% of scores missing)",
            run.failed_scenes(),
            run.scenes.len(),
            100.0 * missing
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- report / mine

#[derive(Debug, Args)]
pub struct RunDirArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    /// Run directory written by `evaluate`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Rebuilds an evaluation from a run directory without calling any service.
pub fn load_run(args: &RunDirArgs) -> CliResult<(RunManifest, EvaluationRun)> {
    let manifest = RunManifest::load(&args.out.join(MANIFEST_FILE)).map_err(CliError::config)?;
    let mut scenes = load_scenes(&args.scenes)?;
    for s in &mut scenes {
        s.seeds.truncate(manifest.mms.seeds_per_scene);
    }
    if bev2ego::pipeline::scene_digest(&scenes) != manifest.scene_digest {
        return Err(CliError::config("scenes do not match the run's manifest"));
    }
    let records = read_records(&args.out.join(RESULTS_FILE)).map_err(CliError::config)?;
    let run = rebuild_run(&scenes, &manifest.detectors, &records, &manifest.mms, &manifest.pipeline)?;
    Ok((manifest, run))
}

pub fn report(args: &RunDirArgs) -> CliResult<String> {
    let (_, run) = load_run(args)?;
    write_run_reports(&args.out.join("reports"), &run)?;
    Ok(summary_table(&run))
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[command(flatten)]
    pub run: RunDirArgs,
    /// Smallest group size reported.
    #[arg(long, default_value_t = 5)]
    pub min_support: usize,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Mine one detector only.
    #[arg(long)]
    pub detector: Option<String>,
    /// Rank by the score at IoU 0.5 instead of the full threshold sweep.
    #[arg(long)]
    pub at_50: bool,
}

pub fn mine(args: &MineArgs) -> CliResult<String> {
    let (_, run) = load_run(&args.run)?;
    let opts = MiningOptions { min_support: args.min_support, top_k: args.top_k, ..MiningOptions::default() };
    let values = run.values(args.at_50);
    let dir = args.run.out.join("mining");
    fs::create_dir_all(&dir)?;
    let mut text = String::new();
    let mut any = false;
    for (d, name) in run.detectors.iter().enumerate() {
        if args.detector.as_ref().is_some_and(|want| want != name) {
            continue;
        }
        any = true;
        let r = mine_errors(name, &run.scenes, &values[d], &opts)?;
        let suffix = if args.at_50 { "_at50" } else { "" };
        write_atomic(&dir.join(format!("{name}{suffix}.txt")), r.to_text().as_bytes())?;
        write_json(&dir.join(format!("{name}{suffix}.json")), &r)?;
        text.push_str(&r.to_text());
        text.push('\n');
    }
    if !any {
        return Err(CliError::config(format!("detector {:?} is not part of this run", args.detector.as_deref().unwrap_or(""))));
    }
    Ok(text)
}

// ---------------------------------------------------------------- benchmark-outpaint

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `NAME=SPEC`, repeated. SPEC is a URL or one of mock:faithful, mock:dilate:F, mock:recolor, mock:no-road.
    #[arg(long = "method", required = true)]
    pub methods: Vec<String>,
    #[command(flatten)]
    pub service: ServiceArgs,
}

pub fn parse_method(arg: &str) -> CliResult<OutpaintMethod> {
    let (name, spec) = arg.split_once('=').ok_or_else(|| CliError::config(format!("method {arg:?} is not NAME=SPEC")))?;
    let outpainter: Arc<dyn Outpainter> = match spec.split(':').collect::<Vec<_>>().as_slice() {
        ["mock", "faithful"] => Arc::new(MockOutpainter::new(OutpaintMode::Faithful)),
        ["mock", "recolor"] => Arc::new(MockOutpainter::new(OutpaintMode::Recolor)),
        ["mock", "no-road"] => Arc::new(MockOutpainter { mode: OutpaintMode::Faithful, drop_road: true }),
        ["mock", "dilate", f] => {
            let f: f64 = f.parse().map_err(|_| CliError::config(format!("bad dilation factor {f:?}")))?;
            if !(f.is_finite() && f >= 1.0) {
                return Err(CliError::config("dilation factor must be >= 1"));
            }
            Arc::new(MockOutpainter::new(OutpaintMode::Dilate(f)))
        }
        _ if spec.starts_with("http://") || spec.starts_with("https://") => {
            Arc::new(HttpService::new(ServiceEndpoint::new(spec))?)
        }
        _ => return Err(CliError::config(format!("unknown outpainting method spec {spec:?}"))),
    };
    Ok(OutpaintMethod { name: name.to_string(), outpainter })
}

pub fn benchmark(args: &BenchmarkArgs) -> CliResult<String> {
    let methods = args.methods.iter().map(|m| parse_method(m)).collect::<CliResult<Vec<_>>>()?;
    if methods.len() < 2 {
        return Err(CliError::config("the benchmark compares at least two methods"));
    }
    let (scenes, _) = args.service.prepare(load_scenes(&args.scenes)?)?;
    let (_, services) = args.service.services()?;
    let seeds = scenes[0].seeds.clone();
    let report = benchmark_outpainting(&scenes, &seeds, &methods, &services, &PipelineConfig::default())?;
    fs::create_dir_all(&args.out)?;
    write_atomic(&args.out.join("benchmark.txt"), report.to_text().as_bytes())?;
    write_atomic(&args.out.join("benchmark.csv"), report.to_csv().as_bytes())?;
    write_json(&args.out.join("benchmark.json"), &report)?;
    Ok(report.to_text())
}

// ---------------------------------------------------------------- sim2real

#[derive(Debug, Args)]
pub struct Sim2RealArgs {
    #[command(flatten)]
    pub run: RunDirArgs,
    /// JSONL index of real frames with two car masks each.
    #[arg(long, required_unless_present = "self_test")]
    pub frames: Option<PathBuf>,
    /// Compare the synthetic curves with themselves.
    #[arg(long)]
    pub self_test: bool,
    #[arg(long)]
    pub endpoints: Option<String>,
}

pub fn sim2real(args: &Sim2RealArgs) -> CliResult<String> {
    let (manifest, run) = load_run(&args.run)?;
    let synthetic = synthetic_curves(&run);
    let real = match (&args.frames, args.self_test) {
        (_, true) => synthetic.clone(),
        (Some(index), false) => {
            let frames = load_frames(index).map_err(CliError::config)?;
            let services = EndpointsConfig::load(args.endpoints.as_deref())?.build()?;
            if services.detector_names() != manifest.detectors {
                return Err(CliError::config("the endpoints' detectors differ from the synthetic run's"));
            }
            let (curves, skipped) = real_curves(&frames, &default_targets(), &services, &manifest.mms)?;
            if skipped > 0 {
                log::warn!("{skipped} frame/target pairs could not reach their occlusion target");
            }
            curves
        }
        (None, false) => return Err(CliError::config("pass --frames or --self-test")),
    };
    let report = compare_curves(&synthetic, &real)?;
    write_atomic(&args.run.out.join("sim2real.txt"), report.to_text().as_bytes())?;
    write_json(&args.run.out.join("sim2real.json"), &report)?;
    Ok(report.to_text())
}

pub fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}
