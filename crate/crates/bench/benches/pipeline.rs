use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use bev2ego::metrics::{mms, ms_ssim, MmsConfig, SeedOutcome};
use bev2ego::pipeline::{mine_errors, realize_scene, MiningOptions, PipelineConfig};
use bev2ego::scene::project_scene;
use bev2ego::services::DetectQuery;
use bev2ego_bench::{scenes, scored_run, services};

fn projection(c: &mut Criterion) {
    let cfg = PipelineConfig::default();
    let scenes = scenes(64, 1);
    c.bench_function("project_scene x64", |b| {
        b.iter(|| {
            for s in &scenes {
                black_box(project_scene(s, &cfg.camera, &cfg.aspect).unwrap());
            }
        })
    });
}

fn realize(c: &mut Criterion) {
    let cfg = PipelineConfig::default();
    let services = services();
    let scene = scenes(1, 1).remove(0);
    c.bench_function("realize_scene", |b| b.iter(|| black_box(realize_scene(&scene, 0, &services, &cfg).unwrap())));

    let r = realize_scene(&scene, 0, &services, &cfg).unwrap();
    c.bench_function("ms_ssim 512", |b| b.iter(|| black_box(ms_ssim(&r.outpainted, &r.composite).unwrap())));
}

fn scoring(c: &mut Criterion) {
    let cfg = PipelineConfig::default();
    let services = services();
    let scene = scenes(1, 9).remove(0);
    let seeds: Vec<SeedOutcome> = scene
        .seeds
        .iter()
        .map(|&seed| {
            let r = realize_scene(&scene, seed, &services, &cfg).unwrap();
            let oracle = r.sidecar.oracle();
            let detections = services.detectors[0]
                .detector
                .detect(&DetectQuery { image: &r.image, nms_iou: 0.5, oracle: Some(&oracle) })
                .unwrap();
            SeedOutcome { seed, detections, ground_truth: r.sidecar.ground_truth("car") }
        })
        .collect();
    let mms_cfg = MmsConfig::default();
    c.bench_function("mms 9 seeds x 10 thresholds", |b| b.iter(|| black_box(mms(&seeds, &mms_cfg).unwrap())));
}

fn mining(c: &mut Criterion) {
    let run = scored_run(200, 3);
    let values = run.values(true);
    let opts = MiningOptions::default();
    c.bench_function("mine_errors 200 scenes", |b| {
        b.iter_batched(|| values[1].clone(), |v| black_box(mine_errors("planted", &run.scenes, &v, &opts).unwrap()), BatchSize::SmallInput)
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = projection, realize, scoring, mining
}
criterion_main!(benches);
