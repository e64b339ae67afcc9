use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{PipelineConfig, PipelineError, Result};
use crate::geometry::{CameraModel, Point3};
use crate::metrics::GroundTruthObject;
use crate::raster::{BinaryMask, Canvas, PixelBox};
use crate::scene::{project_scene, Background, CarColor, CarType, ProjectedCar, RoadLayout, SceneConfig};
use crate::services::{OracleObject, OutpaintQuery, RenderQuery, ServiceSet, TestOracle};

pub const SIDECAR_SCHEMA: &str = "sidecar/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarObject {
    pub index: usize,
    pub car_type: CarType,
    pub color: CarColor,
    pub azimuth_deg: f64,
    pub polar_deg: f64,
    pub depth: f64,
    pub height_factor: f64,
    /// Tight box around the drawn silhouette, final-image pixels.
    pub full_box: PixelBox,
    /// Tight box around the unoccluded pixels; `None` when the car is hidden.
    pub visible_box: Option<PixelBox>,
    /// Occlusion from scene geometry.
    pub occlusion_rate: f64,
    /// Occlusion measured on the composited masks.
    pub occlusion_rate_raster: f64,
}

/// Ground truth shipped alongside each realized image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema: String,
    pub scene_id: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub scale: f64,
    pub background: Background,
    pub prompt: String,
    pub objects: Vec<SidecarObject>,
}

impl Sidecar {
    pub fn oracle(&self) -> TestOracle {
        TestOracle {
            objects: self
                .objects
                .iter()
                .map(|o| OracleObject {
                    car_type: o.car_type,
                    color: o.color,
                    full_box: o.full_box.as_array(),
                    visible_box: o.visible_box.map(|b| b.as_array()),
                    occlusion_rate: o.occlusion_rate,
                    azimuth_deg: o.azimuth_deg,
                })
                .collect(),
            background: self.background,
            flags: Vec::new(),
        }
    }

    /// Scoring targets: every car with at least one visible pixel.
    pub fn ground_truth(&self, label: &str) -> Vec<GroundTruthObject> {
        self.objects
            .iter()
            .filter_map(|o| o.visible_box.map(|v| GroundTruthObject { full: o.full_box, visible: v, label: label.to_string() }))
            .collect()
    }
}

/// One realized image with everything needed to score it.
#[derive(Debug, Clone)]
pub struct Realization {
    /// Final image after downscaling.
    pub image: RgbImage,
    pub sidecar: Sidecar,
    /// Cars on an empty canvas, before outpainting.
    pub composite: RgbImage,
    /// Outpainted canvas before downscaling.
    pub outpainted: RgbImage,
    pub object_mask: BinaryMask,
    pub road_mask: BinaryMask,
    /// Drawn silhouette of each car in scene order.
    pub car_masks: Vec<BinaryMask>,
    pub visible_masks: Vec<BinaryMask>,
    pub projected: Vec<ProjectedCar>,
}

/// Side length of the final image for a canvas side and scale factor.
pub fn scaled_side(canvas: u32, scale: f64) -> u32 {
    ((f64::from(canvas) / scale).floor() as u32).max(1)
}

/// Clips a ground polygon to the part at least `near` in front of the camera.
fn clip_near(cam: &CameraModel, poly: &[Point3], near: f64) -> Vec<Point3> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let (da, db) = (cam.depth(a) - near, cam.depth(b) - near);
        if da >= 0.0 {
            out.push(a);
        }
        if (da >= 0.0) != (db >= 0.0) {
            let t = da / (da - db);
            out.push(Point3::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), a.z + t * (b.z - a.z)));
        }
    }
    out
}

pub fn road_mask(cam: &CameraModel, road: &RoadLayout, canvas: Canvas, near: f64) -> Result<BinaryMask> {
    let mut mask = BinaryMask::new(canvas.width, canvas.height);
    for [x0, z0, x1, z1] in [road.vertical_arm(), road.horizontal_arm()] {
        let quad = [Point3::ground(x0, z0), Point3::ground(x1, z0), Point3::ground(x1, z1), Point3::ground(x0, z1)];
        let clipped = clip_near(cam, &quad, near);
        if clipped.len() < 3 {
            continue;
        }
        let pts = clipped
            .iter()
            .map(|&p| cam.project(p).map(|q| canvas.to_pixel(q.u, q.v)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        mask.fill_polygon(&pts);
    }
    Ok(mask)
}

/// Renders, composites and outpaints one scene at one seed.
pub fn realize_scene(scene: &SceneConfig, seed: u64, services: &ServiceSet, cfg: &PipelineConfig) -> Result<Realization> {
    scene.validate()?;
    let canvas = Canvas::new(cfg.canvas_size, cfg.canvas_size);
    let projected = project_scene(scene, &cfg.camera, &cfg.aspect)?;
    for car in &projected {
        if canvas.rect_to_box(&car.footprint).clip(canvas.width, canvas.height).is_none() {
            return Err(PipelineError::Composition { scene_id: scene.id.clone(), index: car.index });
        }
    }

    let mut composite = RgbImage::from_pixel(canvas.width, canvas.height, Rgb([0, 0, 0]));
    let mut car_masks = vec![BinaryMask::new(canvas.width, canvas.height); projected.len()];
    // farthest first so nearer cars are drawn over it
    let mut order: Vec<usize> = (0..projected.len()).collect();
    order.sort_by(|&a, &b| projected[b].depth.total_cmp(&projected[a].depth).then(b.cmp(&a)));
    for &i in &order {
        let car = &projected[i];
        let spec = &scene.cars[i];
        let query = RenderQuery {
            azimuth_deg: car.azimuth_deg,
            polar_deg: car.polar_deg,
            height_px: (car.height.round() as u32).max(1),
            car_type: spec.car_type,
            color: spec.color,
            seed,
        };
        let cutout = services.renderer.render(&query).map_err(|e| PipelineError::service(&scene.id, seed, "render", e))?;
        let (gx, gy) = canvas.to_pixel(car.ground_point.u, car.ground_point.v);
        let x0 = (gx - f64::from(cutout.image.width()) / 2.0).round() as i64;
        let y0 = (gy - f64::from(cutout.image.height())).round() as i64;
        for (cx, cy, a) in cutout.alpha.enumerate_pixels() {
            let (x, y) = (x0 + i64::from(cx), y0 + i64::from(cy));
            if a[0] < 128 || x < 0 || y < 0 || x >= i64::from(canvas.width) || y >= i64::from(canvas.height) {
                continue;
            }
            composite.put_pixel(x as u32, y as u32, *cutout.image.get_pixel(cx, cy));
            car_masks[i].set(x as u32, y as u32, true);
        }
        if car_masks[i].is_empty() {
            return Err(PipelineError::Composition { scene_id: scene.id.clone(), index: i });
        }
    }

    let mut visible_masks = Vec::with_capacity(projected.len());
    for (rank, &i) in order.iter().enumerate() {
        let _ = rank;
        let mut visible = car_masks[i].clone();
        for &j in &order {
            if projected[j].depth < projected[i].depth || (projected[j].depth == projected[i].depth && j < i) {
                visible = visible.difference(&car_masks[j]).expect("same canvas");
            }
        }
        visible_masks.push((i, visible));
    }
    visible_masks.sort_by_key(|(i, _)| *i);
    let visible_masks: Vec<BinaryMask> = visible_masks.into_iter().map(|(_, m)| m).collect();

    let mut object_mask = BinaryMask::new(canvas.width, canvas.height);
    for m in &car_masks {
        object_mask.union_in_place(m);
    }
    let road_mask = road_mask(&cfg.camera, &cfg.road, canvas, cfg.near_clip)?;
    let prompt = scene.prompt();
    let outpainted = services
        .outpainter
        .outpaint(&OutpaintQuery {
            image: &composite,
            object_mask: &object_mask,
            road_mask: &road_mask,
            prompt: &prompt,
            seed,
            controlnet_weight: cfg.controlnet_weight,
        })
        .map_err(|e| PipelineError::service(&scene.id, seed, "outpaint", e))?;
    if outpainted.dimensions() != composite.dimensions() {
        return Err(PipelineError::service(
            &scene.id,
            seed,
            "outpaint",
            crate::services::ServiceError::Protocol("outpainted image changed size".into()),
        ));
    }

    let side = scaled_side(cfg.canvas_size, scene.scale);
    let factor = f64::from(side) / f64::from(cfg.canvas_size);
    let image = if side == cfg.canvas_size { outpainted.clone() } else { imageops::resize(&outpainted, side, side, FilterType::Triangle) };

    let objects = projected
        .iter()
        .enumerate()
        .map(|(i, car)| {
            let drawn = car_masks[i].count();
            let seen = visible_masks[i].count();
            Ok(SidecarObject {
                index: i,
                car_type: car.car_type,
                color: car.color,
                azimuth_deg: car.azimuth_deg,
                polar_deg: car.polar_deg,
                depth: car.depth,
                height_factor: scene.cars[i].height_factor,
                full_box: car_masks[i].bounding_box().expect("non-empty silhouette").scaled(factor),
                visible_box: visible_masks[i].bounding_box().map(|b| b.scaled(factor)),
                occlusion_rate: car.occlusion_rate()?,
                occlusion_rate_raster: 1.0 - seen as f64 / drawn as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let sidecar = Sidecar {
        schema: SIDECAR_SCHEMA.into(),
        scene_id: scene.id.clone(),
        seed,
        width: side,
        height: side,
        scale: scene.scale,
        background: scene.background,
        prompt,
        objects,
    };
    Ok(Realization { image, sidecar, composite, outpainted, object_mask, road_mask, car_masks, visible_masks, projected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PoseOnGround;
    use crate::scene::{CarSpec, Placement, DEFAULT_PROMPT_TEMPLATE};
    use crate::services::mock::MockDetectorProfile;

    fn car(t: CarType, color: CarColor, x: f64, z: f64, heading: f64) -> CarSpec {
        CarSpec {
            car_type: t,
            color,
            pose: PoseOnGround { center_x: x, center_z: z, heading_deg: heading, original_height: 24.0 },
            height_factor: 1.0,
            placement: Placement::Vertical,
        }
    }

    fn scene(cars: Vec<CarSpec>, scale: f64) -> SceneConfig {
        SceneConfig {
            id: "s".into(),
            cars,
            background: Background::Forest,
            scale,
            seeds: vec![0],
            prompt_template: DEFAULT_PROMPT_TEMPLATE.into(),
        }
    }

    fn services() -> ServiceSet {
        ServiceSet::mock(vec![MockDetectorProfile::identity()])
    }

    #[test]
    fn single_centered_car() {
        let s = scene(vec![car(CarType::Sedan, CarColor::Red, 0.0, -50.0, 0.0)], 1.0);
        let r = realize_scene(&s, 0, &services(), &PipelineConfig::default()).unwrap();
        let o = &r.sidecar.objects[0];
        assert_eq!(Some(o.full_box), o.visible_box);
        assert_eq!(o.occlusion_rate, 0.0);
        assert_eq!(o.occlusion_rate_raster, 0.0);
        assert_eq!(r.image.dimensions(), (512, 512));
        // the silhouette stands on the projected ground point at the canvas centre column
        assert!((o.full_box.x_min + o.full_box.x_max - 512.0).abs() <= 1.0);
        for (x, y) in r.object_mask.iter_set() {
            assert_eq!(r.image.get_pixel(x, y), r.composite.get_pixel(x, y));
        }
    }

    #[test]
    fn raster_occlusion_tracks_geometry() {
        let s = scene(
            vec![
                car(CarType::Suv, CarColor::Blue, 0.0, -60.0, 0.0),
                car(CarType::SportsCar, CarColor::Yellow, 20.0, -20.0, 10.0),
            ],
            1.0,
        );
        let cfg = PipelineConfig::default();
        let r = realize_scene(&s, 3, &services(), &cfg).unwrap();
        let rear = r.sidecar.objects.iter().max_by(|a, b| a.depth.total_cmp(&b.depth)).unwrap();
        assert!(rear.occlusion_rate > 0.2, "{}", rear.occlusion_rate);
        let fp = &r.projected[rear.index].footprint;
        let slack = 2.0 * 2.0 * (fp.width() + fp.height()) / fp.area();
        assert!((rear.occlusion_rate - rear.occlusion_rate_raster).abs() <= slack, "{} vs {}", rear.occlusion_rate, rear.occlusion_rate_raster);
    }

    #[test]
    fn deterministic_and_downscaled() {
        let s = scene(
            vec![car(CarType::Sedan, CarColor::Red, 0.0, -50.0, 30.0), car(CarType::Suv, CarColor::Grey, -20.0, -20.0, 50.0)],
            3.0,
        );
        let cfg = PipelineConfig::default();
        let a = realize_scene(&s, 5, &services(), &cfg).unwrap();
        let b = realize_scene(&s, 5, &services(), &cfg).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.sidecar, b.sidecar);
        assert_eq!(a.image.dimensions(), (170, 170));
        assert_eq!(scaled_side(512, 1.5), 341);
        assert_eq!(scaled_side(512, 4.0), 128);
        let full = realize_scene(&SceneConfig { scale: 1.0, ..s }, 5, &services(), &cfg).unwrap();
        let f = 170.0 / 512.0;
        assert_eq!(a.sidecar.objects[0].full_box, full.sidecar.objects[0].full_box.scaled(f));
    }

    #[test]
    fn road_mask_covers_ground_below_horizon() {
        let cfg = PipelineConfig::default();
        let m = road_mask(&cfg.camera, &cfg.road, Canvas::new(512, 512), cfg.near_clip).unwrap();
        assert!(m.get(256, 500));
        assert!(!m.get(256, 200));
        // every road pixel is below the horizon row
        assert!(m.iter_set().all(|(_, y)| y >= 256));
    }

    #[test]
    fn off_canvas_is_a_composition_error() {
        let s = scene(vec![car(CarType::Sedan, CarColor::Red, 195.0, -190.0, 0.0)], 1.0);
        let err = realize_scene(&s, 0, &services(), &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, PipelineError::Composition { index: 0, .. }), "{err}");
    }
}
