use serde::{Deserialize, Serialize};

use super::{CarColor, CarSpec, CarType, Rect, Region, Result, SceneConfig, SceneError};
use crate::geometry::{self, CameraModel, Point2, Point3};

/// Width-to-height ratio of each car type's silhouette seen from the side and from the front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectRatios {
    pub entries: Vec<(CarType, f64, f64)>,
}

impl Default for AspectRatios {
    fn default() -> Self {
        Self {
            entries: vec![
                (CarType::Sedan, 2.4, 1.0),
                (CarType::Suv, 2.2, 1.1),
                (CarType::CoupeCar, 2.3, 0.95),
                (CarType::SportsCar, 2.5, 0.9),
                (CarType::SmartCar, 1.6, 1.0),
            ],
        }
    }
}

impl AspectRatios {
    /// `(side, front)` ratios for a car type.
    pub fn get(&self, car_type: CarType) -> (f64, f64) {
        self.entries
            .iter()
            .find(|(t, _, _)| *t == car_type)
            .map(|&(_, side, front)| (side, front))
            .unwrap_or((2.0, 1.0))
    }

    /// Ratio at a view azimuth: the side ratio at 0°, the front ratio at ±90°,
    /// linear in `|sin azimuth|` in between.
    pub fn ratio(&self, car_type: CarType, azimuth_deg: f64) -> f64 {
        let (side, front) = self.get(car_type);
        side + (front - side) * azimuth_deg.to_radians().sin().abs()
    }

    /// Half of the car's width on the ground, used for on-road checks.
    pub fn ground_radius(&self, car: &CarSpec) -> f64 {
        0.5 * car.pose.original_height * car.height_factor * self.get(car.car_type).1
    }
}

/// A car after projection into the camera image plane.
///
/// The silhouette is a camera-facing rectangle standing on the projected
/// ground contact point. Image-plane `v` grows upwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedCar {
    pub index: usize,
    pub car_type: CarType,
    pub color: CarColor,
    /// Distance along the optical axis.
    pub depth: f64,
    pub azimuth_deg: f64,
    pub polar_deg: f64,
    /// Apparent height including the car's height factor.
    pub height: f64,
    pub width: f64,
    pub ground_point: Point2,
    pub footprint: Rect,
    /// Footprint minus the footprints of all nearer cars.
    pub visible: Region,
}

impl ProjectedCar {
    pub fn polygon(&self) -> [Point2; 4] {
        self.footprint.corners().map(|(u, v)| Point2::new(u, v))
    }

    pub fn bounding_box(&self) -> Rect {
        self.footprint
    }

    pub fn visible_area(&self) -> f64 {
        self.visible.area()
    }

    /// Fraction of the footprint hidden behind nearer cars. Computed on
    /// geometry alone; image clipping does not enter.
    pub fn occlusion_rate(&self) -> Result<f64> {
        let total = self.footprint.area();
        if !(total > 0.0) {
            return Err(SceneError::DegenerateFootprint { index: self.index });
        }
        Ok((1.0 - self.visible.area() / total).clamp(0.0, 1.0))
    }
}

/// Projects every car of `scene` and resolves mutual occlusion front to back.
pub fn project_scene(scene: &SceneConfig, cam: &CameraModel, aspect: &AspectRatios) -> Result<Vec<ProjectedCar>> {
    let ground = cam.ground_position();
    let mut cars = Vec::with_capacity(scene.cars.len());
    for (index, car) in scene.cars.iter().enumerate() {
        let contact = Point3::ground(car.pose.center_x, car.pose.center_z);
        let ground_point = cam.project(contact)?;
        let depth = cam.depth(contact);
        let azimuth_deg = geometry::azimuth_hat(&car.pose, ground)?;
        let polar_deg = geometry::polar_angle(depth)?;
        let height = geometry::scaled_height(car.pose.original_height, cam.focal_length, depth) * car.height_factor;
        let width = height * aspect.ratio(car.car_type, azimuth_deg);
        let footprint = Rect::new(
            ground_point.u - width / 2.0,
            ground_point.v,
            ground_point.u + width / 2.0,
            ground_point.v + height,
        );
        cars.push(ProjectedCar {
            index,
            car_type: car.car_type,
            color: car.color,
            depth,
            azimuth_deg,
            polar_deg,
            height,
            width,
            ground_point,
            footprint,
            visible: Region::from_rect(footprint),
        });
    }

    resolve_occlusion(&mut cars);
    Ok(cars)
}

/// Recomputes every visible region by subtracting nearer footprints (smaller depth wins).
pub fn resolve_occlusion(cars: &mut [ProjectedCar]) {
    let order = depth_order(cars);
    for (rank, &i) in order.iter().enumerate() {
        let mut visible = Region::from_rect(cars[i].footprint);
        for &nearer in &order[..rank] {
            visible = visible.subtract(&cars[nearer].footprint);
        }
        cars[i].visible = visible;
    }
}

/// Indices sorted nearest first; equal depths keep scene order.
pub(crate) fn depth_order(cars: &[ProjectedCar]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cars.len()).collect();
    order.sort_by(|&a, &b| cars[a].depth.total_cmp(&cars[b].depth).then(a.cmp(&b)));
    order
}
