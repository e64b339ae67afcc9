//! Pinhole camera mathematics for the bird's-eye (BEV) and first-person (EGO) views.
//!
//! World coordinates are right-handed with `x` to the right, `y` up and `z`
//! forward. The ground plane is `y = 0`. Camera coordinates follow the same
//! axes for the EGO view; the BEV camera is the EGO camera turned a quarter
//! turn about `x` so that its optical axis points straight down.
//!
//! Image coordinates are the dehomogenized output of `P = K (R | -R C)` with
//! `K = diag(f, f, 1)`, so `v` grows with camera `y`. Conversion to raster
//! rows (which grow downwards) happens when a projection is drawn.

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

/// Points closer to the pinhole than this (in scene units) are rejected.
pub const DEPTH_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("point at or behind the pinhole (depth {depth})")]
    Depth { depth: f64 },
    #[error("object centre coincides with the camera ground position")]
    Coincident,
    #[error("value {0} outside the heuristic's domain")]
    Domain(f64),
    #[error("non-finite coordinate")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewMode {
    Bev,
    Ego,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// A point on the ground plane.
    pub const fn ground(x: f64, z: f64) -> Self {
        Self { x, y: 0.0, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub u: f64,
    pub v: f64,
}

impl Point2 {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// A pinhole camera with the simplified calibration `K = diag(f, f, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub focal_length: f64,
    /// Height of the pinhole above the ground plane.
    pub height: f64,
    /// Distance behind the origin; the EGO pinhole sits at `z = -standoff`.
    pub standoff: f64,
    pub view_mode: ViewMode,
}

impl CameraModel {
    pub fn new(focal_length: f64, height: f64, standoff: f64, view_mode: ViewMode) -> Result<Self> {
        if !(focal_length.is_finite() && focal_length > 0.0) {
            return Err(GeometryError::InvalidCamera(format!("focal length {focal_length} must be > 0")));
        }
        if !(height.is_finite() && height > 0.0) {
            return Err(GeometryError::InvalidCamera(format!("height {height} must be > 0")));
        }
        if !(standoff.is_finite() && standoff >= 0.0) {
            return Err(GeometryError::InvalidCamera(format!("standoff {standoff} must be >= 0")));
        }
        Ok(Self { focal_length, height, standoff, view_mode })
    }

    pub fn ego(focal_length: f64, height: f64, standoff: f64) -> Result<Self> {
        Self::new(focal_length, height, standoff, ViewMode::Ego)
    }

    /// BEV camera directly above the origin. The standoff is ignored for this view.
    pub fn bev(focal_length: f64, height: f64) -> Result<Self> {
        Self::new(focal_length, height, 0.0, ViewMode::Bev)
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.focal_length, self.height, self.standoff, self.view_mode).map(|_| ())
    }

    pub fn calibration(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(self.focal_length, self.focal_length, 1.0))
    }

    /// World-to-camera rotation.
    pub fn rotation(&self) -> Matrix3<f64> {
        match self.view_mode {
            ViewMode::Ego => Matrix3::identity(),
            // Quarter turn about x: world -y (down) becomes the optical axis.
            ViewMode::Bev => Matrix3::new(
                1.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, //
                0.0, -1.0, 0.0,
            ),
        }
    }

    /// Pinhole position in world coordinates.
    pub fn center(&self) -> Point3 {
        match self.view_mode {
            ViewMode::Ego => Point3::new(0.0, self.height, -self.standoff),
            ViewMode::Bev => Point3::new(0.0, self.height, 0.0),
        }
    }

    /// Pinhole position projected onto the ground plane, as `(x, z)`.
    pub fn ground_position(&self) -> (f64, f64) {
        let c = self.center();
        (c.x, c.z)
    }

    /// `P = K (R | -R C)`.
    pub fn camera_matrix(&self) -> Matrix3x4<f64> {
        let r = self.rotation();
        let t = -(r * self.center().to_vector());
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        self.calibration() * rt
    }

    /// Camera-frame coordinates of a world point.
    pub fn to_camera(&self, p: Point3) -> Vector3<f64> {
        self.rotation() * (p.to_vector() - self.center().to_vector())
    }

    /// Distance of `p` along the optical axis.
    pub fn depth(&self, p: Point3) -> f64 {
        self.to_camera(p).z
    }

    pub fn project(&self, p: Point3) -> Result<Point2> {
        if !p.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        let c = self.to_camera(p);
        if c.z <= DEPTH_EPSILON {
            return Err(GeometryError::Depth { depth: c.z });
        }
        let f = self.focal_length;
        Ok(Point2::new(f * c.x / c.z, f * c.y / c.z))
    }
}

/// Applies `P` to a homogeneous world point and dehomogenizes.
pub fn project_with_matrix(p_matrix: &Matrix3x4<f64>, p: Point3) -> Result<Point2> {
    let h = p_matrix * Vector4::new(p.x, p.y, p.z, 1.0);
    if h.z <= DEPTH_EPSILON {
        return Err(GeometryError::Depth { depth: h.z });
    }
    Ok(Point2::new(h.x / h.z, h.y / h.z))
}

/// A car's placement on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseOnGround {
    pub center_x: f64,
    pub center_z: f64,
    /// Rotation about the vertical axis, degrees in (-180, 180].
    pub heading_deg: f64,
    pub original_height: f64,
}

/// Maps an angle in degrees into (-180, 180]. Values already in range are returned untouched.
pub fn wrap_degrees(angle: f64) -> f64 {
    if angle > -180.0 && angle <= 180.0 {
        return angle;
    }
    let r = angle.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Horizontal bearing of a ground point as seen from the camera, in degrees.
/// Zero straight ahead, positive to the right.
pub fn bearing_deg(center: (f64, f64), camera_ground: (f64, f64)) -> Result<f64> {
    let dx = center.0 - camera_ground.0;
    let dz = center.1 - camera_ground.1;
    if !(dx.is_finite() && dz.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    if dx == 0.0 && dz == 0.0 {
        return Err(GeometryError::Coincident);
    }
    Ok(dx.atan2(dz).to_degrees())
}

/// View azimuth of a car whose own heading is `heading_deg`, seen under `bearing`.
pub fn azimuth_from_bearing(heading_deg: f64, bearing: f64) -> f64 {
    if bearing == 0.0 {
        return wrap_degrees(heading_deg);
    }
    wrap_degrees(heading_deg + bearing)
}

/// Angle under which the camera sees a translated car. Equals the heading for
/// a car straight ahead of the pinhole.
pub fn azimuth_hat(pose: &PoseOnGround, camera_ground: (f64, f64)) -> Result<f64> {
    let bearing = bearing_deg((pose.center_x, pose.center_z), camera_ground)?;
    Ok(azimuth_from_bearing(pose.heading_deg, bearing))
}

/// Apparent object height at depth `z_hat`: `h0 * f / max(1, z_hat)`.
pub fn scaled_height(original_height: f64, focal_length: f64, z_hat: f64) -> f64 {
    original_height * focal_length / z_hat.max(1.0)
}

/// Polar viewing angle heuristic, clamped to [5, 15] degrees.
pub fn polar_angle(z_hat: f64) -> Result<f64> {
    if !(z_hat.is_finite() && z_hat > 0.0) {
        return Err(GeometryError::Domain(z_hat));
    }
    let beta = (30.0 / z_hat).atan().to_degrees();
    Ok(beta.clamp(5.0, 15.0))
}
