//! Scene data model: the crossroad layout, the categorical attribute grid,
//! scene documents, and the samplers and projection built on top of them.

mod projection;
mod region;
mod sampler;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, PoseOnGround};

pub use projection::{project_scene, resolve_occlusion, AspectRatios, ProjectedCar};
pub use region::{Rect, Region};
pub use sampler::{SamplerConfig, SceneSampler};

/// Version tag written into every scene document.
pub const SCENE_SCHEMA: &str = "scene/v1";

/// Prompt used for outpainting; `{background}` is replaced by the scene background.
pub const DEFAULT_PROMPT_TEMPLATE: &str =
    "cars are driving {background}, high resolution, high definition, high quality";

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("car {index} has a footprint of zero area")]
    DegenerateFootprint { index: usize },
    #[error("no on-road placement found after {attempts} attempts")]
    OffRoad { attempts: usize },
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("unsupported scene schema {0:?}")]
    Schema(String),
    #[error("malformed scene document: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SceneError>;

macro_rules! labelled_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $label)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = SceneError;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($label => Ok($name::$variant),)+
                    other => Err(SceneError::Invalid(format!(
                        concat!("unknown ", stringify!($name), " {:?}"),
                        other
                    ))),
                }
            }
        }
    };
}

labelled_enum!(CarType {
    Sedan => "sedan",
    SportsCar => "sports car",
    SmartCar => "smart car",
    CoupeCar => "coupe car",
    Suv => "SUV",
});

labelled_enum!(CarColor {
    White => "white",
    Black => "black",
    Grey => "grey",
    Yellow => "yellow",
    Red => "red",
    Blue => "blue",
    Green => "green",
    Brown => "brown",
    Pink => "pink",
    Orange => "orange",
    Purple => "purple",
});

labelled_enum!(Background {
    Forest => "in forest",
    Beach => "on beach",
    City => "in city",
    SnowyStreet => "on snowy street",
    Highway => "on highway",
    Lake => "near lake",
});

labelled_enum!(
    /// Which arm of the crossroad a car is placed on.
    Placement {
        Vertical => "vertical",
        Horizontal => "horizontal",
    }
);

/// Crossroad of two perpendicular arms centred at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadLayout {
    pub arm_length: f64,
    pub arm_width: f64,
}

impl Default for RoadLayout {
    fn default() -> Self {
        Self { arm_length: 400.0, arm_width: 100.0 }
    }
}

impl RoadLayout {
    /// The vertical arm (parallel to z) as `(x_min, z_min, x_max, z_max)`.
    pub fn vertical_arm(&self) -> [f64; 4] {
        let (hl, hw) = (self.arm_length / 2.0, self.arm_width / 2.0);
        [-hw, -hl, hw, hl]
    }

    /// The horizontal arm (parallel to x) as `(x_min, z_min, x_max, z_max)`.
    pub fn horizontal_arm(&self) -> [f64; 4] {
        let (hl, hw) = (self.arm_length / 2.0, self.arm_width / 2.0);
        [-hl, -hw, hl, hw]
    }

    /// Closed membership test on the union of both arms.
    pub fn contains(&self, x: f64, z: f64) -> bool {
        let inside = |[x0, z0, x1, z1]: [f64; 4]| x >= x0 && x <= x1 && z >= z0 && z <= z1;
        inside(self.vertical_arm()) || inside(self.horizontal_arm())
    }

    /// True when the axis-aligned square of half-size `radius` around `(x, z)`
    /// touches only road.
    pub fn contains_disc(&self, x: f64, z: f64, radius: f64) -> bool {
        let fits = |[x0, z0, x1, z1]: [f64; 4]| {
            x - radius >= x0 && x + radius <= x1 && z - radius >= z0 && z + radius <= z1
        };
        // A square straddling both arms near the intersection is still on the road
        // when each of its extreme points is.
        fits(self.vertical_arm())
            || fits(self.horizontal_arm())
            || [(x - radius, z), (x + radius, z), (x, z - radius), (x, z + radius)]
                .iter()
                .all(|&(px, pz)| self.contains(px, pz))
    }
}

/// Discrete attribute grid the samplers draw from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeGrid {
    pub heading_min: i32,
    pub heading_max: i32,
    pub heading_step: i32,
    /// `[x_min, x_max, z_min, z_max]` for horizontal placement.
    pub horizontal_center: [i32; 4],
    /// `[x_min, x_max, z_min, z_max]` for vertical placement.
    pub vertical_center: [i32; 4],
    /// Scale grid in halves: 2..=8 means 1.0..=4.0 step 0.5.
    pub scale_halves: (u32, u32),
    /// Height factor grid in tenths: 8..=12 means 0.8..=1.2 step 0.1.
    pub height_factor_tenths: (u32, u32),
}

impl Default for AttributeGrid {
    fn default() -> Self {
        Self {
            heading_min: -90,
            heading_max: 90,
            heading_step: 10,
            horizontal_center: [-100, 100, -30, 0],
            vertical_center: [-30, 30, -100, 0],
            scale_halves: (2, 8),
            height_factor_tenths: (8, 12),
        }
    }
}

impl AttributeGrid {
    pub fn headings(&self) -> Vec<f64> {
        (self.heading_min..=self.heading_max)
            .step_by(self.heading_step as usize)
            .map(f64::from)
            .collect()
    }

    pub fn scales(&self) -> Vec<f64> {
        (self.scale_halves.0..=self.scale_halves.1).map(|h| f64::from(h) / 2.0).collect()
    }

    /// Height factors, optionally shifted up by `boost_tenths`.
    pub fn height_factors(&self, boost_tenths: u32) -> Vec<f64> {
        (self.height_factor_tenths.0..=self.height_factor_tenths.1)
            .map(|t| f64::from(t + boost_tenths) / 10.0)
            .collect()
    }

    pub fn center_range(&self, placement: Placement) -> [i32; 4] {
        match placement {
            Placement::Horizontal => self.horizontal_center,
            Placement::Vertical => self.vertical_center,
        }
    }

    pub fn contains_heading(&self, heading: f64) -> bool {
        heading.fract() == 0.0
            && heading >= f64::from(self.heading_min)
            && heading <= f64::from(self.heading_max)
            && (heading as i32 - self.heading_min) % self.heading_step == 0
    }

    pub fn contains_scale(&self, scale: f64) -> bool {
        self.scales().contains(&scale)
    }

    pub fn contains_height_factor(&self, factor: f64, boost_tenths: u32) -> bool {
        self.height_factors(boost_tenths).contains(&factor)
    }

    /// Integer-step centre inside the placement's range.
    pub fn contains_center(&self, placement: Placement, x: f64, z: f64) -> bool {
        let [x0, x1, z0, z1] = self.center_range(placement);
        x.fract() == 0.0
            && z.fract() == 0.0
            && x >= f64::from(x0)
            && x <= f64::from(x1)
            && z >= f64::from(z0)
            && z <= f64::from(z1)
    }

    /// Full grid membership of a first (anchor) car.
    pub fn contains_car(&self, car: &CarSpec) -> bool {
        self.contains_heading(car.pose.heading_deg)
            && self.contains_center(car.placement, car.pose.center_x, car.pose.center_z)
            && self.contains_height_factor(car.height_factor, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarSpec {
    pub car_type: CarType,
    pub color: CarColor,
    pub pose: PoseOnGround,
    pub height_factor: f64,
    pub placement: Placement,
}

/// Full BEV description of one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub id: String,
    pub cars: Vec<CarSpec>,
    pub background: Background,
    /// Resolution reduction factor applied to the final image.
    pub scale: f64,
    pub seeds: Vec<u64>,
    pub prompt_template: String,
}

#[derive(Serialize, Deserialize)]
struct SceneDocument {
    schema: String,
    #[serde(flatten)]
    scene: SceneConfig,
}

#[derive(Serialize)]
struct SceneDocumentRef<'a> {
    schema: &'static str,
    #[serde(flatten)]
    scene: &'a SceneConfig,
}

impl SceneConfig {
    pub fn prompt(&self) -> String {
        self.prompt_template.replace("{background}", self.background.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        if self.cars.is_empty() || self.cars.len() > 3 {
            return Err(SceneError::Invalid(format!("expected 1..=3 cars, found {}", self.cars.len())));
        }
        if self.seeds.is_empty() {
            return Err(SceneError::Invalid("seed list is empty".into()));
        }
        if !(self.scale >= 1.0 && self.scale <= 4.0 && (self.scale * 2.0).fract() == 0.0) {
            return Err(SceneError::Invalid(format!("scale {} is not on the 0.5 grid in [1, 4]", self.scale)));
        }
        for (i, car) in self.cars.iter().enumerate() {
            let p = &car.pose;
            if !(p.center_x.is_finite() && p.center_z.is_finite()) {
                return Err(SceneError::Invalid(format!("car {i}: non-finite centre")));
            }
            if !(p.heading_deg > -180.0 && p.heading_deg <= 180.0) {
                return Err(SceneError::Invalid(format!("car {i}: heading {} outside (-180, 180]", p.heading_deg)));
            }
            if !(p.original_height.is_finite() && p.original_height > 0.0) {
                return Err(SceneError::Invalid(format!("car {i}: original height must be > 0")));
            }
            if !(car.height_factor.is_finite() && car.height_factor > 0.0) {
                return Err(SceneError::Invalid(format!("car {i}: height factor must be > 0")));
            }
        }
        Ok(())
    }

    /// Canonical `scene/v1` text form.
    pub fn to_document(&self) -> String {
        let doc = SceneDocumentRef { schema: SCENE_SCHEMA, scene: self };
        let mut out = serde_json::to_string_pretty(&doc).expect("scene serialization is infallible");
        out.push('\n');
        out
    }

    pub fn from_document(text: &str) -> Result<Self> {
        let doc: SceneDocument = serde_json::from_str(text)?;
        if doc.schema != SCENE_SCHEMA {
            return Err(SceneError::Schema(doc.schema));
        }
        doc.scene.validate()?;
        Ok(doc.scene)
    }
}
