use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    AspectRatios, AttributeGrid, Background, CarColor, CarSpec, CarType, Placement, Result, RoadLayout, SceneConfig,
    SceneError, DEFAULT_PROMPT_TEMPLATE,
};
use crate::geometry::{wrap_degrees, PoseOnGround};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub grid: AttributeGrid,
    pub road: RoadLayout,
    pub aspect: AspectRatios,
    /// Unscaled car height in scene units.
    pub original_height: f64,
    pub seeds_per_scene: usize,
    pub prompt_template: String,
    /// Maximum heading deviation of a following car, degrees.
    pub heading_spread: f64,
    /// Allowed centre offsets of the second car along each axis, `[min, max]`.
    pub offset_band: (i32, i32),
    pub flip_probability: f64,
    /// Height-factor shift for three-car scenes, in tenths.
    pub three_car_size_boost: u32,
    /// Distance range of a car centre from its arm's axis in three-car scenes.
    pub lane_offset: (i32, i32),
    pub max_attempts: usize,
    /// Relative draw weights per car type; empty means uniform.
    #[serde(default)]
    pub car_type_weights: Vec<(CarType, f64)>,
    /// Relative draw weights per background; empty means uniform.
    #[serde(default)]
    pub background_weights: Vec<(Background, f64)>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            grid: AttributeGrid::default(),
            road: RoadLayout::default(),
            aspect: AspectRatios::default(),
            original_height: 24.0,
            seeds_per_scene: 9,
            prompt_template: DEFAULT_PROMPT_TEMPLATE.into(),
            heading_spread: 20.0,
            offset_band: (15, 45),
            flip_probability: 0.5,
            three_car_size_boost: 2,
            lane_offset: (10, 25),
            max_attempts: 100,
            car_type_weights: Vec::new(),
            background_weights: Vec::new(),
        }
    }
}

impl SamplerConfig {
    /// Rejects weight tables that cannot be drawn from.
    pub fn validate(&self) -> Result<()> {
        fn check<T: PartialEq>(name: &str, all: &[T], w: &[(T, f64)]) -> Result<()> {
            if w.is_empty() {
                return Ok(());
            }
            if w.iter().any(|(_, x)| !x.is_finite() || *x < 0.0) {
                return Err(SceneError::Invalid(format!("{name} weights must be finite and non-negative")));
            }
            if !all.iter().any(|a| w.iter().any(|(k, x)| k == a && *x > 0.0)) {
                return Err(SceneError::Invalid(format!("{name} weights are all zero")));
            }
            Ok(())
        }
        check("car type", CarType::ALL, &self.car_type_weights)?;
        check("background", Background::ALL, &self.background_weights)
    }
}

/// Deterministic scene sampler. One instance owns one RNG stream.
#[derive(Debug, Clone)]
pub struct SceneSampler {
    rng: ChaCha8Rng,
    config: SamplerConfig,
    next_id: u64,
}

impl SceneSampler {
    pub fn new(seed: u64, config: SamplerConfig) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), config, next_id: 0 }
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    fn pick<T: Copy>(&mut self, items: &[T]) -> T {
        *items.choose(&mut self.rng).expect("non-empty attribute list")
    }

    /// Weighted pick; falls back to a uniform pick when `weights` is empty.
    fn pick_weighted<T: Copy + PartialEq>(&mut self, items: &[T], weights: &[(T, f64)]) -> T {
        if weights.is_empty() {
            return self.pick(items);
        }
        let w: Vec<f64> = items.iter().map(|i| weights.iter().find(|(k, _)| k == i).map_or(0.0, |(_, w)| *w)).collect();
        let dist = WeightedIndex::new(&w).expect("validated weights");
        items[dist.sample(&mut self.rng)]
    }

    /// Uniform integer offset from `[-max, -min] ∪ [min, max]`.
    fn banded_offset(&mut self) -> i32 {
        let (lo, hi) = self.config.offset_band;
        let magnitude = self.rng.random_range(lo..=hi);
        if self.rng.random_bool(0.5) {
            magnitude
        } else {
            -magnitude
        }
    }

    fn car(&mut self, placement: Placement, x: f64, z: f64, heading: f64, boost: u32) -> CarSpec {
        let factors = self.config.grid.height_factors(boost);
        CarSpec {
            car_type: self.pick_weighted(CarType::ALL, &self.config.car_type_weights.clone()),
            color: self.pick(CarColor::ALL),
            pose: PoseOnGround {
                center_x: x,
                center_z: z,
                heading_deg: heading,
                original_height: self.config.original_height,
            },
            height_factor: self.pick(&factors),
            placement,
        }
    }

    fn on_road(&self, car: &CarSpec) -> bool {
        let r = self.config.aspect.ground_radius(car);
        self.config.road.contains_disc(car.pose.center_x, car.pose.center_z, r)
    }

    /// The anchor car: every attribute uniform over its grid.
    pub fn sample_primary_car(&mut self, placement: Placement) -> CarSpec {
        let headings = self.config.grid.headings();
        let heading = self.pick(&headings);
        let [x0, x1, z0, z1] = self.config.grid.center_range(placement);
        let x = f64::from(self.rng.random_range(x0..=x1));
        let z = f64::from(self.rng.random_range(z0..=z1));
        self.car(placement, x, z, heading, 0)
    }

    /// A second car near `first`: heading within the spread (optionally flipped
    /// by 180°), centre offset by the distance band along both axes.
    pub fn sample_second_car(&mut self, first: &CarSpec) -> Result<CarSpec> {
        for _ in 0..self.config.max_attempts {
            let spread = self.config.heading_spread;
            let mut heading = first.pose.heading_deg + self.rng.random_range(-spread..=spread);
            if self.rng.random_bool(self.config.flip_probability) {
                heading += 180.0;
            }
            let x = first.pose.center_x + f64::from(self.banded_offset());
            let z = first.pose.center_z + f64::from(self.banded_offset());
            let car = self.car(first.placement, x, z, wrap_degrees(heading), 0);
            if self.on_road(&car) {
                return Ok(car);
            }
        }
        Err(SceneError::OffRoad { attempts: self.config.max_attempts })
    }

    fn scene_shell(&mut self, cars: Vec<CarSpec>) -> SceneConfig {
        let id = format!("scene-{:05}", self.next_id);
        self.next_id += 1;
        let scales = self.config.grid.scales();
        SceneConfig {
            id,
            cars,
            background: self.pick_weighted(Background::ALL, &self.config.background_weights.clone()),
            scale: self.pick(&scales),
            seeds: (0..self.config.seeds_per_scene as u64).collect(),
            prompt_template: self.config.prompt_template.clone(),
        }
    }

    pub fn sample_two_car_scene(&mut self) -> Result<SceneConfig> {
        let placement = self.pick(Placement::ALL);
        let first = self.sample_primary_car(placement);
        let second = self.sample_second_car(&first)?;
        Ok(self.scene_shell(vec![first, second]))
    }

    pub fn sample_one_car_scene(&mut self) -> SceneConfig {
        let placement = self.pick(Placement::ALL);
        let car = self.sample_primary_car(placement);
        self.scene_shell(vec![car])
    }

    /// Two cars following each other in one lane and a third car driving the
    /// opposite way in the neighbouring lane of the same arm.
    pub fn sample_three_car_scene(&mut self) -> Result<SceneConfig> {
        let boost = self.config.three_car_size_boost;
        let (lane_lo, lane_hi) = self.config.lane_offset;
        let spread = self.config.heading_spread;
        let headings = self.config.grid.headings();
        for _ in 0..self.config.max_attempts {
            let placement = self.pick(Placement::ALL);
            let side = if self.rng.random_bool(0.5) { 1 } else { -1 };
            let [x0, x1, z0, z1] = self.config.grid.center_range(placement);
            let along = match placement {
                Placement::Vertical => self.rng.random_range(z0..=z1),
                Placement::Horizontal => self.rng.random_range(x0..=x1),
            };
            let lateral = [
                side * self.rng.random_range(lane_lo..=lane_hi),
                side * self.rng.random_range(lane_lo..=lane_hi),
                -side * self.rng.random_range(lane_lo..=lane_hi),
            ];
            let along2 = along + self.banded_offset();
            let band = self.config.offset_band.1;
            let along3 = along + self.rng.random_range(-band..=band);
            let heading = self.pick(&headings);
            let h2 = wrap_degrees(heading + self.rng.random_range(-spread..=spread));
            let h3 = wrap_degrees(heading + 180.0 + self.rng.random_range(-spread..=spread));

            let cars: Vec<CarSpec> = [(along, lateral[0], heading), (along2, lateral[1], h2), (along3, lateral[2], h3)]
                .into_iter()
                .map(|(a, l, h)| {
                    let (x, z) = match placement {
                        Placement::Vertical => (f64::from(l), f64::from(a)),
                        Placement::Horizontal => (f64::from(a), f64::from(l)),
                    };
                    self.car(placement, x, z, h, boost)
                })
                .collect();
            if cars.iter().all(|c| self.on_road(c)) {
                return Ok(self.scene_shell(cars));
            }
        }
        Err(SceneError::OffRoad { attempts: self.config.max_attempts })
    }

    pub fn sample_scenes(&mut self, count: usize, cars_per_scene: usize) -> Result<Vec<SceneConfig>> {
        self.config.validate()?;
        (0..count)
            .map(|_| match cars_per_scene {
                1 => Ok(self.sample_one_car_scene()),
                2 => self.sample_two_car_scene(),
                3 => self.sample_three_car_scene(),
                n => Err(SceneError::Invalid(format!("cannot sample scenes with {n} cars"))),
            })
            .collect()
    }
}
