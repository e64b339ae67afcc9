use std::collections::HashMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::metrics::{rotation_bin, rotation_bin_label, CarAttributes, SceneAttributes, ROTATION_BINS};
use crate::scene::{Background, CarColor, CarType};

/// One attribute test. Car-level conditions in a predicate must all hold for
/// the same car.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "attribute", content = "value", rename_all = "snake_case")]
pub enum Condition {
    CarType(CarType),
    Color(CarColor),
    Background(Background),
    /// Occlusion rate of at least this many tenths.
    OcclusionAtLeast(u8),
    RotationBin(u8),
}

impl Condition {
    fn holds_for_car(self, car: &CarAttributes) -> bool {
        match self {
            Condition::CarType(t) => car.car_type == t,
            Condition::Color(c) => car.color == c,
            Condition::OcclusionAtLeast(t) => car.occlusion_rate >= f64::from(t) / 10.0,
            Condition::RotationBin(b) => rotation_bin(car.azimuth_deg) == usize::from(b),
            Condition::Background(_) => true,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::CarType(t) => write!(f, "type={t}"),
            Condition::Color(c) => write!(f, "color={c}"),
            Condition::Background(b) => write!(f, "background={b}"),
            Condition::OcclusionAtLeast(t) => write!(f, "occlusion>={:.1}", f64::from(*t) / 10.0),
            Condition::RotationBin(b) => write!(f, "rotation={}", rotation_bin_label(usize::from(*b))),
        }
    }
}

/// Conjunction of conditions, at most one per attribute, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Predicate {
    pub conditions: Vec<Condition>,
}

impl Predicate {
    pub fn new(mut conditions: Vec<Condition>) -> Self {
        conditions.sort();
        conditions.dedup();
        Self { conditions }
    }

    pub fn matches(&self, scene: &SceneAttributes) -> bool {
        let mut car_level = Vec::with_capacity(self.conditions.len());
        for &c in &self.conditions {
            match c {
                Condition::Background(b) if scene.background != b => return false,
                Condition::Background(_) => {}
                other => car_level.push(other),
            }
        }
        car_level.is_empty() || scene.cars.iter().any(|car| car_level.iter().all(|c| c.holds_for_car(car)))
    }

    pub fn without(&self, i: usize) -> Predicate {
        let mut conditions = self.conditions.clone();
        conditions.remove(i);
        Predicate { conditions }
    }

    fn occlusion_threshold(&self) -> u8 {
        self.conditions
            .iter()
            .filter_map(|c| match c {
                Condition::OcclusionAtLeast(t) => Some(*t),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.conditions.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(" & "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningOptions {
    pub min_support: usize,
    pub max_depth: usize,
    /// A group is dropped when a strictly larger group it is contained in has a
    /// mean within this margin of its own.
    pub min_lift: f64,
    pub top_k: usize,
    pub exemplars: usize,
    pub counter_examples: usize,
    /// Occlusion thresholds in tenths.
    pub occlusion_levels: Vec<u8>,
}

impl Default for MiningOptions {
    fn default() -> Self {
        Self {
            min_support: 5,
            max_depth: 3,
            min_lift: 0.05,
            top_k: 10,
            exemplars: 3,
            counter_examples: 3,
            occlusion_levels: vec![2, 4, 6, 8],
        }
    }
}

impl MiningOptions {
    pub fn validate(&self) -> Result<()> {
        if self.min_support == 0 || self.max_depth == 0 || self.max_depth > 5 {
            return Err(PipelineError::Config("mining needs min_support >= 1 and depth in 1..=5".into()));
        }
        if self.occlusion_levels.iter().any(|&t| t == 0 || t > 10) {
            return Err(PipelineError::Config("occlusion levels are tenths in 1..=10".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredScene {
    pub scene_id: String,
    pub mms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterExample {
    /// The condition this scene fails while meeting all the others.
    pub violated: Condition,
    pub scene_id: String,
    pub mms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedGroup {
    pub predicate: Predicate,
    /// Other predicates selecting exactly the same scenes.
    pub aliases: Vec<Predicate>,
    pub support: usize,
    pub mean_mms: f64,
    /// Standard deviations above the mean over all scenes.
    pub z_score: f64,
    pub exemplars: Vec<ScoredScene>,
    pub counter_examples: Vec<CounterExample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMiningReport {
    pub detector: String,
    pub scenes: usize,
    pub global_mean: f64,
    /// Population standard deviation of per-scene MMS.
    pub sigma: f64,
    pub options: MiningOptions,
    pub groups: Vec<MinedGroup>,
}

impl ErrorMiningReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "detector {}: {} scenes, mean MMS {:.3}, sigma {:.3}, min support {}\n",
            self.detector, self.scenes, self.global_mean, self.sigma, self.options.min_support
        );
        for (rank, g) in self.groups.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:>2}. {}  n={} mean={:.3} z={:+.2}",
                rank + 1,
                g.predicate,
                g.support,
                g.mean_mms,
                g.z_score
            );
            for a in &g.aliases {
                let _ = writeln!(out, "      same scenes as: {a}");
            }
            let ex: Vec<String> = g.exemplars.iter().map(|e| format!("{} ({:.3})", e.scene_id, e.mms)).collect();
            let _ = writeln!(out, "      worst: {}", ex.join(", "));
            for c in &g.counter_examples {
                let _ = writeln!(out, "      counter: {} ({:.3}) fails {}", c.scene_id, c.mms, c.violated);
            }
        }
        out
    }
}

fn conditions_by_kind(opts: &MiningOptions) -> Vec<Vec<Condition>> {
    vec![
        CarType::ALL.iter().map(|&t| Condition::CarType(t)).collect(),
        CarColor::ALL.iter().map(|&c| Condition::Color(c)).collect(),
        Background::ALL.iter().map(|&b| Condition::Background(b)).collect(),
        opts.occlusion_levels.iter().map(|&t| Condition::OcclusionAtLeast(t)).collect(),
        (0..ROTATION_BINS as u8).map(Condition::RotationBin).collect(),
    ]
}

/// Depth-first enumeration; extensions of an under-supported predicate are skipped.
fn enumerate(
    scenes: &[&SceneAttributes],
    kinds: &[Vec<Condition>],
    opts: &MiningOptions,
    start_kind: usize,
    current: &mut Vec<Condition>,
    members: &[u32],
    out: &mut HashMap<Vec<u32>, Vec<Predicate>>,
) {
    for kind in start_kind..kinds.len() {
        for &c in &kinds[kind] {
            current.push(c);
            let p = Predicate::new(current.clone());
            let subset: Vec<u32> = members.iter().copied().filter(|&i| p.matches(scenes[i as usize])).collect();
            if subset.len() >= opts.min_support {
                if current.len() < opts.max_depth {
                    enumerate(scenes, kinds, opts, kind + 1, current, &subset, out);
                }
                out.entry(subset).or_default().push(p);
            }
            current.pop();
        }
    }
}

fn is_strict_superset(big: &[u32], small: &[u32]) -> bool {
    if big.len() <= small.len() {
        return false;
    }
    let mut j = 0;
    for &x in small {
        while j < big.len() && big[j] < x {
            j += 1;
        }
        if j == big.len() || big[j] != x {
            return false;
        }
    }
    true
}

/// Finds attribute conjunctions on which a detector scores worst.
///
/// `values[s]` is the detector's per-scene MMS on `scenes[s]`; scenes without
/// a value are left out.
pub fn mine_errors(detector: &str, scenes: &[SceneAttributes], values: &[Option<f64>], opts: &MiningOptions) -> Result<ErrorMiningReport> {
    opts.validate()?;
    if scenes.len() != values.len() {
        return Err(PipelineError::Config(format!("{} scenes but {} values", scenes.len(), values.len())));
    }
    let (items, scores): (Vec<&SceneAttributes>, Vec<f64>) =
        scenes.iter().zip(values).filter_map(|(s, v)| v.map(|v| (s, v))).unzip();
    let n = items.len();
    let global_mean = if n == 0 { 0.0 } else { scores.iter().sum::<f64>() / n as f64 };
    let sigma = if n == 0 { 0.0 } else { (scores.iter().map(|v| (v - global_mean).powi(2)).sum::<f64>() / n as f64).sqrt() };

    let kinds = conditions_by_kind(opts);
    let all: Vec<u32> = (0..n as u32).collect();
    let mut sets: HashMap<Vec<u32>, Vec<Predicate>> = HashMap::new();
    enumerate(&items, &kinds, opts, 0, &mut Vec::new(), &all, &mut sets);

    let mean_of = |members: &[u32]| members.iter().map(|&i| scores[i as usize]).sum::<f64>() / members.len() as f64;
    let mut candidates: Vec<(Vec<u32>, f64, Vec<Predicate>)> = sets
        .into_iter()
        .map(|(members, mut preds)| {
            // shortest description first, then the broadest occlusion band
            preds.sort_by(|a, b| {
                a.conditions
                    .len()
                    .cmp(&b.conditions.len())
                    .then(a.occlusion_threshold().cmp(&b.occlusion_threshold()))
                    .then(a.cmp(b))
            });
            let m = mean_of(&members);
            (members, m, preds)
        })
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.len().cmp(&a.0.len())).then(a.2[0].cmp(&b.2[0])));

    let kept: Vec<usize> = (0..candidates.len())
        .filter(|&i| {
            let (members, mean, _) = &candidates[i];
            !candidates.iter().any(|(big, big_mean, _)| *big_mean >= mean - opts.min_lift && is_strict_superset(big, members))
        })
        .take(opts.top_k)
        .collect();

    let groups = kept
        .into_iter()
        .map(|i| {
            let (members, mean, preds) = &candidates[i];
            let predicate = preds[0].clone();
            let mut ranked: Vec<u32> = members.clone();
            ranked.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]).then(a.cmp(&b)));
            let exemplars = ranked
                .iter()
                .take(opts.exemplars)
                .map(|&s| ScoredScene { scene_id: items[s as usize].scene_id.clone(), mms: scores[s as usize] })
                .collect();
            let mut counter: Vec<CounterExample> = Vec::new();
            for (ci, &c) in predicate.conditions.iter().enumerate() {
                let rest = predicate.without(ci);
                for (s, scene) in items.iter().enumerate() {
                    if rest.matches(scene) && !predicate.matches(scene) {
                        counter.push(CounterExample { violated: c, scene_id: scene.scene_id.clone(), mms: scores[s] });
                    }
                }
            }
            counter.sort_by(|a, b| a.mms.total_cmp(&b.mms).then(a.scene_id.cmp(&b.scene_id)));
            counter.truncate(opts.counter_examples);
            MinedGroup {
                predicate,
                aliases: preds[1..].to_vec(),
                support: members.len(),
                mean_mms: *mean,
                z_score: if sigma > 0.0 { (mean - global_mean) / sigma } else { 0.0 },
                exemplars,
                counter_examples: counter,
            }
        })
        .collect();

    Ok(ErrorMiningReport { detector: detector.to_string(), scenes: n, global_mean, sigma, options: opts.clone(), groups })
}
