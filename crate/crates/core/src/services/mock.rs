//! Deterministic stand-ins for the generative and perception models.
//!
//! Every mock is a pure function of its request and configuration. Colours come
//! from a fixed palette whose entries are far enough apart that the flood-fill
//! segmenter separates cars, road and background.

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    check_render_query, Cutout, DetectQuery, Detector, OutpaintQuery, Outpainter, RenderQuery, Renderer, Result,
    Segmenter, ServiceError, TestOracle, Vqa, VqaQuery, FLAG_ROAD_REMOVED,
};
use crate::metrics::{nms, Detection};
use crate::raster::{colors_close, flood_fill, BinaryMask, PixelBox};
use crate::scene::{AspectRatios, Background, CarColor, CarType};

pub const ROAD_RGB: Rgb<u8> = Rgb([84, 84, 92]);
/// Maximum per-channel offset of the background texture.
pub const DITHER: u8 = 3;
pub const SEGMENT_TOLERANCE: u8 = 8;

pub fn car_rgb(color: CarColor) -> Rgb<u8> {
    Rgb(match color {
        CarColor::White => [246, 246, 246],
        CarColor::Black => [22, 22, 26],
        CarColor::Grey => [136, 136, 140],
        CarColor::Yellow => [232, 204, 30],
        CarColor::Red => [200, 32, 36],
        CarColor::Blue => [36, 70, 210],
        CarColor::Green => [40, 170, 70],
        CarColor::Brown => [120, 72, 36],
        CarColor::Pink => [240, 140, 190],
        CarColor::Orange => [245, 128, 20],
        CarColor::Purple => [120, 40, 160],
    })
}

pub fn background_rgb(bg: Background) -> Rgb<u8> {
    Rgb(match bg {
        Background::Forest => [30, 96, 40],
        Background::Beach => [222, 200, 150],
        Background::City => [160, 150, 176],
        Background::SnowyStreet => [212, 226, 250],
        Background::Highway => [176, 164, 120],
        Background::Lake => [60, 116, 176],
    })
}

/// Background named in an outpainting prompt, if any.
pub fn background_from_prompt(prompt: &str) -> Option<Background> {
    Background::ALL.iter().copied().find(|b| prompt.contains(b.as_str()))
}

/// The palette colour `color` is recoloured to by [`OutpaintMode::Recolor`].
pub fn recolor_target(rgb: Rgb<u8>) -> Rgb<u8> {
    let all = CarColor::ALL;
    match all.iter().position(|&c| car_rgb(c) == rgb) {
        Some(i) => car_rgb(all[(i + 1) % all.len()]),
        None => Rgb(rgb.0.map(|c| 255 - c)),
    }
}

fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

fn rng_from(parts: &[&[u8]]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(parts))
}

/// Cheap per-pixel hash used for texture dithering.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws each car as a flat rectangle in its colour; width follows the
/// aspect-ratio table at the requested azimuth.
#[derive(Debug, Clone, Default)]
pub struct MockRenderer {
    pub aspect: AspectRatios,
}

impl Renderer for MockRenderer {
    fn render(&self, q: &RenderQuery) -> Result<Cutout> {
        check_render_query(q)?;
        let w = ((f64::from(q.height_px) * self.aspect.ratio(q.car_type, q.azimuth_deg)).round() as u32).max(1);
        let h = q.height_px;
        Ok(Cutout { image: RgbImage::from_pixel(w, h, car_rgb(q.color)), alpha: GrayImage::from_pixel(w, h, Luma([255])) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutpaintMode {
    /// Keeps object pixels exactly.
    Faithful,
    /// Grows every object blob by the factor about its box centre.
    Dilate(f64),
    /// Swaps object colours for the next palette colour.
    Recolor,
}

#[derive(Debug, Clone)]
pub struct MockOutpainter {
    pub mode: OutpaintMode,
    /// Skip painting the road, for corrupted-road fixtures.
    pub drop_road: bool,
}

impl MockOutpainter {
    pub fn new(mode: OutpaintMode) -> Self {
        Self { mode, drop_road: false }
    }
}

impl Outpainter for MockOutpainter {
    fn outpaint(&self, q: &OutpaintQuery<'_>) -> Result<RgbImage> {
        let dims = q.image.dimensions();
        if q.object_mask.dimensions() != dims || q.road_mask.dimensions() != dims {
            return Err(ServiceError::Protocol("mask and image sizes differ".into()));
        }
        let bg = match background_from_prompt(q.prompt) {
            Some(b) => background_rgb(b),
            None => {
                let d = digest(&[q.prompt.as_bytes()]);
                Rgb([d[0], d[1], d[2]])
            }
        };
        let tex = u64::from_le_bytes(digest(&[b"texture", &q.seed.to_le_bytes()])[..8].try_into().unwrap());
        let mut out = q.image.clone();
        for (x, y, p) in out.enumerate_pixels_mut() {
            if q.object_mask.get(x, y) {
                if self.mode == OutpaintMode::Recolor {
                    *p = recolor_target(*p);
                }
                continue;
            }
            if q.road_mask.get(x, y) && !self.drop_road {
                *p = ROAD_RGB;
                continue;
            }
            let r = mix(tex ^ (u64::from(y) << 32 | u64::from(x)));
            let off = (r % (2 * u64::from(DITHER) + 1)) as i16 - i16::from(DITHER);
            *p = Rgb(bg.0.map(|c| (i16::from(c) + off).clamp(0, 255) as u8));
        }
        if let OutpaintMode::Dilate(factor) = self.mode {
            dilate_objects(&mut out, q.image, q.object_mask, factor);
        }
        Ok(out)
    }
}

fn dilate_objects(out: &mut RgbImage, src: &RgbImage, mask: &BinaryMask, factor: f64) {
    let (w, h) = out.dimensions();
    for comp in mask.components() {
        let Some(b) = comp.bounding_box() else { continue };
        let (cx, cy) = ((b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0);
        let grown = PixelBox::new(
            cx - (cx - b.x_min) * factor,
            cy - (cy - b.y_min) * factor,
            cx + (b.x_max - cx) * factor,
            cy + (b.y_max - cy) * factor,
        );
        let Some(g) = grown.clip(w, h) else { continue };
        for y in g.y_min.floor() as u32..g.y_max.ceil() as u32 {
            for x in g.x_min.floor() as u32..g.x_max.ceil() as u32 {
                if mask.get(x, y) {
                    continue;
                }
                let sx = cx + (f64::from(x) + 0.5 - cx) / factor;
                let sy = cy + (f64::from(y) + 0.5 - cy) / factor;
                if sx < 0.0 || sy < 0.0 || sx >= f64::from(w) || sy >= f64::from(h) {
                    continue;
                }
                let (sx, sy) = (sx as u32, sy as u32);
                if comp.get(sx, sy) {
                    out.put_pixel(x, y, *src.get_pixel(sx, sy));
                }
            }
        }
    }
}

/// Flood fill around the prompt point; road and background colours yield no mask.
#[derive(Debug, Clone)]
pub struct MockSegmenter {
    pub tolerance: u8,
}

impl Default for MockSegmenter {
    fn default() -> Self {
        Self { tolerance: SEGMENT_TOLERANCE }
    }
}

impl Segmenter for MockSegmenter {
    fn segment(&self, image: &RgbImage, point: (u32, u32)) -> Result<BinaryMask> {
        let (w, h) = image.dimensions();
        if point.0 >= w || point.1 >= h {
            return Err(ServiceError::Range(format!("point {point:?} outside {w}x{h} image")));
        }
        let seed = *image.get_pixel(point.0, point.1);
        let sentinel = std::iter::once(ROAD_RGB).chain(Background::ALL.iter().map(|&b| background_rgb(b)));
        if sentinel.into_iter().any(|c| colors_close(seed, c, DITHER)) {
            return Err(ServiceError::EmptyMask);
        }
        Ok(flood_fill(image, point, self.tolerance))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulePredicate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub car_type: Option<CarType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<CarColor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<Background>,
    /// Strict lower bound on the car's occlusion rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occlusion_above: Option<f64>,
    /// Inclusive range of `|azimuth|` in degrees.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_azimuth: Option<[f64; 2]>,
}

impl RulePredicate {
    pub fn matches(&self, obj: &super::OracleObject, background: Background) -> bool {
        self.car_type.is_none_or(|t| t == obj.car_type)
            && self.color.is_none_or(|c| c == obj.color)
            && self.background.is_none_or(|b| b == background)
            && self.occlusion_above.is_none_or(|t| obj.occlusion_rate > t)
            && self.abs_azimuth.is_none_or(|[lo, hi]| (lo..=hi).contains(&obj.azimuth_deg.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleAction {
    Confidence(f64),
    ClassFlip(String),
    Suppress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRule {
    pub when: RulePredicate,
    pub then: RuleAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockDetectorProfile {
    pub name: String,
    pub label: String,
    pub base_confidence: Vec<(CarType, f64)>,
    pub default_confidence: f64,
    /// Knots `(occlusion rate, multiplier)` of a piecewise-linear curve, ascending.
    pub occlusion_curve: Vec<(f64, f64)>,
    pub rules: Vec<PlantedRule>,
    pub confidence_sigma: f64,
    /// Box jitter in pixels.
    pub box_sigma: f64,
    /// Extra near-duplicate proposals per car, removed again by NMS.
    pub duplicates: u32,
    pub seed: u64,
}

impl Default for MockDetectorProfile {
    fn default() -> Self {
        Self {
            name: "mock-default".into(),
            label: "car".into(),
            base_confidence: vec![
                (CarType::Sedan, 0.92),
                (CarType::Suv, 0.9),
                (CarType::CoupeCar, 0.88),
                (CarType::SportsCar, 0.86),
                (CarType::SmartCar, 0.84),
            ],
            default_confidence: 0.9,
            occlusion_curve: vec![(0.0, 1.0), (0.5, 0.9), (1.0, 0.7)],
            rules: Vec::new(),
            confidence_sigma: 0.03,
            box_sigma: 1.0,
            duplicates: 1,
            seed: 0,
        }
    }
}

impl MockDetectorProfile {
    /// Confidence 1, exact boxes, no rules.
    pub fn identity() -> Self {
        Self {
            name: "mock-identity".into(),
            base_confidence: Vec::new(),
            default_confidence: 1.0,
            occlusion_curve: Vec::new(),
            confidence_sigma: 0.0,
            box_sigma: 0.0,
            duplicates: 0,
            ..Self::default()
        }
    }

    /// Fires with confidence 0 on everything.
    pub fn null() -> Self {
        Self { name: "mock-null".into(), default_confidence: 0.0, ..Self::identity() }
    }

    /// Same base for every type, no occlusion effect, only noise.
    pub fn uniform() -> Self {
        Self {
            name: "mock-uniform".into(),
            base_confidence: Vec::new(),
            default_confidence: 0.9,
            occlusion_curve: Vec::new(),
            ..Self::default()
        }
    }

    /// Uniform profile plus one planted failure: occluded sports cars on snowy streets.
    pub fn planted() -> Self {
        Self {
            name: "mock-planted".into(),
            rules: vec![PlantedRule {
                when: RulePredicate {
                    car_type: Some(CarType::SportsCar),
                    background: Some(Background::SnowyStreet),
                    occlusion_above: Some(0.4),
                    ..RulePredicate::default()
                },
                then: RuleAction::Confidence(0.05),
            }],
            ..Self::uniform()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::default()),
            "identity" => Some(Self::identity()),
            "null" => Some(Self::null()),
            "uniform" => Some(Self::uniform()),
            "planted" => Some(Self::planted()),
            _ => None,
        }
    }

    pub fn base(&self, t: CarType) -> f64 {
        self.base_confidence.iter().find(|(k, _)| *k == t).map_or(self.default_confidence, |&(_, v)| v)
    }

    pub fn occlusion_factor(&self, occlusion: f64) -> f64 {
        let c = &self.occlusion_curve;
        match c.len() {
            0 => 1.0,
            _ if occlusion <= c[0].0 => c[0].1,
            _ if occlusion >= c[c.len() - 1].0 => c[c.len() - 1].1,
            _ => {
                let i = c.windows(2).position(|w| occlusion <= w[1].0).unwrap_or(c.len() - 2);
                let ((x0, y0), (x1, y1)) = (c[i], c[i + 1]);
                if x1 == x0 {
                    y1
                } else {
                    y0 + (y1 - y0) * (occlusion - x0) / (x1 - x0)
                }
            }
        }
    }
}

/// Emits one box per visible car from the request's oracle, shaped by a profile.
#[derive(Debug, Clone)]
pub struct MockDetector {
    pub profile: MockDetectorProfile,
}

impl MockDetector {
    pub fn new(profile: MockDetectorProfile) -> Self {
        Self { profile }
    }
}

impl Detector for MockDetector {
    fn detect(&self, q: &DetectQuery<'_>) -> Result<Vec<Detection>> {
        if !(q.nms_iou > 0.0 && q.nms_iou <= 1.0) {
            return Err(ServiceError::Range(format!("nms_iou {} outside (0, 1]", q.nms_iou)));
        }
        let oracle = q.oracle.ok_or_else(|| ServiceError::Protocol("mock detector needs the _test_oracle field".into()))?;
        let p = &self.profile;
        let oracle_json = serde_json::to_vec(oracle).expect("oracle serializes");
        let mut rng = rng_from(&[
            b"detect",
            p.name.as_bytes(),
            &p.seed.to_le_bytes(),
            q.image.as_raw(),
            &q.nms_iou.to_le_bytes(),
            &oracle_json,
        ]);
        let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };

        let mut out = Vec::new();
        for obj in &oracle.objects {
            // draw the same amount of noise for every car so rules don't shift the stream
            let conf_noise = normal() * p.confidence_sigma;
            let jitter: [f64; 4] = std::array::from_fn(|_| normal() * p.box_sigma);
            let dup: Vec<[f64; 4]> =
                (0..p.duplicates).map(|_| std::array::from_fn(|_| 2.0 + normal().abs() * p.box_sigma)).collect();
            if obj.visible_box.is_none() {
                continue;
            }
            let rule = p.rules.iter().find(|r| r.when.matches(obj, oracle.background));
            let mut label = p.label.clone();
            let confidence = match rule.map(|r| &r.then) {
                Some(RuleAction::Suppress) => continue,
                Some(RuleAction::Confidence(c)) => *c,
                Some(RuleAction::ClassFlip(to)) => {
                    label = to.clone();
                    p.base(obj.car_type) * p.occlusion_factor(obj.occlusion_rate) + conf_noise
                }
                None => p.base(obj.car_type) * p.occlusion_factor(obj.occlusion_rate) + conf_noise,
            }
            .clamp(0.0, 1.0);
            let [x0, y0, x1, y1] = obj.full_box;
            let b = [x0 + jitter[0], y0 + jitter[1], x1 + jitter[2], y1 + jitter[3]];
            let primary = Detection {
                bbox: [b[0].min(b[2]), b[1].min(b[3]), b[0].max(b[2]), b[1].max(b[3])],
                label: label.clone(),
                confidence,
            };
            // proposals are suppressed per car, so one car never hides another
            let mut proposals = vec![primary.clone()];
            for d in dup {
                let [a, b, c, e] = primary.bbox;
                proposals.push(Detection {
                    bbox: [a + d[0], b + d[1], c + d[2], e + d[3]],
                    label: label.clone(),
                    confidence: confidence * 0.9,
                });
            }
            out.extend(nms(&proposals, q.nms_iou));
        }
        Ok(out)
    }
}

/// Answers the templated questions from the oracle, checked against the
/// pixels when the image is large enough to hold the scene: a car's colour is
/// the palette colour covering most of its visible box, and the road counts as
/// present only if road-coloured pixels exist.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockVqa;

/// Images at most this wide are treated as placeholders and never inspected.
const VQA_MIN_SIDE: u32 = 16;

fn parse_type_prefix(text: &str) -> Option<(CarType, &str)> {
    CarType::ALL.iter().find_map(|t| text.strip_prefix(t.as_str()).map(|rest| (*t, rest)))
}

/// Majority palette colour in the object's visible box, ignoring pixels that
/// also fall in another object's visible box when that leaves any car pixels.
fn seen_color(image: &RgbImage, oracle: &TestOracle, idx: usize) -> Option<CarColor> {
    let b = PixelBox::from_array(oracle.objects[idx].visible_box?).clip(image.width(), image.height())?;
    let others: Vec<PixelBox> = oracle
        .objects
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != idx)
        .filter_map(|(_, o)| o.visible_box.map(PixelBox::from_array))
        .collect();
    let mut exclusive = [0usize; 11];
    let mut all = [0usize; 11];
    for y in b.y_min.floor() as u32..b.y_max.ceil() as u32 {
        for x in b.x_min.floor() as u32..b.x_max.ceil() as u32 {
            let p = *image.get_pixel(x, y);
            let Some(i) = CarColor::ALL.iter().position(|&c| colors_close(p, car_rgb(c), SEGMENT_TOLERANCE)) else {
                continue;
            };
            all[i] += 1;
            let (cx, cy) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
            if !others.iter().any(|o| cx >= o.x_min && cx < o.x_max && cy >= o.y_min && cy < o.y_max) {
                exclusive[i] += 1;
            }
        }
    }
    let counts = if exclusive.iter().any(|&n| n > 0) { exclusive } else { all };
    let (i, n) = counts.iter().enumerate().max_by_key(|&(i, n)| (*n, std::cmp::Reverse(i)))?;
    (*n > 0).then(|| CarColor::ALL[i])
}

fn mock_answer(question: &str, oracle: &TestOracle, image: &RgbImage) -> Option<String> {
    let inspect = image.width() > VQA_MIN_SIDE && image.height() > VQA_MIN_SIDE;
    let road = !oracle.flags.iter().any(|f| f == FLAG_ROAD_REMOVED)
        && (!inspect || image.pixels().any(|p| colors_close(*p, ROAD_RGB, SEGMENT_TOLERANCE)));
    let yes_no = |b: bool| if b { "yes" } else { "no" }.to_string();
    let color_of = |i: usize| {
        let o = &oracle.objects[i];
        if inspect { seen_color(image, oracle, i).unwrap_or(o.color) } else { o.color }
    };
    let first_of = |t: CarType| oracle.objects.iter().position(|o| o.car_type == t);
    let q = question.strip_suffix('?')?;
    if q == "is there an asphalted road" {
        return Some(yes_no(road));
    }
    if q == "what type of path is this" {
        return Some(if road { "asphalted road" } else { "grass" }.into());
    }
    if let Some(rest) = q.strip_prefix("is there a ") {
        let t: CarType = rest.parse().ok()?;
        return Some(yes_no(first_of(t).is_some()));
    }
    if let Some(rest) = q.strip_prefix("what color is the ") {
        let t: CarType = rest.parse().ok()?;
        return first_of(t).map(|i| color_of(i).to_string());
    }
    if let Some(rest) = q.strip_prefix("is the ") {
        let (t, color) = parse_type_prefix(rest)?;
        let color: CarColor = color.trim_start().parse().ok()?;
        return Some(yes_no((0..oracle.objects.len()).any(|i| oracle.objects[i].car_type == t && color_of(i) == color)));
    }
    if q.starts_with("are the ") && q.ends_with(" driving") {
        return Some("yes".into());
    }
    None
}

impl Vqa for MockVqa {
    fn answer(&self, q: &VqaQuery<'_>) -> Result<String> {
        if q.choices.is_empty() {
            return Err(ServiceError::Range("choices must not be empty".into()));
        }
        let guess = q.oracle.and_then(|o| mock_answer(q.question, o, q.image));
        Ok(match guess {
            Some(a) if q.choices.contains(&a) => a,
            _ => q.choices[0].clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{iou, mask_iou, tifa_questions, tifa_score};
    use crate::services::OracleObject;

    fn palette() -> Vec<Rgb<u8>> {
        let mut all: Vec<Rgb<u8>> = CarColor::ALL.iter().map(|&c| car_rgb(c)).collect();
        all.push(ROAD_RGB);
        all.extend(Background::ALL.iter().map(|&b| background_rgb(b)));
        all
    }

    #[test]
    fn palette_entries_are_separable() {
        let all = palette();
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                assert!(!colors_close(*a, *b, SEGMENT_TOLERANCE + 2 * DITHER), "{a:?} vs {b:?}");
            }
        }
    }

    fn query(az: f64, h: u32) -> RenderQuery {
        RenderQuery { azimuth_deg: az, polar_deg: 10.0, height_px: h, car_type: CarType::Sedan, color: CarColor::Red, seed: 3 }
    }

    #[test]
    fn renderer_contract() {
        let r = MockRenderer::default();
        let side = r.render(&query(0.0, 64)).unwrap();
        let front = r.render(&query(90.0, 64)).unwrap();
        assert_eq!(side, r.render(&query(0.0, 64)).unwrap());
        let tight = BinaryMask::from_alpha(&side.alpha).bounds().unwrap();
        assert_eq!(tight.3 - tight.1 + 1, 64);
        let ratio = front.image.width() as f64 / side.image.width() as f64;
        assert!((front.image.width() as f64 - side.image.width() as f64 * 1.0 / 2.4).abs() <= 1.0, "{ratio}");
        assert!(matches!(r.render(&query(-180.0, 64)), Err(ServiceError::Range(_))));
        assert!(matches!(r.render(&RenderQuery { polar_deg: 20.0, ..query(0.0, 64) }), Err(ServiceError::Range(_))));
    }

    fn fixture() -> (RgbImage, BinaryMask, BinaryMask) {
        let mut img = RgbImage::new(64, 48);
        let mut obj = BinaryMask::new(64, 48);
        obj.fill_box(&PixelBox::new(10.0, 10.0, 30.0, 20.0));
        for (x, y) in obj.iter_set() {
            img.put_pixel(x, y, car_rgb(CarColor::Blue));
        }
        let mut road = BinaryMask::new(64, 48);
        road.fill_box(&PixelBox::new(0.0, 18.0, 64.0, 48.0));
        (img, obj, road)
    }

    fn paint(mode: OutpaintMode, seed: u64) -> RgbImage {
        let (img, obj, road) = fixture();
        MockOutpainter::new(mode)
            .outpaint(&OutpaintQuery {
                image: &img,
                object_mask: &obj,
                road_mask: &road,
                prompt: "cars are driving in city, high resolution",
                seed,
                controlnet_weight: 1.0,
            })
            .unwrap()
    }

    #[test]
    fn faithful_outpaint_preserves_object_and_segments_back() {
        let (img, obj, _) = fixture();
        let out = paint(OutpaintMode::Faithful, 1);
        for (x, y) in obj.iter_set() {
            assert_eq!(out.get_pixel(x, y), img.get_pixel(x, y));
        }
        let seg = MockSegmenter::default().segment(&out, (20, 15)).unwrap();
        assert_eq!(mask_iou(&seg, &obj).unwrap(), 1.0);
        assert_eq!(paint(OutpaintMode::Faithful, 1), out);
        // only the dithered background differs across seeds
        let other = paint(OutpaintMode::Faithful, 2);
        let (_, _, road) = fixture();
        let mut differs = 0;
        for (x, y, p) in out.enumerate_pixels() {
            if p != other.get_pixel(x, y) {
                assert!(!obj.get(x, y) && !road.get(x, y));
                differs += 1;
            }
        }
        assert!(differs > 0);
        assert!(matches!(MockSegmenter::default().segment(&out, (2, 2)), Err(ServiceError::EmptyMask)));
        assert!(matches!(MockSegmenter::default().segment(&out, (2, 40)), Err(ServiceError::EmptyMask)));
    }

    #[test]
    fn dilate_and_recolor_modes() {
        let (img, obj, _) = fixture();
        let grown = paint(OutpaintMode::Dilate(1.2), 0);
        let seg = MockSegmenter::default().segment(&grown, (20, 15)).unwrap();
        let ratio = seg.count() as f64 / obj.count() as f64;
        assert!((ratio - 1.44).abs() < 0.1, "{ratio}");
        assert!(mask_iou(&seg, &obj).unwrap() < 0.84);
        for (x, y) in obj.iter_set() {
            assert_eq!(grown.get_pixel(x, y), img.get_pixel(x, y));
        }
        let re = paint(OutpaintMode::Recolor, 0);
        assert_eq!(*re.get_pixel(20, 15), car_rgb(CarColor::Green));
        let seg = MockSegmenter::default().segment(&re, (20, 15)).unwrap();
        assert_eq!(mask_iou(&seg, &obj).unwrap(), 1.0);
    }

    fn oracle(occ: f64, bg: Background, t: CarType) -> TestOracle {
        TestOracle {
            objects: vec![OracleObject {
                car_type: t,
                color: CarColor::Red,
                full_box: [10.0, 10.0, 50.0, 30.0],
                visible_box: Some([10.0, 10.0, 30.0, 30.0]),
                occlusion_rate: occ,
                azimuth_deg: 0.0,
            }],
            background: bg,
            flags: vec![],
        }
    }

    fn detect(p: MockDetectorProfile, o: &TestOracle) -> Vec<Detection> {
        let img = RgbImage::new(8, 8);
        MockDetector::new(p).detect(&DetectQuery { image: &img, nms_iou: 0.5, oracle: Some(o) }).unwrap()
    }

    #[test]
    fn detector_profiles() {
        let o = oracle(0.0, Background::City, CarType::Sedan);
        let mut p = MockDetectorProfile::identity();
        p.base_confidence = vec![(CarType::Sedan, 0.95)];
        let d = detect(p, &o);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].confidence, 0.95);
        assert_eq!(iou(&d[0].pixel_box(), &PixelBox::from_array(o.objects[0].full_box)), 1.0);
        assert_eq!(detect(MockDetectorProfile::null(), &o)[0].confidence, 0.0);

        let hit = oracle(0.5, Background::SnowyStreet, CarType::SportsCar);
        assert_eq!(detect(MockDetectorProfile::planted(), &hit)[0].confidence, 0.05);
        let miss = oracle(0.3, Background::SnowyStreet, CarType::SportsCar);
        assert!(detect(MockDetectorProfile::planted(), &miss)[0].confidence > 0.5);

        let noisy = MockDetectorProfile::default();
        let a = detect(noisy.clone(), &o);
        assert_eq!(a, detect(noisy, &o));
        // the duplicate proposal overlaps heavily and is suppressed
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn occlusion_curve_interpolates() {
        let p = MockDetectorProfile::default();
        assert_eq!(p.occlusion_factor(0.0), 1.0);
        assert!((p.occlusion_factor(0.25) - 0.95).abs() < 1e-12);
        assert!((p.occlusion_factor(0.75) - 0.8).abs() < 1e-12);
        assert_eq!(p.occlusion_factor(2.0), 0.7);
    }

    #[test]
    fn vqa_answers_from_oracle() {
        let mut o = oracle(0.0, Background::City, CarType::CoupeCar);
        o.objects.push(OracleObject { car_type: CarType::Sedan, color: CarColor::Blue, ..o.objects[0].clone() });
        let qs = tifa_questions("coupe car", "sedan", "red", "blue");
        let img = RgbImage::new(2, 2);
        let ask = |o: &TestOracle| -> Vec<String> {
            qs.iter()
                .map(|q| MockVqa.answer(&VqaQuery { image: &img, question: &q.question, choices: &q.choices, oracle: Some(o) }).unwrap())
                .collect()
        };
        assert_eq!(tifa_score(&qs, &ask(&o)), 1.0);
        o.flags.push(FLAG_ROAD_REMOVED.into());
        let answers = ask(&o);
        assert_eq!(answers[2], "no");
        assert_eq!(answers[3], "grass");
        assert!(MockVqa.answer(&VqaQuery { image: &img, question: "x?", choices: &[], oracle: None }).is_err());
    }

    #[test]
    fn vqa_looks_at_pixels_on_real_sized_images() {
        let o = oracle(0.0, Background::City, CarType::CoupeCar);
        let qs = tifa_questions("coupe car", "coupe car", "red", "red");
        let ask = |img: &RgbImage| -> Vec<String> {
            qs.iter()
                .map(|q| MockVqa.answer(&VqaQuery { image: img, question: &q.question, choices: &q.choices, oracle: Some(&o) }).unwrap())
                .collect()
        };
        let mut img = RgbImage::from_pixel(64, 64, ROAD_RGB);
        for y in 10..30 {
            for x in 10..50 {
                img.put_pixel(x, y, car_rgb(CarColor::Red));
            }
        }
        assert_eq!(tifa_score(&qs, &ask(&img)), 1.0);
        let recolored = RgbImage::from_fn(64, 64, |x, y| recolor_target(*img.get_pixel(x, y)));
        let a = ask(&recolored);
        assert_eq!(a[5], "blue");
        assert_eq!((a[2].as_str(), a[4].as_str()), ("no", "no"));
    }
}
