use serde::{Deserialize, Serialize};

use crate::raster::PixelBox;

/// One detector output. Serialises to the wire shape `{box, class, confidence}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(rename = "class")]
    pub label: String,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: PixelBox, label: impl Into<String>, confidence: f64) -> Self {
        Self { bbox: bbox.as_array(), label: label.into(), confidence }
    }

    pub fn pixel_box(&self) -> PixelBox {
        PixelBox::from_array(self.bbox)
    }

    pub fn is_valid(&self) -> bool {
        let [x0, y0, x1, y1] = self.bbox;
        self.bbox.iter().all(|v| v.is_finite()) && x0 <= x1 && y0 <= y1 && (0.0..=1.0).contains(&self.confidence)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub full: PixelBox,
    pub visible: PixelBox,
    #[serde(rename = "class")]
    pub label: String,
}

pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// IoU against whichever of the full or visible ground-truth box fits better.
pub fn effective_iou(det: &PixelBox, gt: &GroundTruthObject) -> f64 {
    iou(det, &gt.full).max(iou(det, &gt.visible))
}

/// Highest confidence among detections of `class` whose effective IoU reaches
/// `gamma`; 0 when none qualifies.
pub fn matched_confidence(dets: &[Detection], gt: &GroundTruthObject, gamma: f64, class: &str) -> f64 {
    dets.iter()
        .filter(|d| d.label == class && effective_iou(&d.pixel_box(), gt) >= gamma)
        .map(|d| d.confidence)
        .fold(0.0, f64::max)
}

/// Index of the detection to draw for a ground-truth object: highest confidence
/// among boxes with effective IoU at least 0.5, then higher IoU, then lower index.
pub fn display_box(dets: &[Detection], gt: &GroundTruthObject) -> Option<usize> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, d) in dets.iter().enumerate() {
        let e = effective_iou(&d.pixel_box(), gt);
        if e < 0.5 {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, conf, eff)) => d.confidence > conf || (d.confidence == conf && e > eff),
        };
        if better {
            best = Some((i, d.confidence, e));
        }
    }
    best.map(|(i, _, _)| i)
}

/// Greedy per-class non-maximum suppression: a box is dropped when its IoU with an
/// already kept box of the same class exceeds `threshold`.
pub fn nms(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let b = dets[i].pixel_box();
        let suppressed =
            kept.iter().any(|&k| dets[k].label == dets[i].label && iou(&dets[k].pixel_box(), &b) > threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> PixelBox {
        PixelBox::new(x0, y0, x1, y1)
    }

    #[test]
    fn iou_basics() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert_eq!(iou(&a, &bx(1.0, 0.0, 3.0, 2.0)), 1.0 / 3.0);
        assert_eq!(iou(&bx(1.0, 1.0, 1.0, 1.0), &bx(1.0, 1.0, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn occlusion_aware_match_admits_visible_fit() {
        // det == visible box (IoU 1 with it); the full box is larger
        let gt = GroundTruthObject { full: bx(0.0, 0.0, 10.0, 10.0), visible: bx(0.0, 0.0, 6.0, 10.0), label: "car".into() };
        let det = Detection::new(bx(0.0, 0.0, 6.0, 10.0), "car", 0.9);
        assert!((iou(&det.pixel_box(), &gt.full) - 0.6).abs() < 1e-12);
        assert_eq!(matched_confidence(&[det.clone()], &gt, 0.7, "car"), 0.9);
        assert_eq!(matched_confidence(&[det], &gt, 0.7, "truck"), 0.0);
        assert_eq!(matched_confidence(&[], &gt, 0.5, "car"), 0.0);
    }

    #[test]
    fn matched_confidence_takes_max() {
        let gt = GroundTruthObject { full: bx(0.0, 0.0, 4.0, 4.0), visible: bx(0.0, 0.0, 4.0, 4.0), label: "car".into() };
        let dets = vec![Detection::new(gt.full, "car", 0.3), Detection::new(gt.full, "car", 0.7)];
        assert_eq!(matched_confidence(&dets, &gt, 0.5, "car"), 0.7);
    }

    #[test]
    fn display_box_ties() {
        let gt = GroundTruthObject { full: bx(0.0, 0.0, 10.0, 10.0), visible: bx(0.0, 0.0, 10.0, 10.0), label: "car".into() };
        let dets = vec![
            Detection::new(bx(0.0, 0.0, 8.0, 10.0), "car", 0.8),
            Detection::new(bx(0.0, 0.0, 10.0, 10.0), "car", 0.8),
            Detection::new(bx(0.0, 0.0, 10.0, 10.0), "car", 0.8),
            Detection::new(bx(50.0, 50.0, 60.0, 60.0), "car", 0.99),
        ];
        assert_eq!(display_box(&dets, &gt), Some(1));
        assert_eq!(display_box(&[], &gt), None);
    }

    #[test]
    fn nms_suppresses_heavy_overlap_only() {
        let a = Detection::new(bx(0.0, 0.0, 10.0, 10.0), "car", 0.6);
        let b = Detection::new(bx(0.0, 0.0, 10.0, 9.0), "car", 0.8);
        let c = Detection::new(bx(5.0, 0.0, 15.0, 10.0), "car", 0.5);
        let d = Detection::new(bx(0.0, 0.0, 10.0, 10.0), "truck", 0.4);
        let kept = nms(&[a, b.clone(), c.clone(), d.clone()], 0.5);
        assert_eq!(kept, vec![b, c, d]);
    }
}
