use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle in image-plane units, `min <= max` on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl Rect {
    pub fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Self {
        Self { u_min, v_min, u_max, v_max }
    }

    pub fn width(&self) -> f64 {
        (self.u_max - self.u_min).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.v_max - self.v_min).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.area() <= 0.0
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let r = Rect::new(
            self.u_min.max(other.u_min),
            self.v_min.max(other.v_min),
            self.u_max.min(other.u_max),
            self.v_max.min(other.v_max),
        );
        (r.u_min < r.u_max && r.v_min < r.v_max).then_some(r)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.u_min && u <= self.u_max && v >= self.v_min && v <= self.v_max
    }

    /// Corners in counter-clockwise order starting at `(u_min, v_min)`.
    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.u_min, self.v_min),
            (self.u_max, self.v_min),
            (self.u_max, self.v_max),
            (self.u_min, self.v_max),
        ]
    }

    /// `self` minus `cut` as at most four disjoint rectangles.
    fn subtract(&self, cut: &Rect) -> Vec<Rect> {
        let Some(i) = self.intersection(cut) else {
            return vec![*self];
        };
        let mut out = Vec::with_capacity(4);
        // full-width bands below and above the cut, then the side pieces between them
        if i.v_min > self.v_min {
            out.push(Rect::new(self.u_min, self.v_min, self.u_max, i.v_min));
        }
        if i.v_max < self.v_max {
            out.push(Rect::new(self.u_min, i.v_max, self.u_max, self.v_max));
        }
        if i.u_min > self.u_min {
            out.push(Rect::new(self.u_min, i.v_min, i.u_min, i.v_max));
        }
        if i.u_max < self.u_max {
            out.push(Rect::new(i.u_max, i.v_min, self.u_max, i.v_max));
        }
        out
    }
}

/// A union of pairwise-disjoint rectangles.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Region {
    pub rects: Vec<Rect>,
}

impl Region {
    pub fn from_rect(rect: Rect) -> Self {
        let rects = if rect.is_empty() { Vec::new() } else { vec![rect] };
        Self { rects }
    }

    pub fn area(&self) -> f64 {
        self.rects.iter().map(Rect::area).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        self.rects.iter().any(|r| r.contains(u, v))
    }

    pub fn subtract(&self, cut: &Rect) -> Region {
        let rects = self.rects.iter().flat_map(|r| r.subtract(cut)).filter(|r| !r.is_empty()).collect();
        Region { rects }
    }

    /// Tight bounding rectangle, `None` for an empty region.
    pub fn bounds(&self) -> Option<Rect> {
        let mut it = self.rects.iter();
        let first = *it.next()?;
        Some(it.fold(first, |acc, r| {
            Rect::new(acc.u_min.min(r.u_min), acc.v_min.min(r.v_min), acc.u_max.max(r.u_max), acc.v_max.max(r.v_max))
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raster_area(pred: impl Fn(f64, f64) -> bool, step: f64) -> f64 {
        // cell-centre sampling over [-10, 10]^2
        let n = (20.0 / step) as i32;
        let mut hits = 0usize;
        for i in 0..n {
            for j in 0..n {
                let u = -10.0 + (i as f64 + 0.5) * step;
                let v = -10.0 + (j as f64 + 0.5) * step;
                if pred(u, v) {
                    hits += 1;
                }
            }
        }
        hits as f64 * step * step
    }

    #[test]
    fn subtract_half() {
        let b = Region::from_rect(Rect::new(0.0, 0.0, 4.0, 2.0));
        let left = b.subtract(&Rect::new(-1.0, -1.0, 2.0, 5.0));
        assert_eq!(left.area(), 4.0);
        assert_eq!(left.bounds().unwrap(), Rect::new(2.0, 0.0, 4.0, 2.0));
    }

    #[test]
    fn subtract_hole_in_middle() {
        let b = Region::from_rect(Rect::new(0.0, 0.0, 4.0, 4.0));
        let r = b.subtract(&Rect::new(1.0, 1.0, 2.0, 3.0));
        assert_eq!(r.rects.len(), 4);
        assert_eq!(r.area(), 14.0);
        assert!(!r.contains(1.5, 2.0));
    }

    #[test]
    fn subtract_everything() {
        let b = Region::from_rect(Rect::new(0.0, 0.0, 1.0, 1.0));
        assert!(b.subtract(&Rect::new(-1.0, -1.0, 2.0, 2.0)).is_empty());
    }

    fn rect() -> impl Strategy<Value = Rect> {
        (-8i32..6, -8i32..6, 1i32..5, 1i32..5)
            .prop_map(|(u, v, w, h)| Rect::new(u as f64, v as f64, (u + w) as f64, (v + h) as f64))
    }

    proptest! {
        #[test]
        fn subtraction_matches_raster(base in rect(), cuts in prop::collection::vec(rect(), 0..4)) {
            let mut region = Region::from_rect(base);
            for c in &cuts {
                region = region.subtract(c);
            }
            // integer-aligned rectangles make the half-cell raster exact
            let expected = raster_area(
                |u, v| base.contains(u, v) && !cuts.iter().any(|c| c.contains(u, v)),
                0.5,
            );
            prop_assert!((region.area() - expected).abs() < 1e-9);
            // pieces stay disjoint
            for (i, a) in region.rects.iter().enumerate() {
                for b in &region.rects[i + 1..] {
                    prop_assert!(a.intersection(b).is_none());
                }
            }
        }
    }
}
