//! Pixel-level helpers: binary masks, polygon fill, flood fill and the PNG/base64 codec
//! shared by the pipeline and the wire protocol.

use std::collections::VecDeque;
use std::io::Cursor;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::scene::Rect;

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("invalid base64 payload: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("invalid PNG payload: {0}")]
    Image(#[from] image::ImageError),
    #[error("mask pixel {value} is neither 0 nor 255")]
    NotBinary { value: u8 },
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((u32, u32), (u32, u32)),
}

pub type Result<T> = std::result::Result<T, RasterError>;

/// Box in pixel coordinates, `x` to the right and `y` down, edges in continuous
/// pixel units (pixel `i` spans `[i, i + 1)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl PixelBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn width(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y_max - self.y_min).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &PixelBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn clip(&self, width: u32, height: u32) -> Option<PixelBox> {
        let b = PixelBox::new(
            self.x_min.max(0.0),
            self.y_min.max(0.0),
            self.x_max.min(f64::from(width)),
            self.y_max.min(f64::from(height)),
        );
        (b.x_min < b.x_max && b.y_min < b.y_max).then_some(b)
    }

    pub fn scaled(&self, factor: f64) -> PixelBox {
        PixelBox::new(self.x_min * factor, self.y_min * factor, self.x_max * factor, self.y_max * factor)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn from_array([x0, y0, x1, y1]: [f64; 4]) -> Self {
        Self::new(x0, y0, x1, y1)
    }
}

/// Maps image-plane coordinates (origin at the principal point, `v` up) onto a
/// `width x height` raster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn to_pixel(&self, u: f64, v: f64) -> (f64, f64) {
        (f64::from(self.width) / 2.0 + u, f64::from(self.height) / 2.0 - v)
    }

    pub fn rect_to_box(&self, r: &Rect) -> PixelBox {
        let (x0, y1) = self.to_pixel(r.u_min, r.v_min);
        let (x1, y0) = self.to_pixel(r.u_max, r.v_max);
        PixelBox::new(x0, y0, x1, y1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; (width * height) as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn idx(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.idx(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.idx(x, y);
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }

    fn check_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.dimensions() != other.dimensions() {
            return Err(RasterError::ShapeMismatch(self.dimensions(), other.dimensions()));
        }
        Ok(())
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_shape(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        Ok(BinaryMask { bits, ..*self })
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_shape(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect();
        Ok(BinaryMask { bits, ..*self })
    }

    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_shape(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a && !*b).collect();
        Ok(BinaryMask { bits, ..*self })
    }

    pub fn union_in_place(&mut self, other: &BinaryMask) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    /// Tight bounding box of the set pixels as `(x_min, y_min, x_max, y_max)`, inclusive.
    pub fn bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let mut acc: Option<(u32, u32, u32, u32)> = None;
        for (x, y) in self.iter_set() {
            acc = Some(match acc {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        acc
    }

    pub fn bounding_box(&self) -> Option<PixelBox> {
        self.bounds()
            .map(|(x0, y0, x1, y1)| PixelBox::new(f64::from(x0), f64::from(y0), f64::from(x1 + 1), f64::from(y1 + 1)))
    }

    /// Mean position of the set pixels' centres.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (x, y) in self.iter_set() {
            sx += f64::from(x) + 0.5;
            sy += f64::from(y) + 0.5;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Set pixel closest to the centroid, so that a point prompt always lands
    /// inside the mask even for non-convex shapes.
    pub fn interior_point(&self) -> Option<(u32, u32)> {
        let (cx, cy) = self.centroid()?;
        let (px, py) = (cx.floor() as u32, cy.floor() as u32);
        if px < self.width && py < self.height && self.get(px, py) {
            return Some((px, py));
        }
        self.iter_set().min_by(|a, b| {
            let da = (f64::from(a.0) + 0.5 - cx).powi(2) + (f64::from(a.1) + 0.5 - cy).powi(2);
            let db = (f64::from(b.0) + 0.5 - cx).powi(2) + (f64::from(b.1) + 0.5 - cy).powi(2);
            da.total_cmp(&db)
        })
    }

    /// Sets every pixel whose centre lies inside the box.
    pub fn fill_box(&mut self, b: &PixelBox) {
        let Some((x0, x1)) = center_span(b.x_min, b.x_max, self.width) else { return };
        let Some((y0, y1)) = center_span(b.y_min, b.y_max, self.height) else { return };
        for y in y0..y1 {
            for x in x0..x1 {
                self.set(x, y, true);
            }
        }
    }

    /// Even-odd scanline fill at pixel centres.
    pub fn fill_polygon(&mut self, points: &[(f64, f64)]) {
        if points.len() < 3 {
            return;
        }
        let mut xs = Vec::new();
        for y in 0..self.height {
            let yc = f64::from(y) + 0.5;
            xs.clear();
            for i in 0..points.len() {
                let (ax, ay) = points[i];
                let (bx, by) = points[(i + 1) % points.len()];
                if (ay <= yc) != (by <= yc) {
                    xs.push(ax + (yc - ay) / (by - ay) * (bx - ax));
                }
            }
            xs.sort_by(f64::total_cmp);
            for pair in xs.chunks_exact(2) {
                if let Some((x0, x1)) = center_span(pair[0], pair[1], self.width) {
                    for x in x0..x1 {
                        self.set(x, y, true);
                    }
                }
            }
        }
    }

    /// 4-connected components as separate masks, in scan order of their first pixel.
    pub fn components(&self) -> Vec<BinaryMask> {
        let mut seen = vec![false; self.bits.len()];
        let mut out = Vec::new();
        for start in 0..self.bits.len() {
            if !self.bits[start] || seen[start] {
                continue;
            }
            let mut comp = BinaryMask::new(self.width, self.height);
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(i) = queue.pop_front() {
                comp.bits[i] = true;
                let (x, y) = (i as u32 % self.width, i as u32 / self.width);
                for (nx, ny) in neighbours(x, y, self.width, self.height) {
                    let j = self.idx(nx, ny);
                    if self.bits[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| Luma([if self.get(x, y) { 255 } else { 0 }]))
    }

    pub fn from_gray(img: &GrayImage) -> Result<Self> {
        let mut bits = Vec::with_capacity(img.len());
        for &value in img.as_raw() {
            match value {
                0 => bits.push(false),
                255 => bits.push(true),
                value => return Err(RasterError::NotBinary { value }),
            }
        }
        Ok(Self { width: img.width(), height: img.height(), bits })
    }

    /// Mask of pixels whose alpha is at least half opaque.
    pub fn from_alpha(alpha: &GrayImage) -> Self {
        let bits = alpha.as_raw().iter().map(|&a| a >= 128).collect();
        Self { width: alpha.width(), height: alpha.height(), bits }
    }
}

/// Pixel index range `[lo, hi)` whose centres fall in `[a, b)`, clipped to `[0, n)`.
fn center_span(a: f64, b: f64, n: u32) -> Option<(u32, u32)> {
    let lo = (a - 0.5).ceil().max(0.0);
    let hi = (b - 0.5).ceil().min(f64::from(n));
    (lo < hi).then_some((lo as u32, hi as u32))
}

fn neighbours(x: u32, y: u32, w: u32, h: u32) -> impl Iterator<Item = (u32, u32)> {
    let cand = [
        (x.checked_sub(1), Some(y)),
        ((x + 1 < w).then_some(x + 1), Some(y)),
        (Some(x), y.checked_sub(1)),
        (Some(x), (y + 1 < h).then_some(y + 1)),
    ];
    cand.into_iter().filter_map(|(a, b)| Some((a?, b?)))
}

pub fn colors_close(a: Rgb<u8>, b: Rgb<u8>, tolerance: u8) -> bool {
    a.0.iter().zip(b.0.iter()).all(|(x, y)| x.abs_diff(*y) <= tolerance)
}

/// 4-connected region of pixels within `tolerance` of the seed colour on every channel.
pub fn flood_fill(img: &RgbImage, seed: (u32, u32), tolerance: u8) -> BinaryMask {
    let (w, h) = img.dimensions();
    let mut mask = BinaryMask::new(w, h);
    if seed.0 >= w || seed.1 >= h {
        return mask;
    }
    let target = *img.get_pixel(seed.0, seed.1);
    let mut queue = VecDeque::from([seed]);
    mask.set(seed.0, seed.1, true);
    while let Some((x, y)) = queue.pop_front() {
        for (nx, ny) in neighbours(x, y, w, h) {
            if !mask.get(nx, ny) && colors_close(*img.get_pixel(nx, ny), target, tolerance) {
                mask.set(nx, ny, true);
                queue.push_back((nx, ny));
            }
        }
    }
    mask
}

pub fn encode_png_rgb(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn encode_png_gray(img: &GrayImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn rgb_to_b64(img: &RgbImage) -> String {
    B64.encode(encode_png_rgb(img))
}

pub fn gray_to_b64(img: &GrayImage) -> String {
    B64.encode(encode_png_gray(img))
}

pub fn mask_to_b64(mask: &BinaryMask) -> String {
    gray_to_b64(&mask.to_gray())
}

pub fn rgb_from_b64(data: &str) -> Result<RgbImage> {
    let bytes = B64.decode(data)?;
    Ok(image::load_from_memory_with_format(&bytes, ImageFormat::Png)?.to_rgb8())
}

pub fn gray_from_b64(data: &str) -> Result<GrayImage> {
    let bytes = B64.decode(data)?;
    Ok(image::load_from_memory_with_format(&bytes, ImageFormat::Png)?.to_luma8())
}

pub fn mask_from_b64(data: &str) -> Result<BinaryMask> {
    BinaryMask::from_gray(&gray_from_b64(data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_fill_uses_pixel_centres() {
        let mut m = BinaryMask::new(10, 10);
        m.fill_box(&PixelBox::new(1.4, 2.0, 4.6, 3.0));
        // centres 1.5 .. 4.5 on x, 2.5 on y
        assert_eq!(m.count(), 4);
        assert_eq!(m.bounds(), Some((1, 2, 4, 2)));
    }

    #[test]
    fn polygon_fill_matches_box_fill() {
        let b = PixelBox::new(2.2, 1.7, 8.9, 6.1);
        let mut a = BinaryMask::new(12, 9);
        a.fill_box(&b);
        let mut p = BinaryMask::new(12, 9);
        p.fill_polygon(&[(b.x_min, b.y_min), (b.x_max, b.y_min), (b.x_max, b.y_max), (b.x_min, b.y_max)]);
        assert_eq!(a, p);
    }

    #[test]
    fn triangle_area_close_to_geometry() {
        let mut m = BinaryMask::new(200, 200);
        m.fill_polygon(&[(10.0, 10.0), (190.0, 20.0), (60.0, 180.0)]);
        let exact = 0.5 * ((190.0 - 10.0) * (180.0 - 10.0) - (60.0 - 10.0) * (20.0 - 10.0f64)).abs();
        assert!((m.count() as f64 - exact).abs() / exact < 0.01);
    }

    #[test]
    fn flood_fill_respects_tolerance_and_connectivity() {
        let mut img = RgbImage::from_pixel(6, 4, Rgb([0, 0, 0]));
        for x in 0..3 {
            img.put_pixel(x, 1, Rgb([100, 100, 100]));
        }
        img.put_pixel(1, 2, Rgb([107, 93, 100]));
        img.put_pixel(2, 2, Rgb([109, 100, 100]));
        // diagonal neighbour is not 4-connected
        img.put_pixel(3, 0, Rgb([100, 100, 100]));
        let m = flood_fill(&img, (0, 1), 8);
        assert_eq!(m.count(), 4);
        assert!(m.get(1, 2) && !m.get(2, 2) && !m.get(3, 0));
    }

    #[test]
    fn components_split_disjoint_blobs() {
        let mut m = BinaryMask::new(8, 8);
        m.fill_box(&PixelBox::new(0.0, 0.0, 2.0, 2.0));
        m.fill_box(&PixelBox::new(4.0, 4.0, 7.0, 6.0));
        let comps = m.components();
        assert_eq!(comps.iter().map(BinaryMask::count).collect::<Vec<_>>(), vec![4, 6]);
    }

    #[test]
    fn png_round_trip() {
        let img = RgbImage::from_fn(7, 5, |x, y| Rgb([x as u8 * 30, y as u8 * 40, 9]));
        assert_eq!(rgb_from_b64(&rgb_to_b64(&img)).unwrap(), img);
        let mut m = BinaryMask::new(7, 5);
        m.fill_box(&PixelBox::new(1.0, 1.0, 3.0, 4.0));
        assert_eq!(mask_from_b64(&mask_to_b64(&m)).unwrap(), m);
        let bad = gray_to_b64(&GrayImage::from_pixel(2, 2, Luma([7])));
        assert!(matches!(mask_from_b64(&bad), Err(RasterError::NotBinary { value: 7 })));
    }

    #[test]
    fn interior_point_of_ring_is_inside() {
        let mut m = BinaryMask::new(20, 20);
        m.fill_box(&PixelBox::new(2.0, 2.0, 18.0, 18.0));
        let hole = {
            let mut h = BinaryMask::new(20, 20);
            h.fill_box(&PixelBox::new(5.0, 5.0, 15.0, 15.0));
            h
        };
        let ring = m.difference(&hole).unwrap();
        let (x, y) = ring.interior_point().unwrap();
        assert!(ring.get(x, y));
    }

    #[test]
    fn canvas_maps_v_up_to_y_down() {
        let c = Canvas::new(512, 512);
        assert_eq!(c.to_pixel(0.0, 0.0), (256.0, 256.0));
        let b = c.rect_to_box(&Rect::new(-10.0, -20.0, 10.0, 5.0));
        assert_eq!(b, PixelBox::new(246.0, 251.0, 266.0, 276.0));
    }
}
