use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};
use crate::raster::BinaryMask;

const WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// IoU of two equally sized masks; two empty masks count as identical.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.dimensions() != b.dimensions() {
        return Err(MetricsError::ShapeMismatch(a.dimensions(), b.dimensions()));
    }
    let inter = a.intersection(b).expect("same shape").count();
    let union = a.union(b).expect("same shape").count();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn luminance(img: &RgbImage) -> Plane {
        let data = img
            .pixels()
            .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
            .collect();
        Plane { w: img.width() as usize, h: img.height() as usize, data }
    }

    fn zip(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane { w: self.w, h: self.h, data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect() }
    }

    /// Separable valid-mode filtering with a normalized 1-D kernel.
    fn filter(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let (ow, oh) = (self.w + 1 - n, self.h + 1 - n);
        let mut rows = vec![0.0; ow * self.h];
        for y in 0..self.h {
            let line = &self.data[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                rows[y * ow + x] = k.iter().zip(&line[x..x + n]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
            }
        }
        Plane { w: ow, h: oh, data: out }
    }

    fn downsample(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let at = |dx: usize, dy: usize| self.data[(2 * y + dy) * self.w + 2 * x + dx];
                data.push((at(0, 0) + at(1, 0) + at(0, 1) + at(1, 1)) / 4.0);
            }
        }
        Plane { w, h, data }
    }
}

fn gaussian(size: usize) -> Vec<f64> {
    // keep the window's shape when it has to shrink for tiny images
    let sigma = SIGMA * size as f64 / WINDOW as f64;
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Mean contrast-structure and mean SSIM of one scale.
fn ssim_terms(x: &Plane, y: &Plane) -> (f64, f64) {
    let mut size = WINDOW.min(x.w).min(x.h);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian(size);
    let mx = x.filter(&k);
    let my = y.filter(&k);
    let sxx = x.zip(x, |a, b| a * b).filter(&k);
    let syy = y.zip(y, |a, b| a * b).filter(&k);
    let sxy = x.zip(y, |a, b| a * b).filter(&k);
    let (mut cs_sum, mut ssim_sum) = (0.0, 0.0);
    for i in 0..mx.data.len() {
        let (ux, uy) = (mx.data[i], my.data[i]);
        let vx = sxx.data[i] - ux * ux;
        let vy = syy.data[i] - uy * uy;
        let cov = sxy.data[i] - ux * uy;
        let cs = (2.0 * cov + C2) / (vx + vy + C2);
        let l = (2.0 * ux * uy + C1) / (ux * ux + uy * uy + C1);
        cs_sum += cs;
        ssim_sum += l * cs;
    }
    let n = mx.data.len() as f64;
    ((cs_sum / n).max(0.0), (ssim_sum / n).max(0.0))
}

/// Five-scale MS-SSIM on BT.601 luminance. Scales that no longer fit the image are
/// dropped and the remaining weights renormalized.
pub fn ms_ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.dimensions() != b.dimensions() {
        return Err(MetricsError::ShapeMismatch(a.dimensions(), b.dimensions()));
    }
    if a.width() == 0 || a.height() == 0 {
        return Err(MetricsError::MaskEmpty);
    }
    let (mut x, mut y) = (Plane::luminance(a), Plane::luminance(b));
    let mut terms = Vec::with_capacity(WEIGHTS.len());
    for scale in 0..WEIGHTS.len() {
        if x.w == 0 || x.h == 0 {
            break;
        }
        terms.push(ssim_terms(&x, &y));
        if scale + 1 < WEIGHTS.len() {
            x = x.downsample();
            y = y.downsample();
        }
    }
    let total: f64 = WEIGHTS[..terms.len()].iter().sum();
    let last = terms.len() - 1;
    Ok(terms
        .iter()
        .enumerate()
        .map(|(j, &(cs, ssim))| {
            let w = WEIGHTS[j] / total;
            if j == last {
                ssim.powf(w)
            } else {
                cs.powf(w)
            }
        })
        .product())
}

/// Crop to the mask's bounding box and zero every pixel outside the mask.
pub fn masked_crop(img: &RgbImage, mask: &BinaryMask) -> Result<RgbImage> {
    if img.dimensions() != mask.dimensions() {
        return Err(MetricsError::ShapeMismatch(img.dimensions(), mask.dimensions()));
    }
    let (x0, y0, x1, y1) = mask.bounds().ok_or(MetricsError::MaskEmpty)?;
    Ok(RgbImage::from_fn(x1 - x0 + 1, y1 - y0 + 1, |x, y| {
        if mask.get(x0 + x, y0 + y) {
            *img.get_pixel(x0 + x, y0 + y)
        } else {
            image::Rgb([0, 0, 0])
        }
    }))
}

pub fn ms_ssim_masked(a: &RgbImage, b: &RgbImage, mask: &BinaryMask) -> Result<f64> {
    ms_ssim(&masked_crop(a, mask)?, &masked_crop(b, mask)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2Distance {
    /// Euclidean norm over all RGB channels of the masked pixels.
    pub raw: f64,
    /// `raw / sqrt(masked pixel count)`.
    pub normalized: f64,
}

pub fn masked_l2(a: &RgbImage, b: &RgbImage, mask: &BinaryMask) -> Result<L2Distance> {
    if a.dimensions() != b.dimensions() {
        return Err(MetricsError::ShapeMismatch(a.dimensions(), b.dimensions()));
    }
    if a.dimensions() != mask.dimensions() {
        return Err(MetricsError::ShapeMismatch(a.dimensions(), mask.dimensions()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in mask.iter_set() {
        let (p, q) = (a.get_pixel(x, y), b.get_pixel(x, y));
        sum += (0..3).map(|c| (f64::from(p[c]) - f64::from(q[c])).powi(2)).sum::<f64>();
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::MaskEmpty);
    }
    let raw = sum.sqrt();
    Ok(L2Distance { raw, normalized: raw / (n as f64).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::PixelBox;
    use image::Rgb;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn textured(seed: u64, w: u32, h: u32) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (fx, fy, ph): (f64, f64, f64) = (rng.random_range(0.05..0.3), rng.random_range(0.05..0.3), rng.random_range(0.0..6.0));
        RgbImage::from_fn(w, h, |x, y| {
            let v = 128.0 + 60.0 * (fx * x as f64 + ph).sin() * (fy * y as f64).cos();
            let n: f64 = rng.random_range(-10.0..10.0);
            Rgb([(v + n) as u8, (v * 0.8) as u8, (255.0 - v) as u8])
        })
    }

    fn noisy(img: &RgbImage, sigma: f64, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, sigma).unwrap();
        let mut out = img.clone();
        for p in out.pixels_mut() {
            let e: f64 = d.sample(&mut rng);
            for c in 0..3 {
                p[c] = (f64::from(p[c]) + e).round().clamp(0.0, 255.0) as u8;
            }
        }
        out
    }

    #[test]
    fn mask_iou_cases() {
        let mut a = BinaryMask::new(10, 10);
        a.fill_box(&PixelBox::new(0.0, 0.0, 4.0, 2.0));
        let mut b = BinaryMask::new(10, 10);
        b.fill_box(&PixelBox::new(2.0, 0.0, 6.0, 2.0));
        assert_eq!(mask_iou(&a, &b).unwrap(), 1.0 / 3.0);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let e = BinaryMask::new(10, 10);
        assert_eq!(mask_iou(&e, &e).unwrap(), 1.0);
        assert_eq!(mask_iou(&a, &e).unwrap(), 0.0);
        assert!(mask_iou(&a, &BinaryMask::new(3, 3)).is_err());
    }

    #[test]
    fn identical_images_score_one() {
        let img = textured(1, 192, 192);
        assert!((ms_ssim(&img, &img).unwrap() - 1.0).abs() < 1e-6);
        let small = textured(2, 20, 13);
        assert!((ms_ssim(&small, &small).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn noise_monotonicity() {
        for s in 0..5 {
            let img = textured(s, 96, 96);
            let lo = noisy(&img, 10.0, s + 100);
            let hi = noisy(&img, 30.0, s + 200);
            let mut mask = BinaryMask::new(96, 96);
            mask.fill_box(&PixelBox::new(10.0, 10.0, 90.0, 80.0));
            assert!(ms_ssim(&img, &lo).unwrap() > ms_ssim(&img, &hi).unwrap());
            assert!(masked_l2(&img, &lo, &mask).unwrap().raw < masked_l2(&img, &hi, &mask).unwrap().raw);
        }
    }

    #[test]
    fn symmetric_and_shift_tolerant() {
        let a = textured(7, 64, 64);
        let b = noisy(&a, 5.0, 8);
        let ab = ms_ssim(&a, &b).unwrap();
        assert!((ab - ms_ssim(&b, &a).unwrap()).abs() < 1e-12);
        let shift = |img: &RgbImage| {
            let mut o = img.clone();
            o.pixels_mut().for_each(|p| p.0.iter_mut().for_each(|c| *c = c.saturating_add(12)));
            o
        };
        // no channel saturates under the shift
        assert!(a.pixels().chain(b.pixels()).all(|p| p.0.iter().all(|&c| c <= 243)));
        let shifted = ms_ssim(&shift(&a), &shift(&b)).unwrap();
        assert!((ab - shifted).abs() < 1e-3, "{ab} vs {shifted}");
    }

    #[test]
    fn l2_normalization() {
        let a = RgbImage::from_pixel(4, 4, Rgb([10, 10, 10]));
        let b = RgbImage::from_pixel(4, 4, Rgb([13, 14, 10]));
        let mut m = BinaryMask::new(4, 4);
        m.fill_box(&PixelBox::new(0.0, 0.0, 2.0, 2.0));
        let d = masked_l2(&a, &b, &m).unwrap();
        assert!((d.raw - (4.0 * 25.0f64).sqrt()).abs() < 1e-12);
        assert!((d.normalized - 5.0).abs() < 1e-12);
        assert_eq!(masked_l2(&a, &a, &m).unwrap().raw, 0.0);
        assert!(matches!(masked_l2(&a, &b, &BinaryMask::new(4, 4)), Err(MetricsError::MaskEmpty)));
    }

    #[test]
    fn masked_crop_zeroes_outside() {
        let img = RgbImage::from_pixel(6, 6, Rgb([200, 100, 50]));
        let mut m = BinaryMask::new(6, 6);
        m.fill_box(&PixelBox::new(1.0, 1.0, 4.0, 2.0));
        m.set(1, 3, true);
        let c = masked_crop(&img, &m).unwrap();
        assert_eq!(c.dimensions(), (3, 3));
        assert_eq!(*c.get_pixel(0, 2), Rgb([200, 100, 50]));
        assert_eq!(*c.get_pixel(2, 2), Rgb([0, 0, 0]));
    }
}
