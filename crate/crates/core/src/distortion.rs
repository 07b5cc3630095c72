//! Polynomial radial lens distortion and the 20-bin k1 classification task.

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const K1_MIN: f64 = -0.4;
pub const K1_MAX: f64 = 0.0;
pub const N_BINS: usize = 20;
pub const BIN_WIDTH: f64 = 0.02;

/// Radial coefficients; `k2` is always derived from `k1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionParams {
    pub k1: f64,
    pub k2: f64,
}

impl DistortionParams {
    pub fn from_k1(k1: f64) -> Self {
        DistortionParams {
            k1,
            k2: 0.019 * k1 + 0.805 * k1 * k1,
        }
    }

    /// Scale factor at normalized radius `r`.
    pub fn scale(&self, r: f64) -> f64 {
        let r2 = r * r;
        1.0 + self.k1 * r2 + self.k2 * r2 * r2
    }

    /// Distorted radius `r·d(r)`.
    fn radial(&self, r: f64) -> f64 {
        r * self.scale(r)
    }

    fn radial_derivative(&self, r: f64) -> f64 {
        let r2 = r * r;
        1.0 + 3.0 * self.k1 * r2 + 5.0 * self.k2 * r2 * r2
    }

    /// Undistorted radius whose image under the warp is `rd`, if one exists
    /// on the monotone branch starting at 0.
    pub fn invert_radius(&self, rd: f64) -> Option<f64> {
        if rd <= 0.0 {
            return Some(0.0);
        }
        // Bracket on [0, hi] while the map stays increasing.
        let mut hi = 1.0;
        while self.radial(hi) < rd {
            hi *= 2.0;
            if hi > 8.0 || self.radial_derivative(hi) <= 0.0 {
                return None;
            }
        }
        let mut lo = 0.0;
        let mut r = rd.min(hi);
        for _ in 0..60 {
            let f = self.radial(r) - rd;
            if f.abs() < 1e-14 {
                return Some(r);
            }
            if f > 0.0 {
                hi = r;
            } else {
                lo = r;
            }
            let df = self.radial_derivative(r);
            let next = r - f / df;
            // Newton step when it stays in the bracket, bisection otherwise.
            r = if df > 0.0 && next > lo && next < hi {
                next
            } else {
                0.5 * (lo + hi)
            };
        }
        Some(r)
    }
}

/// Applies the warp to normalized coordinates.
pub fn distort_point(x: f64, y: f64, params: &DistortionParams) -> (f64, f64) {
    let d = params.scale((x * x + y * y).sqrt());
    (d * x, d * y)
}

/// Inverse of [`distort_point`] on the monotone branch.
pub fn undistort_point(xd: f64, yd: f64, params: &DistortionParams) -> Option<(f64, f64)> {
    let rd = (xd * xd + yd * yd).sqrt();
    if rd == 0.0 {
        return Some((0.0, 0.0));
    }
    let r = params.invert_radius(rd)?;
    Some((xd * r / rd, yd * r / rd))
}

/// Pixel ↔ normalized coordinate frame: origin at the image center, unit
/// distance at the corner pixel centers.
#[derive(Debug, Clone, Copy)]
pub struct NormalizedFrame {
    cx: f64,
    cy: f64,
    scale: f64,
}

impl NormalizedFrame {
    pub fn new(width: u32, height: u32) -> Self {
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        NormalizedFrame {
            cx,
            cy,
            scale: (cx * cx + cy * cy).sqrt().max(1.0),
        }
    }

    pub fn to_normalized(&self, px: f64, py: f64) -> (f64, f64) {
        ((px - self.cx) / self.scale, (py - self.cy) / self.scale)
    }

    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (x * self.scale + self.cx, y * self.scale + self.cy)
    }
}

/// Bilinear sample at a real pixel position; `None` outside the image.
fn bilinear(img: &RgbImage, x: f64, y: f64) -> Option<Rgb<u8>> {
    let (w, h) = img.dimensions();
    let eps = 1e-9;
    if x < -eps || y < -eps || x > (w - 1) as f64 + eps || y > (h - 1) as f64 + eps {
        return None;
    }
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as u32, y.floor() as u32);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let p = |xx: u32, yy: u32| img.get_pixel(xx, yy).0[c] as f64;
        let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
        let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
        *o = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    Some(Rgb(out))
}

/// Renders the distorted image: each output pixel is pulled from the
/// undistorted position that the warp sends onto it, with bilinear
/// interpolation and black where that position leaves the source.
pub fn distort_image(image: &RgbImage, params: &DistortionParams) -> Result<RgbImage> {
    let (w, h) = image.dimensions();
    if w != h {
        return Err(Error::invalid(format!(
            "distortion needs a square image, got {w}x{h}"
        )));
    }
    if w == 0 {
        return Err(Error::invalid("empty image"));
    }
    if params.k1 == 0.0 && params.k2 == 0.0 {
        return Ok(image.clone());
    }
    let frame = NormalizedFrame::new(w, h);
    Ok(RgbImage::from_fn(w, h, |px, py| {
        let (xd, yd) = frame.to_normalized(px as f64, py as f64);
        undistort_point(xd, yd, params)
            .and_then(|(x, y)| {
                let (sx, sy) = frame.to_pixel(x, y);
                bilinear(image, sx, sy)
            })
            .unwrap_or(Rgb([0, 0, 0]))
    }))
}

/// Draws k1 uniformly from [−0.4, 0].
pub fn sample_k1<R: Rng + ?Sized>(rng: &mut R) -> DistortionParams {
    DistortionParams::from_k1(rng.random_range(K1_MIN..=K1_MAX))
}

/// Bin index of k1: left-closed, right-open bins of width 0.02 over
/// [−0.4, 0], with the last bin also closed on the right.
pub fn bin_k1(k1: f64) -> Result<usize> {
    if !k1.is_finite() || !(K1_MIN..=K1_MAX).contains(&k1) {
        return Err(Error::invalid(format!("k1 = {k1} outside [-0.4, 0]")));
    }
    let v = (k1 - K1_MIN) / BIN_WIDTH;
    // Decimal edges like −0.38 are not exact in binary; snap values within
    // rounding noise of an edge onto it.
    let nearest = v.round();
    let idx = if (v - nearest).abs() < 1e-9 {
        nearest
    } else {
        v.floor()
    };
    Ok((idx as usize).min(N_BINS - 1))
}

/// Center of bin `i`, the regression value a predicted class stands for.
pub fn bin_center(i: usize) -> f64 {
    K1_MIN + (i as f64 + 0.5) * BIN_WIDTH
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bisect_oracle(p: &DistortionParams, rd: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 2.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * p.scale(mid) < rd {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn textured(n: u32) -> RgbImage {
        RgbImage::from_fn(n, n, |x, y| {
            Rgb([
                (x * 7 % 256) as u8,
                (y * 13 % 256) as u8,
                ((x ^ y) % 256) as u8,
            ])
        })
    }

    #[test]
    fn point_examples() {
        let p = DistortionParams::from_k1(-0.3);
        assert_eq!(distort_point(0.0, 0.0, &p), (0.0, 0.0));
        let id = DistortionParams::from_k1(0.0);
        assert_eq!(id.k2, 0.0);
        assert_eq!(distort_point(0.3, -0.7, &id), (0.3, -0.7));
        let p = DistortionParams::from_k1(-0.4);
        assert!((p.scale(1.0) - 0.7212).abs() < 1e-12);
        let (xd, yd) = distort_point(0.6, 0.8, &p);
        assert!((xd - 0.6 * 0.7212).abs() < 1e-12 && (yd - 0.8 * 0.7212).abs() < 1e-12);
    }

    #[test]
    fn identity_and_center() {
        let img = textured(64);
        assert_eq!(
            distort_image(&img, &DistortionParams::from_k1(0.0)).unwrap(),
            img
        );
        let odd = textured(65);
        for k1 in [-0.4, -0.25, -0.1, -0.01] {
            let out = distort_image(&odd, &DistortionParams::from_k1(k1)).unwrap();
            assert_eq!(out.get_pixel(32, 32), odd.get_pixel(32, 32));
        }
        assert!(distort_image(&RgbImage::new(10, 12), &DistortionParams::from_k1(-0.1)).is_err());
    }

    #[test]
    fn barrel_corners_go_black() {
        let img = RgbImage::from_pixel(64, 64, Rgb([200, 200, 200]));
        let out = distort_image(&img, &DistortionParams::from_k1(-0.4)).unwrap();
        assert_eq!(out.get_pixel(0, 0), &Rgb([0, 0, 0]));
        assert_eq!(out.get_pixel(32, 32), &Rgb([200, 200, 200]));
    }

    #[test]
    fn warp_round_trip_displacement() {
        let p = DistortionParams::from_k1(-0.2);
        let frame = NormalizedFrame::new(512, 512);
        let mut total = 0.0;
        let mut n = 0;
        for py in (0..512).step_by(8) {
            for px in (0..512).step_by(8) {
                let (xd, yd) = frame.to_normalized(px as f64, py as f64);
                let rd = (xd * xd + yd * yd).sqrt();
                let Some((x, y)) = undistort_point(xd, yd, &p) else {
                    continue;
                };
                // Independent bisection agrees with the Newton solver.
                let r = (x * x + y * y).sqrt();
                assert!((r - bisect_oracle(&p, rd)).abs() < 1e-9);
                let (bx, by) = distort_point(x, y, &p);
                let (qx, qy) = frame.to_pixel(bx, by);
                total += ((qx - px as f64).powi(2) + (qy - py as f64).powi(2)).sqrt();
                n += 1;
            }
        }
        assert!(total / (n as f64) < 0.5);
    }

    #[test]
    fn sampling_range_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<DistortionParams> = (0..10_000).map(|_| sample_k1(&mut rng)).collect();
        let mean = draws.iter().map(|d| d.k1).sum::<f64>() / draws.len() as f64;
        assert!((mean + 0.2).abs() < 0.01, "mean {mean}");
        for d in &draws {
            assert!((-0.4..=0.0).contains(&d.k1));
            assert!((d.k2 - (0.019 * d.k1 + 0.805 * d.k1 * d.k1)).abs() < 1e-12);
        }
    }

    #[test]
    fn bin_examples_and_edges() {
        assert_eq!(bin_k1(-0.4).unwrap(), 0);
        assert_eq!(bin_k1(0.0).unwrap(), 19);
        assert_eq!(bin_k1(-0.39).unwrap(), 0);
        assert!(bin_k1(0.01).is_err());
        assert!(bin_k1(-0.41).is_err());
        assert!(bin_k1(f64::NAN).is_err());
        for i in 1..20usize {
            let edge: f64 = format!("{:.2}", -0.4 + 0.02 * i as f64).parse().unwrap();
            assert_eq!(bin_k1(edge).unwrap(), i, "edge {edge}");
            assert_eq!(bin_k1(edge - 1e-7).unwrap(), i - 1);
        }
        assert!((bin_center(0) + 0.39).abs() < 1e-12);
    }

    #[test]
    fn barrel_scale_below_one() {
        for i in 1..=400 {
            let p = DistortionParams::from_k1(-0.001 * i as f64);
            for j in 1..=100 {
                let r = j as f64 / 100.0;
                assert!(p.scale(r) < 1.0, "k1 {} r {r}", p.k1);
            }
        }
    }

    proptest! {
        #[test]
        fn warp_is_radially_symmetric(x in -0.7f64..0.7, y in -0.7f64..0.7, theta in 0.0f64..6.3, k1 in -0.4f64..0.0) {
            let p = DistortionParams::from_k1(k1);
            let (c, s) = (theta.cos(), theta.sin());
            let rot = |a: f64, b: f64| (c * a - s * b, s * a + c * b);
            let (rx, ry) = rot(x, y);
            let lhs = distort_point(rx, ry, &p);
            let (dx, dy) = distort_point(x, y, &p);
            let rhs = rot(dx, dy);
            prop_assert!((lhs.0 - rhs.0).abs() < 1e-12 && (lhs.1 - rhs.1).abs() < 1e-12);
        }

        #[test]
        fn bins_are_monotone(a in -0.4f64..=0.0, b in -0.4f64..=0.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(bin_k1(lo).unwrap() <= bin_k1(hi).unwrap());
        }
    }
}
