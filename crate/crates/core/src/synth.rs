//! Synthetic camera pipelines: procedural scenes developed through per-camera
//! sensor noise, tone curve, chroma subsampling and block-DCT quantization,
//! each camera carrying a fixed metadata record.

use std::sync::OnceLock;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exif::{ExifRecord, TagRegistry};
use crate::patch::{synth_splice, Mask, SpliceBounds, SpliceShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Chroma {
    /// 4:4:4, no subsampling.
    Full,
    /// 4:2:2, chroma halved horizontally.
    Half,
    /// 4:2:0, chroma halved in both directions.
    Quarter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraProfile {
    pub name: String,
    /// Standard deviation of additive noise in 8-bit code values, applied
    /// after the tone curve.
    pub noise_sigma: f32,
    /// Output encoding exponent: stored value = linear^(1/gamma).
    pub gamma: f32,
    pub chroma: Chroma,
    /// Block-DCT quality on the usual 1..=100 scale.
    pub quality: u8,
    /// Metadata written by this camera, as (tag, value) pairs.
    pub exif: Vec<(String, String)>,
}

fn tags(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Eight cameras that differ in every pipeline stage. Two pairs share a
/// make, and the colour-space tag splits them four and four.
pub fn standard_cameras() -> Vec<CameraProfile> {
    #[rustfmt::skip]
    let table: [(&str, f32, f32, Chroma, u8, [(&str, &str); 16]); 8] = [
        ("canon-a", 1.5, 2.2, Chroma::Quarter, 98, [
            ("Camera Make", "Canon"), ("Camera Model", "Canon EOS 5D"), ("Color Space", "sRGB"),
            ("ISO Speed Ratings", "100"), ("F-Number", "f/8.0"), ("Focal Length", "50.0 mm"),
            ("Exposure Program", "Manual"), ("Metering Mode", "Pattern"), ("Flash", "Flash did not fire"),
            ("White Balance Mode", "Auto white balance"), ("Software", "Firmware 1.1.1"),
            ("X Resolution", "72"), ("Y Resolution", "72"), ("Resolution Unit", "inch"),
            ("YCbCr Positioning", "co-sited"), ("Compressed Bits", "5")]),
        ("canon-b", 11.0, 2.2, Chroma::Half, 92, [
            ("Camera Make", "Canon"), ("Camera Model", "Canon PowerShot A95"), ("Color Space", "sRGB"),
            ("ISO Speed Ratings", "400"), ("F-Number", "f/2.8"), ("Focal Length", "7.8 mm"),
            ("Exposure Program", "Normal program"), ("Metering Mode", "Center-weighted average"), ("Flash", "Flash fired"),
            ("White Balance Mode", "Auto white balance"), ("Software", "Firmware 1.0.0"),
            ("X Resolution", "180"), ("Y Resolution", "180"), ("Resolution Unit", "inch"),
            ("YCbCr Positioning", "centered"), ("Compressed Bits", "3")]),
        ("nikon-a", 5.0, 1.8, Chroma::Full, 88, [
            ("Camera Make", "NIKON CORPORATION"), ("Camera Model", "NIKON D90"), ("Color Space", "sRGB"),
            ("ISO Speed Ratings", "200"), ("F-Number", "f/5.6"), ("Focal Length", "35.0 mm"),
            ("Exposure Program", "Aperture priority"), ("Metering Mode", "Pattern"), ("Flash", "Flash did not fire"),
            ("White Balance Mode", "Auto white balance"), ("Software", "Ver.1.00"),
            ("X Resolution", "300"), ("Y Resolution", "300"), ("Resolution Unit", "inch"),
            ("YCbCr Positioning", "co-sited"), ("Compressed Bits", "4")]),
        ("nikon-b", 16.0, 1.8, Chroma::Quarter, 75, [
            ("Camera Make", "NIKON CORPORATION"), ("Camera Model", "COOLPIX P100"), ("Color Space", "Uncalibrated"),
            ("ISO Speed Ratings", "800"), ("F-Number", "f/3.5"), ("Focal Length", "4.6 mm"),
            ("Exposure Program", "Normal program"), ("Metering Mode", "Pattern"), ("Flash", "Flash fired"),
            ("White Balance Mode", "Auto white balance"), ("Software", "COOLPIX P100 V1.0"),
            ("X Resolution", "300"), ("Y Resolution", "300"), ("Resolution Unit", "inch"),
            ("YCbCr Positioning", "co-sited"), ("Compressed Bits", "2")]),
        ("sony", 3.0, 2.6, Chroma::Quarter, 82, [
            ("Camera Make", "SONY"), ("Camera Model", "DSC-RX100"), ("Color Space", "Uncalibrated"),
            ("ISO Speed Ratings", "320"), ("F-Number", "f/1.8"), ("Focal Length", "10.4 mm"),
            ("Exposure Program", "Normal program"), ("Metering Mode", "Spot"), ("Flash", "Flash did not fire"),
            ("White Balance Mode", "Manual white balance"), ("Software", "DSC-RX100 v1.00"),
            ("X Resolution", "350"), ("Y Resolution", "350"), ("Resolution Unit", "inch"),
            ("YCbCr Positioning", "co-sited"), ("Compressed Bits", "2")]),
        ("apple", 0.0, 1.4, Chroma::Half, 70, [
            ("Camera Make", "Apple"), ("Camera Model", "iPhone 6"), ("Color Space", "sRGB"),
            ("ISO Speed Ratings", "32"), ("F-Number", "f/2.2"), ("Focal Length", "4.2 mm"),
            ("Exposure Program", "Normal program"), ("Metering Mode", "Pattern"), ("Flash", "Flash did not fire"),
            ("White Balance Mode", "Auto white balance"), ("Software", "8.1.2"),
            ("X Resolution", "72"), ("Y Resolution", "72"), ("Resolution Unit", "inch"),
            ("YCbCr Positioning", "centered"), ("Compressed Bits", "6")]),
        ("fujifilm", 7.5, 1.0, Chroma::Full, 60, [
            ("Camera Make", "FUJIFILM"), ("Camera Model", "FinePix S5600"), ("Color Space", "Uncalibrated"),
            ("ISO Speed Ratings", "1600"), ("F-Number", "f/4.0"), ("Focal Length", "12.0 mm"),
            ("Exposure Program", "Shutter priority"), ("Metering Mode", "Average"), ("Flash", "Flash fired"),
            ("White Balance Mode", "Manual white balance"), ("Software", "Digital Camera FinePix S5600 Ver1.00"),
            ("X Resolution", "72"), ("Y Resolution", "72"), ("Resolution Unit", "inch"),
            ("YCbCr Positioning", "co-sited"), ("Compressed Bits", "1")]),
        ("panasonic", 24.0, 2.4, Chroma::Half, 97, [
            ("Camera Make", "Panasonic"), ("Camera Model", "DMC-FZ200"), ("Color Space", "Uncalibrated"),
            ("ISO Speed Ratings", "100"), ("F-Number", "f/4.5"), ("Focal Length", "25.0 mm"),
            ("Exposure Program", "Landscape mode"), ("Metering Mode", "Multi-spot"), ("Flash", "Flash did not fire"),
            ("White Balance Mode", "Auto white balance"), ("Software", "Ver.1.0"),
            ("X Resolution", "180"), ("Y Resolution", "180"), ("Resolution Unit", "inch"),
            ("YCbCr Positioning", "co-sited"), ("Compressed Bits", "4")]),
    ];
    table
        .into_iter()
        .map(
            |(name, noise_sigma, gamma, chroma, quality, exif)| CameraProfile {
                name: name.to_string(),
                noise_sigma,
                gamma,
                chroma,
                quality,
                exif: tags(&exif),
            },
        )
        .collect()
}

impl CameraProfile {
    pub fn record(&self, registry: &TagRegistry, source_id: &str) -> ExifRecord {
        ExifRecord::from_pairs(registry, source_id, self.exif.iter().cloned())
    }

    /// Develops a linear scene (`h × w × 3`, row-major, values in [0, 1])
    /// into a stored 8-bit image.
    pub fn develop<R: Rng + ?Sized>(
        &self,
        scene: &[f32],
        width: u32,
        height: u32,
        rng: &mut R,
    ) -> Result<RgbImage> {
        let (w, h) = (width as usize, height as usize);
        if scene.len() != w * h * 3 || w == 0 || h == 0 {
            return Err(Error::invalid("scene buffer does not match dimensions"));
        }
        let noise = Normal::new(0.0f32, self.noise_sigma.max(0.0))
            .map_err(|e| Error::invalid(e.to_string()))?;
        let inv_gamma = 1.0 / self.gamma;
        // Tone curve, noise, then YCbCr on the 0..255 scale.
        let mut planes = [vec![0f32; w * h], vec![0f32; w * h], vec![0f32; w * h]];
        for i in 0..w * h {
            let mut rgb = [0f32; 3];
            for c in 0..3 {
                let v = scene[i * 3 + c].clamp(0.0, 1.0).powf(inv_gamma) * 255.0;
                rgb[c] = (v + noise.sample(rng)).clamp(0.0, 255.0);
            }
            let [r, g, b] = rgb;
            planes[0][i] = 0.299 * r + 0.587 * g + 0.114 * b;
            planes[1][i] = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0;
            planes[2][i] = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0;
        }
        let (fx, fy) = match self.chroma {
            Chroma::Full => (1, 1),
            Chroma::Half => (2, 1),
            Chroma::Quarter => (2, 2),
        };
        for plane in &mut planes[1..] {
            subsample(plane, w, h, fx, fy);
        }
        let (luma, chroma) = quant_tables(self.quality);
        quantize_blocks(&mut planes[0], w, h, &luma);
        for plane in &mut planes[1..] {
            quantize_blocks(plane, w, h, &chroma);
        }
        let mut out = RgbImage::new(width, height);
        for (i, px) in out.pixels_mut().enumerate() {
            let (y, cb, cr) = (planes[0][i], planes[1][i] - 128.0, planes[2][i] - 128.0);
            let r = y + 1.402 * cr;
            let g = y - 0.344_136 * cb - 0.714_136 * cr;
            let b = y + 1.772 * cb;
            *px = Rgb([to_u8(r), to_u8(g), to_u8(b)]);
        }
        Ok(out)
    }

    /// Renders a fresh scene and develops it.
    pub fn capture<R: Rng + ?Sized>(
        &self,
        width: u32,
        height: u32,
        rng: &mut R,
    ) -> Result<RgbImage> {
        let scene = render_scene(width, height, rng);
        self.develop(&scene, width, height, rng)
    }
}

fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Replaces each `fx × fy` cell by its mean.
fn subsample(plane: &mut [f32], w: usize, h: usize, fx: usize, fy: usize) {
    if fx == 1 && fy == 1 {
        return;
    }
    for by in (0..h).step_by(fy) {
        for bx in (0..w).step_by(fx) {
            let ys = by..(by + fy).min(h);
            let xs = bx..(bx + fx).min(w);
            let n = (ys.len() * xs.len()) as f32;
            let mut s = 0.0;
            for y in ys.clone() {
                for x in xs.clone() {
                    s += plane[y * w + x];
                }
            }
            for y in ys.clone() {
                for x in xs.clone() {
                    plane[y * w + x] = s / n;
                }
            }
        }
    }
}

#[rustfmt::skip]
const LUMA_BASE: [f32; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., 12., 12., 14., 19., 26., 58., 60., 55.,
    14., 13., 16., 24., 40., 57., 69., 56., 14., 17., 22., 29., 51., 87., 80., 62.,
    18., 22., 37., 56., 68., 109., 103., 77., 24., 35., 55., 64., 81., 104., 113., 92.,
    49., 64., 78., 87., 103., 121., 120., 101., 72., 92., 95., 98., 112., 100., 103., 99.,
];
#[rustfmt::skip]
const CHROMA_BASE: [f32; 64] = [
    17., 18., 24., 47., 99., 99., 99., 99., 18., 21., 26., 66., 99., 99., 99., 99.,
    24., 26., 56., 99., 99., 99., 99., 99., 47., 66., 99., 99., 99., 99., 99., 99.,
    99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99.,
    99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99.,
];

/// Quantization tables scaled to `quality` with the usual 50-anchored rule.
pub fn quant_tables(quality: u8) -> ([f32; 64], [f32; 64]) {
    let q = quality.clamp(1, 100) as f32;
    let scale = if q < 50.0 {
        5000.0 / q
    } else {
        200.0 - 2.0 * q
    };
    let f = |t: &[f32; 64]| t.map(|v| ((v * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0));
    (f(&LUMA_BASE), f(&CHROMA_BASE))
}

fn dct_basis() -> &'static [[f32; 8]; 8] {
    static BASIS: OnceLock<[[f32; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0f32; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let a = if u == 0 {
                (1.0f64 / 8.0).sqrt()
            } else {
                (2.0f64 / 8.0).sqrt()
            };
            for (x, v) in row.iter_mut().enumerate() {
                *v = (a * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos())
                    as f32;
            }
        }
        b
    })
}

/// Orthonormal 2-D DCT of an 8×8 block (`inverse` applies the transpose).
fn dct8(block: &[f32; 64], inverse: bool) -> [f32; 64] {
    let b = dct_basis();
    let coef = |u: usize, x: usize| if inverse { b[x][u] } else { b[u][x] };
    let mut tmp = [0f32; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| coef(u, x) * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0f32; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| coef(v, y) * tmp[y * 8 + u]).sum();
        }
    }
    out
}

/// Rounds the DCT coefficients of every 8×8 block (aligned to the image
/// origin) to multiples of `table`. Partial edge blocks are padded by edge
/// replication.
fn quantize_blocks(plane: &mut [f32], w: usize, h: usize, table: &[f32; 64]) {
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut block = [0f32; 64];
            for y in 0..8 {
                for x in 0..8 {
                    let (sy, sx) = ((by + y).min(h - 1), (bx + x).min(w - 1));
                    block[y * 8 + x] = plane[sy * w + sx] - 128.0;
                }
            }
            let mut c = dct8(&block, false);
            for (v, q) in c.iter_mut().zip(table) {
                *v = (*v / q).round() * q;
            }
            let rec = dct8(&c, true);
            for y in 0..8.min(h - by) {
                for x in 0..8.min(w - bx) {
                    plane[(by + y) * w + bx + x] = rec[y * 8 + x] + 128.0;
                }
            }
        }
    }
}

/// Procedural linear-light scene: a bilinear colour wash, a few flat or
/// shaded shapes and low-frequency ripples. Returned row-major `h × w × 3`.
pub fn render_scene<R: Rng + ?Sized>(width: u32, height: u32, rng: &mut R) -> Vec<f32> {
    let (w, h) = (width as usize, height as usize);
    let color = |rng: &mut R| -> [f32; 3] { [0; 3].map(|_: u8| rng.random_range(0.15..0.75)) };
    let corners = [color(rng), color(rng), color(rng), color(rng)];
    let mut out = vec![0f32; w * h * 3];
    for y in 0..h {
        let fy = y as f32 / (h.max(2) - 1) as f32;
        for x in 0..w {
            let fx = x as f32 / (w.max(2) - 1) as f32;
            for c in 0..3 {
                let top = corners[0][c] * (1.0 - fx) + corners[1][c] * fx;
                let bottom = corners[2][c] * (1.0 - fx) + corners[3][c] * fx;
                out[(y * w + x) * 3 + c] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    let n_shapes = rng.random_range(3..=8);
    for _ in 0..n_shapes {
        let col = color(rng);
        let cx = rng.random_range(0.0..w as f32);
        let cy = rng.random_range(0.0..h as f32);
        let rx = rng.random_range(0.05..0.35) * w as f32;
        let ry = rng.random_range(0.05..0.35) * h as f32;
        let ellipse = rng.random_bool(0.5);
        let shade = rng.random_range(-0.2f32..0.2);
        let y0 = (cy - ry).max(0.0) as usize;
        let y1 = ((cy + ry).ceil() as usize).min(h);
        let x0 = (cx - rx).max(0.0) as usize;
        let x1 = ((cx + rx).ceil() as usize).min(w);
        for y in y0..y1 {
            for x in x0..x1 {
                let dx = (x as f32 - cx) / rx;
                let dy = (y as f32 - cy) / ry;
                if ellipse && dx * dx + dy * dy > 1.0 {
                    continue;
                }
                let k = 1.0 + shade * dy;
                for c in 0..3 {
                    out[(y * w + x) * 3 + c] = (col[c] * k).clamp(0.0, 1.0);
                }
            }
        }
    }
    let n_waves = rng.random_range(0..=2);
    for _ in 0..n_waves {
        let lambda = rng.random_range(12.0f32..64.0);
        let angle = rng.random_range(0.0f32..std::f32::consts::PI);
        let amp = rng.random_range(0.0f32..0.08);
        let (s, c) = angle.sin_cos();
        for y in 0..h {
            for x in 0..w {
                let t = (x as f32 * c + y as f32 * s) * std::f32::consts::TAU / lambda;
                let d = amp * t.sin();
                for ch in 0..3 {
                    let v = &mut out[(y * w + x) * 3 + ch];
                    *v = (*v + d).clamp(0.0, 1.0);
                }
            }
        }
    }
    out
}

/// Child seed for item `index` of a stream, so generation can run in
/// parallel yet stay reproducible.
pub fn child_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r.set_word_pos(index as u128 * 16);
    r.random()
}

/// One developed image with its camera and metadata.
#[derive(Debug, Clone)]
pub struct SynthImage {
    pub id: String,
    pub camera: usize,
    pub image: RgbImage,
    pub record: ExifRecord,
}

/// `per_camera` images of `size × size` from each camera, ordered by camera.
pub fn generate_corpus(
    cameras: &[CameraProfile],
    registry: &TagRegistry,
    per_camera: usize,
    size: u32,
    seed: u64,
) -> Result<Vec<SynthImage>> {
    let jobs: Vec<(usize, usize)> = (0..cameras.len())
        .flat_map(|c| (0..per_camera).map(move |i| (c, i)))
        .collect();
    jobs.par_iter()
        .map(|&(c, i)| {
            let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, c as u64, i as u64));
            let id = format!("{}-{i:04}", cameras[c].name);
            Ok(SynthImage {
                image: cameras[c].capture(size, size, &mut rng)?,
                record: cameras[c].record(registry, &id),
                id,
                camera: c,
            })
        })
        .collect()
}

/// A two-camera composite (or a pristine image when `donor_camera` is None).
#[derive(Debug, Clone)]
pub struct SynthComposite {
    pub id: String,
    pub host_camera: usize,
    pub donor_camera: Option<usize>,
    pub image: RgbImage,
    pub mask: Mask,
}

/// `n` composites pasting a rectangle or ellipse from one camera's image
/// into another camera's image, each region covering `bounds` of the frame.
pub fn generate_composites(
    cameras: &[CameraProfile],
    n: usize,
    size: u32,
    bounds: SpliceBounds,
    seed: u64,
) -> Result<Vec<SynthComposite>> {
    if cameras.len() < 2 {
        return Err(Error::invalid("composites need at least two cameras"));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 1000, i as u64));
            let a = rng.random_range(0..cameras.len());
            let mut b = rng.random_range(0..cameras.len() - 1);
            if b >= a {
                b += 1;
            }
            let host = cameras[a].capture(size, size, &mut rng)?;
            let donor = cameras[b].capture(size, size, &mut rng)?;
            let shape = if rng.random_bool(0.5) {
                SpliceShape::Rectangle
            } else {
                SpliceShape::Ellipse
            };
            let s = synth_splice(&host, &donor, shape, bounds, &mut rng)?;
            Ok(SynthComposite {
                id: format!("composite-{i:04}"),
                host_camera: a,
                donor_camera: Some(b),
                image: s.image,
                mask: s.mask,
            })
        })
        .collect()
}

/// `n` untouched single-camera images, cameras assigned round-robin.
pub fn generate_pristine(
    cameras: &[CameraProfile],
    n: usize,
    size: u32,
    seed: u64,
) -> Result<Vec<SynthComposite>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 2000, i as u64));
            let c = i % cameras.len();
            Ok(SynthComposite {
                id: format!("pristine-{i:04}"),
                host_camera: c,
                donor_camera: None,
                image: cameras[c].capture(size, size, &mut rng)?,
                mask: Mask::new(size, size),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exif::passes_training_filter;

    #[test]
    fn dct_round_trip_and_orthonormality() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let block: [f32; 64] = std::array::from_fn(|_| r.random_range(-100.0..100.0));
        let back = dct8(&dct8(&block, false), true);
        for (a, b) in block.iter().zip(&back) {
            assert!((a - b).abs() < 1e-3);
        }
        let flat = [10.0f32; 64];
        let c = dct8(&flat, false);
        assert!((c[0] - 80.0).abs() < 1e-4);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-4));
    }

    #[test]
    fn quality_scaling_matches_anchor_points() {
        let (l50, _) = quant_tables(50);
        assert_eq!(l50, LUMA_BASE);
        let (l100, c100) = quant_tables(100);
        assert!(l100.iter().chain(&c100).all(|&v| v == 1.0));
        // q = 10 scales by 500%: 16 -> 80.
        assert_eq!(quant_tables(10).0[0], 80.0);
    }

    #[test]
    fn subsampling_averages_cells() {
        let mut p = vec![0., 2., 4., 6., 1., 3., 5., 7.];
        subsample(&mut p, 4, 2, 2, 2);
        assert_eq!(p, vec![1.5, 1.5, 5.5, 5.5, 1.5, 1.5, 5.5, 5.5]);
    }

    #[test]
    fn cameras_are_distinct_and_trainable() {
        let cams = standard_cameras();
        let reg = TagRegistry::standard();
        assert_eq!(cams.len(), 8);
        let texts: std::collections::BTreeSet<String> = cams
            .iter()
            .map(|c| c.record(&reg, "x").canonical_text().unwrap().text)
            .collect();
        assert_eq!(texts.len(), 8);
        for c in &cams {
            let rec = c.record(&reg, "x");
            assert_eq!(rec.len(), c.exif.len(), "{} has unregistered tags", c.name);
            assert!(passes_training_filter(&rec));
        }
        let spaces: std::collections::BTreeSet<&str> = cams
            .iter()
            .map(|c| {
                c.exif
                    .iter()
                    .find(|t| t.0 == "Color Space")
                    .unwrap()
                    .1
                    .as_str()
            })
            .collect();
        assert_eq!(spaces.len(), 2);
    }

    #[test]
    fn generation_is_deterministic() {
        let cams = standard_cameras();
        let reg = TagRegistry::standard();
        let a = generate_corpus(&cams[..2], &reg, 2, 24, 7).unwrap();
        let b = generate_corpus(&cams[..2], &reg, 2, 24, 7).unwrap();
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.id, y.id);
        }
        assert_ne!(a[0].image, a[1].image);
        let c = generate_composites(&cams, 3, 40, SpliceBounds::default(), 1).unwrap();
        for s in &c {
            assert_ne!(s.donor_camera, Some(s.host_camera));
            let f = s.mask.fraction();
            assert!((0.05..=0.40).contains(&f));
        }
    }

    #[test]
    fn noise_free_high_quality_pipeline_is_near_identity() {
        let cam = CameraProfile {
            name: "ideal".into(),
            noise_sigma: 0.0,
            gamma: 1.0,
            chroma: Chroma::Full,
            quality: 100,
            exif: vec![],
        };
        let (w, h) = (13, 11);
        let scene: Vec<f32> = (0..w * h * 3).map(|i| (i % 200) as f32 / 255.0).collect();
        let img = cam
            .develop(
                &scene,
                w as u32,
                h as u32,
                &mut ChaCha8Rng::seed_from_u64(0),
            )
            .unwrap();
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                let want = scene[i * 3 + c] * 255.0;
                assert!((px.0[c] as f32 - want).abs() <= 3.0);
            }
        }
    }
}
