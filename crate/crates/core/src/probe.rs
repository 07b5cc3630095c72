//! Linear probes on frozen pooled patch-encoder features.

use image::imageops::{self, FilterType};
use image::RgbImage;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::DualEncoder;
use crate::error::{Error, Result};
use crate::exif::{ExifRecord, TagQuantizer};
use crate::nn::{AdamW, AdamWConfig};

/// How a whole image is brought to the probe's input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "side")]
pub enum Preprocess {
    /// Bilinear resize to `side × side`.
    Resize(u32),
    /// Central `side × side` window.
    CenterCrop(u32),
}

impl Preprocess {
    pub fn apply(&self, img: &RgbImage) -> Result<RgbImage> {
        let (w, h) = img.dimensions();
        match *self {
            Preprocess::Resize(s) if s > 0 => Ok(imageops::resize(img, s, s, FilterType::Triangle)),
            Preprocess::CenterCrop(s) if s > 0 => {
                if w < s || h < s {
                    return Err(Error::invalid(format!(
                        "{w}x{h} image is smaller than a {s}px crop"
                    )));
                }
                Ok(imageops::crop_imm(img, (w - s) / 2, (h - s) / 2, s, s).to_image())
            }
            _ => Err(Error::invalid("preprocessing side must be positive")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preprocess::Resize(_) => "resize",
            Preprocess::CenterCrop(_) => "crop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of examples (by id hash) held out for evaluation.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.0,
            batch_size: 256,
            epochs: 20,
            holdout: 0.2,
            seed: 0,
        }
    }
}

/// Deterministic split: an id is held out when the leading 8 bytes of its
/// SHA-256, as a fraction of 2^64, fall below `holdout`.
pub fn is_holdout(id: &str, holdout: f64) -> bool {
    let d = Sha256::digest(id.as_bytes());
    let v = u64::from_be_bytes(d[..8].try_into().expect("8 bytes"));
    (v as f64 / 18_446_744_073_709_551_616.0) < holdout
}

/// Frozen features, one unit-norm row per example.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub ids: Vec<String>,
    pub features: Array2<f32>,
    pub preprocess: Preprocess,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> FeatureSet {
        FeatureSet {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            features: self.features.select(Axis(0), idx),
            preprocess: self.preprocess,
        }
    }

    /// Stacks two sets extracted the same way.
    pub fn concat(&self, other: &FeatureSet) -> Result<FeatureSet> {
        if self.preprocess != other.preprocess {
            return Err(Error::invalid(format!(
                "cannot mix {:?} and {:?} features",
                self.preprocess, other.preprocess
            )));
        }
        if self.features.ncols() != other.features.ncols() {
            return Err(Error::invalid("feature widths differ"));
        }
        let features =
            ndarray::concatenate(Axis(0), &[self.features.view(), other.features.view()])
                .map_err(|e| Error::invalid(e.to_string()))?;
        let mut ids = self.ids.clone();
        ids.extend(other.ids.iter().cloned());
        Ok(FeatureSet {
            ids,
            features,
            preprocess: self.preprocess,
        })
    }
}

/// Pooled pre-projection features of each preprocessed image, L2-normalized.
pub fn extract_features(
    model: &DualEncoder,
    images: &[(&str, &RgbImage)],
    preprocess: Preprocess,
) -> Result<FeatureSet> {
    let side = model.patch_side();
    let rows: Vec<Array1<f32>> = images
        .par_iter()
        .map(|(id, img)| {
            let x = preprocess.apply(img)?;
            if x.width() < side || x.height() < side {
                return Err(Error::invalid(format!(
                    "{id}: preprocessed image is smaller than the {side}px patch"
                )));
            }
            let mut f = model.image_features(&x);
            let n = f.dot(&f).sqrt();
            if !n.is_finite() {
                return Err(Error::NonFinite("probe features"));
            }
            if n > 0.0 {
                f /= n;
            }
            Ok(f)
        })
        .collect::<Result<_>>()?;
    let dim = model.patch.config.channels.last().copied().unwrap_or(3);
    let mut features = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::invalid(
                "feature width does not match the checkpoint",
            ));
        }
        features.row_mut(i).assign(r);
    }
    Ok(FeatureSet {
        ids: images.iter().map(|(id, _)| id.to_string()).collect(),
        features,
        preprocess,
    })
}

/// Softmax regression weights: `logits = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub n_classes: usize,
    pub dim: usize,
    /// Row-major `n_classes × dim` weights followed by `n_classes` biases.
    pub params: Vec<f32>,
}

impl LinearProbe {
    fn new(n_classes: usize, dim: usize) -> Self {
        LinearProbe {
            n_classes,
            dim,
            params: vec![0.0; n_classes * (dim + 1)],
        }
    }

    fn logits(&self, x: &[f32]) -> Vec<f32> {
        let (w, b) = self.params.split_at(self.n_classes * self.dim);
        (0..self.n_classes)
            .map(|c| {
                b[c] + w[c * self.dim..(c + 1) * self.dim]
                    .iter()
                    .zip(x)
                    .map(|(a, v)| a * v)
                    .sum::<f32>()
            })
            .collect()
    }

    pub fn predict(&self, x: &[f32]) -> usize {
        let l = self.logits(x);
        (0..l.len()).fold(0, |best, c| if l[c] > l[best] { c } else { best })
    }

    /// Adds the mean cross-entropy gradient over `rows` to `grad`; returns
    /// the summed loss.
    fn accumulate(
        &self,
        x: &Array2<f32>,
        labels: &[usize],
        rows: &[usize],
        grad: &mut [f32],
    ) -> f64 {
        let scale = 1.0 / rows.len() as f32;
        let nw = self.n_classes * self.dim;
        let mut loss = 0.0;
        for &i in rows {
            let xi = x.row(i);
            let xi = xi.as_slice().expect("standard layout");
            let l = self.logits(xi);
            let m = l.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let z: f32 = l.iter().map(|v| (v - m).exp()).sum();
            loss += (z.ln() + m - l[labels[i]]) as f64;
            for c in 0..self.n_classes {
                let p = (l[c] - m).exp() / z - if c == labels[i] { 1.0 } else { 0.0 };
                let g = p * scale;
                for (gw, v) in grad[c * self.dim..(c + 1) * self.dim].iter_mut().zip(xi) {
                    *gw += g * v;
                }
                grad[nw + c] += g;
            }
        }
        loss
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub probe: LinearProbe,
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub final_loss: f64,
}

/// Trains a softmax probe on the training split and reports top-1 accuracy
/// on the held-out split.
pub fn train_linear_probe(
    set: &FeatureSet,
    labels: &[usize],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    if labels.len() != set.len() {
        return Err(Error::invalid(format!(
            "{} labels for {} examples",
            labels.len(),
            set.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::invalid(format!(
            "label {l} out of range for {n_classes} classes"
        )));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::invalid(
            "probe needs a positive batch size and learning rate",
        ));
    }
    let (test, train): (Vec<usize>, Vec<usize>) =
        (0..set.len()).partition(|&i| is_holdout(&set.ids[i], cfg.holdout));
    let mut seen = vec![false; n_classes];
    for &i in &train {
        seen[labels[i]] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::data(
            "probe training split has fewer than two classes",
        ));
    }
    if test.is_empty() {
        return Err(Error::data("probe held-out split is empty"));
    }
    let x = &set.features;
    let mut probe = LinearProbe::new(n_classes, x.ncols());
    let mut opt = AdamW::new(
        AdamWConfig {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
            weight_decay: cfg.weight_decay,
        },
        probe.params.len(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = train.clone();
    let mut final_loss = f64::NAN;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for rows in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0f32; probe.params.len()];
            total += probe.accumulate(x, labels, rows, &mut grad);
            opt.step(&mut probe.params, &grad, cfg.lr);
        }
        final_loss = total / train.len() as f64;
    }
    let correct = test
        .iter()
        .filter(|&&i| probe.predict(x.row(i).as_slice().expect("standard layout")) == labels[i])
        .count();
    Ok(ProbeResult {
        probe,
        accuracy: correct as f64 / test.len() as f64,
        n_train: train.len(),
        n_test: test.len(),
        final_loss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagProbe {
    pub tag: String,
    pub n_classes: usize,
    pub n_examples: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExifProbeReport {
    pub preprocess: Preprocess,
    pub tags: Vec<TagProbe>,
    /// Tags that could not be probed, with the reason.
    pub excluded: Vec<(String, String)>,
    pub macro_accuracy: Option<f64>,
}

impl ExifProbeReport {
    /// Tab-separated table with a trailing macro-average row.
    pub fn to_table(&self) -> String {
        let mut s = String::from("tag\tn_classes\tn_examples\taccuracy\n");
        for t in &self.tags {
            s.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\n",
                t.tag, t.n_classes, t.n_examples, t.accuracy
            ));
        }
        for (tag, why) in &self.excluded {
            s.push_str(&format!("{tag}\t-\t-\texcluded: {why}\n"));
        }
        match self.macro_accuracy {
            Some(m) => s.push_str(&format!("macro\t-\t-\t{m:.6}\n")),
            None => s.push_str("macro\t-\t-\tundefined\n"),
        }
        s
    }
}

/// Unweighted mean over tags.
pub fn macro_average(tags: &[TagProbe]) -> Option<f64> {
    if tags.is_empty() {
        return None;
    }
    Some(tags.iter().map(|t| t.accuracy).sum::<f64>() / tags.len() as f64)
}

/// One probe per quantized tag over shared features. Examples whose value
/// is missing or dropped by the quantizer are left out of that tag's probe.
pub fn exif_probe_suite(
    features: &FeatureSet,
    records: &[ExifRecord],
    quantizers: &[TagQuantizer],
    cfg: &ProbeConfig,
) -> Result<ExifProbeReport> {
    if records.len() != features.len() {
        return Err(Error::invalid(format!(
            "{} records for {} feature rows",
            records.len(),
            features.len()
        )));
    }
    let results: Vec<std::result::Result<TagProbe, (String, String)>> = quantizers
        .par_iter()
        .map(|q| {
            let mut idx = Vec::new();
            let mut labels = Vec::new();
            for (i, r) in records.iter().enumerate() {
                if let Some(c) = r.get(&q.tag).and_then(|v| q.quantize(v).class()) {
                    idx.push(i);
                    labels.push(c);
                }
            }
            if q.n_classes() < 2 {
                return Err((q.tag.clone(), "fewer than two classes".to_string()));
            }
            let sub = features.select(&idx);
            match train_linear_probe(&sub, &labels, q.n_classes(), cfg) {
                Ok(r) => Ok(TagProbe {
                    tag: q.tag.clone(),
                    n_classes: q.n_classes(),
                    n_examples: idx.len(),
                    accuracy: r.accuracy,
                }),
                Err(e) => Err((q.tag.clone(), e.to_string())),
            }
        })
        .collect();
    let mut tags = Vec::new();
    let mut excluded = Vec::new();
    for r in results {
        match r {
            Ok(t) => tags.push(t),
            Err(e) => excluded.push(e),
        }
    }
    Ok(ExifProbeReport {
        preprocess: features.preprocess,
        macro_accuracy: macro_average(&tags),
        tags,
        excluded,
    })
}

/// Real (label 0) versus manipulated (label 1) probe.
pub fn forensics_probe(
    features: &FeatureSet,
    manipulated: &[bool],
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let labels: Vec<usize> = manipulated.iter().map(|&m| m as usize).collect();
    train_linear_probe(features, &labels, 2, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{
        ModelConfig, PatchEncoderConfig, PixelNorm, TextEncoderConfig, Tokenizer,
    };
    use crate::exif::{fit_quantizer, TagRegistry};
    use rand::Rng;

    fn set(x: Array2<f32>) -> FeatureSet {
        FeatureSet {
            ids: (0..x.nrows()).map(|i| format!("ex-{i:05}")).collect(),
            features: x,
            preprocess: Preprocess::Resize(8),
        }
    }

    fn blobs(n: usize, seed: u64, gap: f32) -> (FeatureSet, Vec<usize>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((n, 6), |(i, k)| {
            let c = if k == 0 {
                if labels[i] == 1 {
                    gap
                } else {
                    -gap
                }
            } else {
                0.0
            };
            c + r.random_range(-1.0f32..1.0)
        });
        (set(x), labels)
    }

    fn tiny_model() -> DualEncoder {
        let cfg = ModelConfig {
            patch: PatchEncoderConfig {
                patch_side: 8,
                channels: vec![4, 6],
                strides: vec![1, 2],
                embed_dim: 8,
            },
            text: TextEncoderConfig {
                embed_dim: 8,
                width: 8,
                layers: 1,
                ..Default::default()
            },
            tau: 0.07,
        };
        let tok = Tokenizer::fit(["a b c"], &[], 8, 64).unwrap();
        DualEncoder::new(
            cfg,
            tok,
            PixelNorm::default(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap()
    }

    #[test]
    fn holdout_split_is_stable_and_near_fraction() {
        let n = (0..5000)
            .filter(|i| is_holdout(&format!("img-{i}"), 0.2))
            .count();
        assert!((900..1100).contains(&n), "{n}");
        assert_eq!(is_holdout("abc", 0.2), is_holdout("abc", 0.2));
        assert!(!is_holdout("abc", 0.0) && is_holdout("abc", 1.0));
    }

    #[test]
    fn separable_features_are_learned() {
        let (s, y) = blobs(600, 0, 3.0);
        let r = train_linear_probe(&s, &y, 2, &ProbeConfig::default()).unwrap();
        assert!(r.accuracy >= 0.99, "{}", r.accuracy);
        assert_eq!(r.n_train + r.n_test, 600);
    }

    #[test]
    fn shuffled_labels_stay_near_chance() {
        let (s, mut y) = blobs(2000, 1, 3.0);
        y.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
        let r = train_linear_probe(&s, &y, 2, &ProbeConfig::default()).unwrap();
        let sd = (0.25 / r.n_test as f64).sqrt();
        assert!(
            (r.accuracy - 0.5).abs() < 3.0 * sd,
            "{} vs sd {sd}",
            r.accuracy
        );
    }

    #[test]
    fn rerun_is_identical() {
        let (s, y) = blobs(300, 2, 0.5);
        let a = train_linear_probe(&s, &y, 2, &ProbeConfig::default()).unwrap();
        let b = train_linear_probe(&s, &y, 2, &ProbeConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_and_bad_labels_error() {
        let (s, _) = blobs(50, 3, 1.0);
        assert!(train_linear_probe(&s, &vec![1; 50], 2, &ProbeConfig::default()).is_err());
        assert!(train_linear_probe(&s, &vec![2; 50], 2, &ProbeConfig::default()).is_err());
        assert!(train_linear_probe(&s, &[0, 1], 2, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn preprocessing_and_mixing() {
        let img = RgbImage::from_fn(20, 12, |x, y| {
            image::Rgb([(x * 12) as u8, (y * 20) as u8, 7])
        });
        let c = Preprocess::CenterCrop(10).apply(&img).unwrap();
        assert_eq!(c.dimensions(), (10, 10));
        assert_eq!(c.get_pixel(0, 0), img.get_pixel(5, 1));
        assert!(Preprocess::CenterCrop(13).apply(&img).is_err());
        assert_eq!(
            Preprocess::Resize(10).apply(&img).unwrap().dimensions(),
            (10, 10)
        );

        let m = tiny_model();
        let items = [("a", &img), ("b", &img)];
        let r = extract_features(&m, &items, Preprocess::Resize(10)).unwrap();
        let k = extract_features(&m, &items, Preprocess::CenterCrop(10)).unwrap();
        assert_eq!(r.features.row(0), r.features.row(1));
        assert_ne!(r.features.row(0), k.features.row(0));
        for row in r.features.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-5);
        }
        assert!(r.concat(&k).is_err());
        assert_eq!(r.concat(&r).unwrap().len(), 4);
        assert!(extract_features(&m, &items, Preprocess::Resize(6)).is_err());
    }

    #[test]
    fn probing_leaves_model_untouched() {
        let m = tiny_model();
        let before = m.patch_params.clone();
        let imgs: Vec<RgbImage> = (0..40)
            .map(|i| {
                RgbImage::from_fn(12, 12, |x, y| {
                    image::Rgb([(i * 6) as u8, (x * 20) as u8, (y * 20) as u8])
                })
            })
            .collect();
        let items: Vec<(String, &RgbImage)> = imgs
            .iter()
            .enumerate()
            .map(|(i, im)| (format!("p{i}"), im))
            .collect();
        let refs: Vec<(&str, &RgbImage)> = items.iter().map(|(s, im)| (s.as_str(), *im)).collect();
        let fs = extract_features(&m, &refs, Preprocess::CenterCrop(8)).unwrap();
        let y: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        forensics_probe(&fs, &y, &ProbeConfig::default()).unwrap();
        assert_eq!(m.patch_params, before);
    }

    #[test]
    fn watermark_determines_make() {
        // Features are a one-hot watermark of the camera make plus noise.
        let reg = TagRegistry::standard();
        let makes = ["Canon", "NIKON CORPORATION", "SONY"];
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let n = 600;
        let records: Vec<ExifRecord> = (0..n)
            .map(|i| {
                ExifRecord::from_pairs(
                    &reg,
                    format!("w{i}"),
                    [
                        ("Camera Make".to_string(), makes[i % 3].to_string()),
                        (
                            "Color Space".to_string(),
                            if r.random_bool(0.5) {
                                "sRGB"
                            } else {
                                "Uncalibrated"
                            }
                            .to_string(),
                        ),
                    ],
                )
            })
            .collect();
        let x = Array2::from_shape_fn((n, 8), |(i, k)| {
            (if k == i % 3 { 1.0 } else { 0.0 }) + r.random_range(-0.2f32..0.2)
        });
        let fs = FeatureSet {
            ids: (0..n).map(|i| format!("w{i}")).collect(),
            features: x,
            preprocess: Preprocess::CenterCrop(8),
        };
        let qs: Vec<TagQuantizer> = ["Camera Make", "Color Space"]
            .iter()
            .map(|t| {
                let vals: Vec<String> = records
                    .iter()
                    .filter_map(|r| r.get(t).map(str::to_string))
                    .collect();
                fit_quantizer(t, &vals).unwrap()
            })
            .collect();
        let rep = exif_probe_suite(&fs, &records, &qs, &ProbeConfig::default()).unwrap();
        let make = rep.tags.iter().find(|t| t.tag == "Camera Make").unwrap();
        let cs = rep.tags.iter().find(|t| t.tag == "Color Space").unwrap();
        assert!(make.accuracy >= 0.95, "{}", make.accuracy);
        assert!((cs.accuracy - 0.5).abs() < 0.15, "{}", cs.accuracy);
        let mean = (make.accuracy + cs.accuracy) / 2.0;
        assert!((rep.macro_accuracy.unwrap() - mean).abs() < 1e-12);
        assert!(rep.to_table().contains("macro"));
    }
}
