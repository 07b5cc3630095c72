//! Convolutional patch encoder: conv/ReLU stack, global average pooling,
//! linear projection and L2 normalization.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    cst, init_params, l2_normalize, l2_normalize_backward, Conv2d, Init, Linear, ParamLayout,
    Scalar,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchEncoderConfig {
    pub patch_side: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for PatchEncoderConfig {
    fn default() -> Self {
        PatchEncoderConfig {
            patch_side: 32,
            channels: vec![16, 32, 64],
            strides: vec![1, 2, 2],
            embed_dim: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchEncoder {
    pub config: PatchEncoderConfig,
    pub layout: ParamLayout,
    convs: Vec<Conv2d>,
    proj: Linear,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct PatchCache<F> {
    cols: Vec<Array2<F>>,
    acts: Vec<Array3<F>>,
    in_hw: Vec<(usize, usize)>,
    pooled: Array1<F>,
    emb: Array1<F>,
    norm: F,
}

impl<F: Scalar> PatchCache<F> {
    pub fn embedding(&self) -> &Array1<F> {
        &self.emb
    }

    pub fn pooled(&self) -> &Array1<F> {
        &self.pooled
    }
}

impl PatchEncoder {
    pub fn new(config: PatchEncoderConfig) -> Result<Self> {
        if config.channels.is_empty() || config.channels.len() != config.strides.len() {
            return Err(Error::invalid(
                "patch encoder needs one stride per conv layer",
            ));
        }
        if config.patch_side == 0 || config.embed_dim == 0 || config.strides.contains(&0) {
            return Err(Error::invalid("patch encoder sizes must be positive"));
        }
        let mut layout = ParamLayout::new();
        let mut cin = 3;
        let mut convs = Vec::new();
        for (i, (&c, &s)) in config.channels.iter().zip(&config.strides).enumerate() {
            convs.push(Conv2d::new(&mut layout, &format!("conv{i}"), cin, c, s));
            cin = c;
        }
        let proj = Linear::new(&mut layout, "proj", cin, config.embed_dim);
        Ok(PatchEncoder {
            config,
            layout,
            convs,
            proj,
        })
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    /// Width of the pooled pre-projection features.
    pub fn feature_dim(&self) -> usize {
        *self.config.channels.last().expect("non-empty")
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f32> {
        let mut out = vec![0.0f32; self.layout.len()];
        for conv in &self.convs {
            let fan_in = conv.cin * 9;
            let p = init_params(
                &self.layout,
                &[("", Init::Normal((2.0 / fan_in as f64).sqrt()))],
                rng,
            );
            out[conv.w.clone()].copy_from_slice(&p[conv.w.clone()]);
        }
        let std = (1.0 / self.proj.din as f64).sqrt();
        let p = init_params(&self.layout, &[("", Init::Normal(std))], rng);
        out[self.proj.w.clone()].copy_from_slice(&p[self.proj.w.clone()]);
        out
    }

    /// Conv stack and global average pooling on an input of any spatial
    /// size; returns pooled features and the cache for backward.
    fn trunk<F: Scalar>(
        &self,
        p: &[F],
        x: ArrayView3<F>,
    ) -> (
        Array1<F>,
        Vec<Array2<F>>,
        Vec<Array3<F>>,
        Vec<(usize, usize)>,
    ) {
        let mut cols = Vec::with_capacity(self.convs.len());
        let mut acts: Vec<Array3<F>> = Vec::with_capacity(self.convs.len());
        let mut in_hw = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let input = acts.last().map(|a| a.view()).unwrap_or(x);
            let (_, h, w) = input.dim();
            in_hw.push((h, w));
            let (mut y, c) = conv.forward(p, input);
            y.mapv_inplace(|v| v.max(F::zero()));
            cols.push(c);
            acts.push(y);
        }
        let last = acts.last().expect("non-empty");
        let (c, h, w) = last.dim();
        let pooled = last
            .view()
            .into_shape_with_order((c, h * w))
            .expect("contiguous")
            .mean_axis(Axis(1))
            .expect("non-empty map");
        (pooled, cols, acts, in_hw)
    }

    /// Pooled pre-projection features of an image tensor of any size.
    pub fn features<F: Scalar>(&self, p: &[F], x: ArrayView3<F>) -> Array1<F> {
        self.trunk(p, x).0
    }

    pub fn forward<F: Scalar>(&self, p: &[F], x: ArrayView3<F>) -> Result<PatchCache<F>> {
        let s = self.config.patch_side;
        if x.dim() != (3, s, s) {
            return Err(Error::invalid(format!(
                "patch input {:?}, expected (3, {s}, {s})",
                x.dim()
            )));
        }
        let (pooled, cols, acts, in_hw) = self.trunk(p, x);
        let z = self.proj.forward(p, pooled.view().insert_axis(Axis(0)));
        let (emb, norm) = l2_normalize(z.row(0));
        Ok(PatchCache {
            cols,
            acts,
            in_hw,
            pooled,
            emb,
            norm,
        })
    }

    /// Accumulates into `grad` the gradient of a scalar whose gradient with
    /// respect to the embedding is `d_emb`.
    pub fn backward<F: Scalar>(
        &self,
        p: &[F],
        cache: &PatchCache<F>,
        d_emb: ArrayView1<F>,
        grad: &mut [F],
    ) {
        let dz = l2_normalize_backward(cache.emb.view(), cache.norm, d_emb);
        let dpooled = self.proj.backward(
            p,
            cache.pooled.view().insert_axis(Axis(0)),
            dz.view().insert_axis(Axis(0)),
            grad,
        );
        let last = cache.acts.last().expect("non-empty");
        let (c, h, w) = last.dim();
        let inv = cst::<F>(1.0 / (h * w) as f64);
        let mut dy = Array3::<F>::zeros((c, h, w));
        for (ci, mut plane) in dy.axis_iter_mut(Axis(0)).enumerate() {
            plane.fill(dpooled[[0, ci]] * inv);
        }
        for i in (0..self.convs.len()).rev() {
            // ReLU mask from the stored activation.
            dy.zip_mut_with(&cache.acts[i], |g, &a| {
                if a <= F::zero() {
                    *g = F::zero();
                }
            });
            let next = self.convs[i].backward(p, &cache.cols[i], &dy, cache.in_hw[i], grad, i > 0);
            match next {
                Some(d) => dy = d,
                None => break,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::cast_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy() -> PatchEncoder {
        PatchEncoder::new(PatchEncoderConfig {
            patch_side: 8,
            channels: vec![3, 4],
            strides: vec![1, 2],
            embed_dim: 5,
        })
        .unwrap()
    }

    fn input(seed: u64, s: usize) -> Array3<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((3, s, s), |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn output_is_unit_norm_and_deterministic() {
        let enc = PatchEncoder::new(PatchEncoderConfig::default()).unwrap();
        let p: Vec<f32> = enc.init(&mut ChaCha8Rng::seed_from_u64(0));
        let x = input(1, 32).mapv(|v| v as f32);
        let a = enc.forward(&p, x.view()).unwrap();
        let b = enc.forward(&p, x.view()).unwrap();
        assert!((a.embedding().dot(a.embedding()) - 1.0).abs() < 1e-5);
        assert_eq!(a.embedding(), b.embedding());
        assert!(enc
            .forward(&p, input(1, 16).mapv(|v| v as f32).view())
            .is_err());
    }

    #[test]
    fn jacobian_vector_products_match_finite_differences() {
        let enc = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p: Vec<f64> = cast_params(&enc.init(&mut rng));
        // Shift biases off zero so the ReLUs are not all at a kink.
        let p: Vec<f64> = p
            .iter()
            .map(|v| v + rng.random_range(-0.05..0.05))
            .collect();
        let x = input(2, 8);
        let c = Array1::from_shape_fn(5, |_| rng.random_range(-1.0..1.0));
        let f = |q: &[f64]| enc.forward(q, x.view()).unwrap().embedding().dot(&c);
        let cache = enc.forward(&p, x.view()).unwrap();
        let mut grad = vec![0.0; p.len()];
        enc.backward(&p, &cache, c.view(), &mut grad);
        for _ in 0..5 {
            let dir: Vec<f64> = (0..p.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let len = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            let dir: Vec<f64> = dir.iter().map(|d| d / len).collect();
            let h = 1e-4;
            let plus: Vec<f64> = p.iter().zip(&dir).map(|(a, d)| a + h * d).collect();
            let minus: Vec<f64> = p.iter().zip(&dir).map(|(a, d)| a - h * d).collect();
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let an: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
            assert!(
                (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8) < 1e-4,
                "fd {fd} an {an}"
            );
        }
    }
}
