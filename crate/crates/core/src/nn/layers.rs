use std::ops::Range;

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::{cst, view1, view1_mut, view2, view2_mut, ParamLayout, Scalar};

const K: usize = 3;
const PAD: usize = 1;

/// 3×3 convolution with padding 1, computed through im2col.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub w: Range<usize>,
    pub b: Range<usize>,
}

impl Conv2d {
    pub fn new(
        layout: &mut ParamLayout,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Self {
        let w = layout.push(format!("{name}.weight"), &[cout, cin * K * K]);
        let b = layout.push(format!("{name}.bias"), &[cout]);
        Conv2d {
            cin,
            cout,
            stride,
            w,
            b,
        }
    }

    pub fn out_dim(&self, n: usize) -> usize {
        (n + 2 * PAD - K) / self.stride + 1
    }

    fn im2col<F: Scalar>(&self, x: ArrayView3<F>) -> Array2<F> {
        let (c, h, w) = x.dim();
        let (ho, wo) = (self.out_dim(h), self.out_dim(w));
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut cols = Array2::<F>::zeros((c * K * K, ho * wo));
        let out = cols.as_slice_mut().expect("fresh array");
        for ci in 0..c {
            for ky in 0..K {
                for kx in 0..K {
                    let row = (ci * K + ky) * K + kx;
                    let dst = &mut out[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &xs[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - PAD as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * wo + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<F: Scalar>(&self, cols: &Array2<F>, h: usize, w: usize) -> Array3<F> {
        let (ho, wo) = (self.out_dim(h), self.out_dim(w));
        let mut x = Array3::<F>::zeros((self.cin, h, w));
        let xs = x.as_slice_mut().expect("fresh array");
        let cs = cols.as_slice().expect("standard layout");
        for ci in 0..self.cin {
            for ky in 0..K {
                for kx in 0..K {
                    let row = (ci * K + ky) * K + kx;
                    let src = &cs[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (ci * h + iy as usize) * w;
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - PAD as isize;
                            if ix >= 0 && ix < w as isize {
                                xs[base + ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// Returns the output map and the im2col buffer needed for backward.
    pub fn forward<F: Scalar>(&self, p: &[F], x: ArrayView3<F>) -> (Array3<F>, Array2<F>) {
        let (_, h, w) = x.dim();
        let (ho, wo) = (self.out_dim(h), self.out_dim(w));
        let cols = self.im2col(x);
        let weight = view2(p, self.w.clone(), self.cout, self.cin * K * K);
        let mut y = weight.dot(&cols);
        let bias = view1(p, self.b.clone());
        for (mut row, &b) in y.axis_iter_mut(Axis(0)).zip(bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        let y = y
            .into_shape_with_order((self.cout, ho, wo))
            .expect("conv output shape");
        (y, cols)
    }

    /// Accumulates parameter gradients and, when `need_dx`, returns the
    /// gradient with respect to the input of spatial size `in_hw`.
    pub fn backward<F: Scalar>(
        &self,
        p: &[F],
        cols: &Array2<F>,
        dy: &Array3<F>,
        in_hw: (usize, usize),
        grad: &mut [F],
        need_dx: bool,
    ) -> Option<Array3<F>> {
        let (_, ho, wo) = dy.dim();
        let dy2 = dy
            .view()
            .into_shape_with_order((self.cout, ho * wo))
            .expect("contiguous gradient");
        let mut gw = view2_mut(grad, self.w.clone(), self.cout, self.cin * K * K);
        ndarray::linalg::general_mat_mul(F::one(), &dy2, &cols.t(), F::one(), &mut gw);
        let mut gb = view1_mut(grad, self.b.clone());
        gb += &dy2.sum_axis(Axis(1));
        if !need_dx {
            return None;
        }
        let weight = view2(p, self.w.clone(), self.cout, self.cin * K * K);
        let dcols = weight.t().dot(&dy2);
        Some(self.col2im(&dcols, in_hw.0, in_hw.1))
    }
}

/// Row-wise affine map `y = x Wᵀ + b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub din: usize,
    pub dout: usize,
    pub w: Range<usize>,
    pub b: Range<usize>,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, name: &str, din: usize, dout: usize) -> Self {
        let w = layout.push(format!("{name}.weight"), &[dout, din]);
        let b = layout.push(format!("{name}.bias"), &[dout]);
        Linear { din, dout, w, b }
    }

    pub fn forward<F: Scalar>(&self, p: &[F], x: ArrayView2<F>) -> Array2<F> {
        let weight = view2(p, self.w.clone(), self.dout, self.din);
        x.dot(&weight.t()) + view1(p, self.b.clone())
    }

    pub fn backward<F: Scalar>(
        &self,
        p: &[F],
        x: ArrayView2<F>,
        dy: ArrayView2<F>,
        grad: &mut [F],
    ) -> Array2<F> {
        let mut gw = view2_mut(grad, self.w.clone(), self.dout, self.din);
        ndarray::linalg::general_mat_mul(F::one(), &dy.t(), &x, F::one(), &mut gw);
        let mut gb = view1_mut(grad, self.b.clone());
        gb += &dy.sum_axis(Axis(0));
        dy.dot(&view2(p, self.w.clone(), self.dout, self.din))
    }
}

/// Layer normalization over the last axis of a `(rows, d)` matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub d: usize,
    pub gamma: Range<usize>,
    pub beta: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<F> {
    xhat: Array2<F>,
    inv_std: Array1<F>,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(layout: &mut ParamLayout, name: &str, d: usize) -> Self {
        let gamma = layout.push(format!("{name}.gamma"), &[d]);
        let beta = layout.push(format!("{name}.beta"), &[d]);
        LayerNorm { d, gamma, beta }
    }

    pub fn forward<F: Scalar>(&self, p: &[F], x: ArrayView2<F>) -> (Array2<F>, LayerNormCache<F>) {
        let d = cst::<F>(self.d as f64);
        let mean = x.sum_axis(Axis(1)) / d;
        let centered = &x - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| F::one() / (v + cst(LN_EPS)).sqrt());
        let xhat = centered * inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &view1(p, self.gamma.clone()) + view1(p, self.beta.clone());
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward<F: Scalar>(
        &self,
        p: &[F],
        cache: &LayerNormCache<F>,
        dy: ArrayView2<F>,
        grad: &mut [F],
    ) -> Array2<F> {
        let mut gg = view1_mut(grad, self.gamma.clone());
        gg += &(&dy * &cache.xhat).sum_axis(Axis(0));
        let mut gbeta = view1_mut(grad, self.beta.clone());
        gbeta += &dy.sum_axis(Axis(0));
        let dxhat = &dy * &view1(p, self.gamma.clone());
        let d = cst::<F>(self.d as f64);
        let sum_d = dxhat.sum_axis(Axis(1));
        let sum_dx = (&dxhat * &cache.xhat).sum_axis(Axis(1));
        let mut dx = dxhat * d;
        dx = dx - sum_d.view().insert_axis(Axis(1));
        dx -= &(&cache.xhat * &sum_dx.view().insert_axis(Axis(1)));
        let scale = cache.inv_std.mapv(|s| s / d);
        dx * scale.view().insert_axis(Axis(1))
    }
}

/// Numerically stable softmax of each row.
pub fn softmax_rows<F: Scalar>(x: ArrayView2<F>) -> Array2<F> {
    let mut out = x.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Single-head bidirectional self-attention with an output projection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attention {
    pub d: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    x: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Array2<F>,
    ctx: Array2<F>,
}

impl Attention {
    pub fn new(layout: &mut ParamLayout, name: &str, d: usize) -> Self {
        Attention {
            d,
            q: Linear::new(layout, &format!("{name}.q"), d, d),
            k: Linear::new(layout, &format!("{name}.k"), d, d),
            v: Linear::new(layout, &format!("{name}.v"), d, d),
            o: Linear::new(layout, &format!("{name}.o"), d, d),
        }
    }

    pub fn forward<F: Scalar>(&self, p: &[F], x: ArrayView2<F>) -> (Array2<F>, AttentionCache<F>) {
        let q = self.q.forward(p, x);
        let k = self.k.forward(p, x);
        let v = self.v.forward(p, x);
        let scale = cst::<F>(1.0 / (self.d as f64).sqrt());
        let scores = q.dot(&k.t()) * scale;
        let probs = softmax_rows(scores.view());
        let ctx = probs.dot(&v);
        let out = self.o.forward(p, ctx.view());
        let cache = AttentionCache {
            x: x.to_owned(),
            q,
            k,
            v,
            probs,
            ctx,
        };
        (out, cache)
    }

    pub fn backward<F: Scalar>(
        &self,
        p: &[F],
        c: &AttentionCache<F>,
        dout: ArrayView2<F>,
        grad: &mut [F],
    ) -> Array2<F> {
        let dctx = self.o.backward(p, c.ctx.view(), dout, grad);
        let dprobs = dctx.dot(&c.v.t());
        let dv = c.probs.t().dot(&dctx);
        let row_dot = (&dprobs * &c.probs).sum_axis(Axis(1));
        let dscores = (&dprobs - &row_dot.view().insert_axis(Axis(1))) * &c.probs;
        let scale = cst::<F>(1.0 / (self.d as f64).sqrt());
        let dq = dscores.dot(&c.k) * scale;
        let dk = dscores.t().dot(&c.q) * scale;
        let mut dx = self.q.backward(p, c.x.view(), dq.view(), grad);
        dx += &self.k.backward(p, c.x.view(), dk.view(), grad);
        dx += &self.v.backward(p, c.x.view(), dv.view(), grad);
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu<F: Scalar>(x: F) -> F {
    let inner = cst::<F>(GELU_C) * (x + cst::<F>(0.044715) * x * x * x);
    cst::<F>(0.5) * x * (F::one() + inner.tanh())
}

pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = cst::<F>(GELU_C);
    let a = cst::<F>(0.044715);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let dinner = c * (F::one() + cst::<F>(3.0) * a * x * x);
    cst::<F>(0.5) * (F::one() + t) + cst::<F>(0.5) * x * (F::one() - t * t) * dinner
}

/// Returns `x / |x|` and `|x|`.
pub fn l2_normalize<F: Scalar>(x: ArrayView1<F>) -> (Array1<F>, F) {
    let norm = x.dot(&x).sqrt().max(cst(1e-12));
    (x.mapv(|v| v / norm), norm)
}

/// Gradient through [`l2_normalize`] given its output `y` and input norm.
pub fn l2_normalize_backward<F: Scalar>(y: ArrayView1<F>, norm: F, dy: ArrayView1<F>) -> Array1<F> {
    let proj = y.dot(&dy);
    let mut dx = Array1::zeros(y.len());
    Zip::from(&mut dx)
        .and(&y)
        .and(&dy)
        .for_each(|o, &yi, &di| *o = (di - yi * proj) / norm);
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Init};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(
        x: &Array3<f64>,
        w: ArrayView2<f64>,
        b: ArrayView1<f64>,
        cout: usize,
        stride: usize,
    ) -> Array3<f64> {
        let (cin, h, wd) = x.dim();
        let ho = (h + 2 - 3) / stride + 1;
        let wo = (wd + 2 - 3) / stride + 1;
        let mut y = Array3::zeros((cout, ho, wo));
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as isize - 1;
                                let ix = (ox * stride + kx) as isize - 1;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w[[co, ci * 9 + ky * 3 + kx]]
                                        * x[[ci, iy as usize, ix as usize]];
                                }
                            }
                        }
                    }
                    y[[co, oy, ox]] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive_loop() {
        let mut layout = ParamLayout::new();
        for stride in [1, 2] {
            let conv = Conv2d::new(&mut layout, &format!("c{stride}"), 2, 3, stride);
            let mut rng = ChaCha8Rng::seed_from_u64(stride as u64);
            let p: Vec<f64> = init_params(&layout, &[("", Init::Normal(1.0))], &mut rng)
                .into_iter()
                .map(f64::from)
                .collect();
            let x = Array3::from_shape_fn((2, 7, 6), |(c, y, x)| {
                ((c * 31 + y * 7 + x) % 11) as f64 - 5.0
            });
            let (y, _) = conv.forward(&p, x.view());
            let expected = naive_conv(
                &x,
                view2(&p, conv.w.clone(), 3, 18),
                view1(&p, conv.b.clone()),
                3,
                stride,
            );
            assert_eq!(y.dim(), expected.dim());
            for (a, b) in y.iter().zip(expected.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for i in -40..40 {
            let x = i as f64 / 10.0;
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = ndarray::array![[1000.0f64, 1000.0], [0.0, -1000.0]];
        let s = softmax_rows(x.view());
        assert!((s[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((s[[1, 0]] - 1.0).abs() < 1e-15);
    }
}

#[cfg(test)]
mod grad_tests {
    use super::*;
    use crate::nn::{init_params, Init};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Checks d/dθ and d/dx of sum(c ⊙ f(θ, x)) along random directions.
    fn check<Fwd, Bwd>(n_params: usize, x: Array2<f64>, fwd: Fwd, bwd: Bwd)
    where
        Fwd: Fn(&[f64], &Array2<f64>) -> Array2<f64>,
        Bwd: Fn(&[f64], &Array2<f64>, &Array2<f64>, &mut [f64]) -> Array2<f64>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p: Vec<f64> = (0..n_params).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = fwd(&p, &x);
        let c = out.mapv(|_| rng.random_range(-1.0..1.0));
        let f = |q: &[f64], xx: &Array2<f64>| (&fwd(q, xx) * &c).sum();
        let mut grad = vec![0.0; n_params];
        let dx = bwd(&p, &x, &c, &mut grad);
        let h = 1e-5;
        let dir: Vec<f64> = (0..n_params).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pp: Vec<f64> = p.iter().zip(&dir).map(|(a, d)| a + h * d).collect();
        let pm: Vec<f64> = p.iter().zip(&dir).map(|(a, d)| a - h * d).collect();
        let fd = (f(&pp, &x) - f(&pm, &x)) / (2.0 * h);
        let an: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        assert!(
            (fd - an).abs() < 1e-6 * fd.abs().max(1.0),
            "param fd {fd} an {an}"
        );
        let xdir = x.mapv(|_| rng.random_range(-1.0..1.0));
        let fd = (f(&p, &(&x + &(&xdir * h))) - f(&p, &(&x - &(&xdir * h)))) / (2.0 * h);
        let an = (&dx * &xdir).sum();
        assert!(
            (fd - an).abs() < 1e-6 * fd.abs().max(1.0),
            "input fd {fd} an {an}"
        );
    }

    fn input(r: usize, c: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn linear_gradients() {
        let mut l = ParamLayout::new();
        let lin = Linear::new(&mut l, "l", 4, 3);
        check(
            l.len(),
            input(5, 4),
            |p, x| lin.forward(p, x.view()),
            |p, x, dy, g| lin.backward(p, x.view(), dy.view(), g),
        );
    }

    #[test]
    fn layer_norm_gradients() {
        let mut l = ParamLayout::new();
        let ln = LayerNorm::new(&mut l, "n", 6);
        check(
            l.len(),
            input(3, 6),
            |p, x| ln.forward(p, x.view()).0,
            |p, x, dy, g| {
                let (_, c) = ln.forward(p, x.view());
                ln.backward(p, &c, dy.view(), g)
            },
        );
    }

    #[test]
    fn attention_gradients() {
        let mut l = ParamLayout::new();
        let at = Attention::new(&mut l, "a", 4);
        check(
            l.len(),
            input(5, 4),
            |p, x| at.forward(p, x.view()).0,
            |p, x, dy, g| {
                let (_, c) = at.forward(p, x.view());
                at.backward(p, &c, dy.view(), g)
            },
        );
        let _ = init_params(&l, &[("", Init::Zeros)], &mut ChaCha8Rng::seed_from_u64(0));
    }
}
