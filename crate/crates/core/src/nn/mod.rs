//! Minimal differentiable building blocks over `ndarray`.
//!
//! Every model keeps its weights in one flat parameter vector; layers hold
//! index ranges into it. The same vector feeds the optimizer, the
//! checkpoint and finite-difference gradient checks. All layers are generic
//! over the float type so checks can run in `f64` while training uses `f32`.

mod layers;
mod optim;

pub use layers::{
    gelu, gelu_grad, l2_normalize, l2_normalize_backward, softmax_rows, Attention, AttentionCache,
    Conv2d, LayerNorm, LayerNormCache, Linear,
};
pub use optim::{cosine_lr, AdamW, AdamWConfig};

use std::ops::Range;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, NdFloat};
use num_traits::FromPrimitive;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Float types the layers run on.
pub trait Scalar: NdFloat + FromPrimitive + std::iter::Sum {}
impl<T: NdFloat + FromPrimitive + std::iter::Sum> Scalar for T {}

#[inline]
pub fn cst<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("representable constant")
}

/// One named tensor inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered description of a flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its range.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> Range<usize> {
        let entry = ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.total,
        };
        self.total += entry.len();
        let range = entry.range();
        self.entries.push(entry);
        range
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Initialization rule for one tensor.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

pub fn init_params<R: Rng + ?Sized>(
    layout: &ParamLayout,
    rules: &[(&str, Init)],
    rng: &mut R,
) -> Vec<f32> {
    let mut out = vec![0.0f32; layout.len()];
    for entry in layout.entries() {
        let rule = rules
            .iter()
            .find(|(prefix, _)| entry.name.ends_with(prefix))
            .map(|(_, r)| *r)
            .unwrap_or(Init::Zeros);
        let slot = &mut out[entry.range()];
        match rule {
            Init::Zeros => {}
            Init::Ones => slot.iter_mut().for_each(|v| *v = 1.0),
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("positive std");
                slot.iter_mut().for_each(|v| *v = dist.sample(rng) as f32);
            }
        }
    }
    out
}

pub(crate) fn view1<F>(p: &[F], r: Range<usize>) -> ArrayView1<'_, F> {
    ArrayView1::from(&p[r])
}

pub(crate) fn view2<F>(p: &[F], r: Range<usize>, rows: usize, cols: usize) -> ArrayView2<'_, F> {
    ArrayView2::from_shape((rows, cols), &p[r]).expect("layout shape")
}

pub(crate) fn view1_mut<F>(p: &mut [F], r: Range<usize>) -> ArrayViewMut1<'_, F> {
    ArrayViewMut1::from(&mut p[r])
}

pub(crate) fn view2_mut<F>(
    p: &mut [F],
    r: Range<usize>,
    rows: usize,
    cols: usize,
) -> ArrayViewMut2<'_, F> {
    ArrayViewMut2::from_shape((rows, cols), &mut p[r]).expect("layout shape")
}

/// Casts a parameter vector to another float type.
pub fn cast_params<A: Scalar, B: Scalar>(p: &[A]) -> Vec<B> {
    p.iter()
        .map(|v| B::from(*v).expect("finite parameter"))
        .collect()
}
