//! Small pre-norm transformer over token ids; the embedding is read from the
//! final (end-of-sequence) position.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    gelu, gelu_grad, init_params, l2_normalize, l2_normalize_backward, view2, view2_mut, Attention,
    AttentionCache, Init, LayerNorm, LayerNormCache, Linear, ParamLayout, Scalar,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub width: usize,
    pub layers: usize,
    pub mlp_ratio: usize,
    pub embed_dim: usize,
    /// Learned positional embeddings; without them the encoder is
    /// permutation-invariant over non-final tokens.
    pub positional: bool,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        TextEncoderConfig {
            vocab_size: 0,
            max_len: 256,
            width: 64,
            layers: 1,
            mlp_ratio: 2,
            embed_dim: 128,
            positional: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Block {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
struct BlockCache<F> {
    ln1: LayerNormCache<F>,
    attn: AttentionCache<F>,
    ln2: LayerNormCache<F>,
    h2: Array2<F>,
    pre_act: Array2<F>,
    act: Array2<F>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextEncoder {
    pub config: TextEncoderConfig,
    pub layout: ParamLayout,
    tok: std::ops::Range<usize>,
    pos: std::ops::Range<usize>,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    proj: Linear,
}

#[derive(Debug, Clone)]
pub struct TextCache<F> {
    ids: Vec<u32>,
    blocks: Vec<BlockCache<F>>,
    ln_f: LayerNormCache<F>,
    last: Array1<F>,
    emb: Array1<F>,
    norm: F,
}

impl<F: Scalar> TextCache<F> {
    pub fn embedding(&self) -> &Array1<F> {
        &self.emb
    }
}

impl TextEncoder {
    pub fn new(config: TextEncoderConfig) -> Result<Self> {
        if config.vocab_size == 0
            || config.width == 0
            || config.max_len == 0
            || config.embed_dim == 0
        {
            return Err(Error::invalid("text encoder sizes must be positive"));
        }
        let d = config.width;
        let mut layout = ParamLayout::new();
        let tok = layout.push("tok_emb", &[config.vocab_size, d]);
        let pos = layout.push(
            "pos_emb",
            &[if config.positional { config.max_len } else { 0 }, d],
        );
        let blocks = (0..config.layers)
            .map(|i| Block {
                ln1: LayerNorm::new(&mut layout, &format!("block{i}.ln1"), d),
                attn: Attention::new(&mut layout, &format!("block{i}.attn"), d),
                ln2: LayerNorm::new(&mut layout, &format!("block{i}.ln2"), d),
                fc1: Linear::new(
                    &mut layout,
                    &format!("block{i}.fc1"),
                    d,
                    d * config.mlp_ratio,
                ),
                fc2: Linear::new(
                    &mut layout,
                    &format!("block{i}.fc2"),
                    d * config.mlp_ratio,
                    d,
                ),
            })
            .collect();
        let ln_f = LayerNorm::new(&mut layout, "ln_f", d);
        let proj = Linear::new(&mut layout, "proj", d, config.embed_dim);
        Ok(TextEncoder {
            config,
            layout,
            tok,
            pos,
            blocks,
            ln_f,
            proj,
        })
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f32> {
        let d = self.config.width as f64;
        let hidden = (self.config.width * self.config.mlp_ratio) as f64;
        let mut out = init_params(
            &self.layout,
            &[
                ("_emb", Init::Normal(0.1)),
                (".gamma", Init::Ones),
                (".beta", Init::Zeros),
                (".bias", Init::Zeros),
            ],
            rng,
        );
        // Linear weights scaled by fan-in.
        let scaled = init_params(&self.layout, &[("", Init::Normal(1.0))], rng);
        for e in self.layout.entries() {
            if e.name.ends_with(".weight") {
                let fan_in = if e.name.contains("fc2") { hidden } else { d };
                let std = (1.0 / fan_in).sqrt() as f32;
                for i in e.range() {
                    out[i] = scaled[i] * std;
                }
            }
        }
        out
    }

    pub fn forward<F: Scalar>(&self, p: &[F], ids: &[u32]) -> Result<TextCache<F>> {
        let cfg = &self.config;
        if ids.is_empty() {
            return Err(Error::invalid("cannot encode an empty token sequence"));
        }
        if ids.len() > cfg.max_len {
            return Err(Error::invalid(format!(
                "{} tokens exceed max length {}",
                ids.len(),
                cfg.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
            return Err(Error::invalid(format!("token id {bad} outside vocabulary")));
        }
        let d = cfg.width;
        let tok = view2(p, self.tok.clone(), cfg.vocab_size, d);
        let mut x = Array2::<F>::zeros((ids.len(), d));
        for (t, &id) in ids.iter().enumerate() {
            x.row_mut(t).assign(&tok.row(id as usize));
        }
        if cfg.positional {
            let pos = view2(p, self.pos.clone(), cfg.max_len, d);
            x += &pos.slice(s![..ids.len(), ..]);
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (h, ln1) = b.ln1.forward(p, x.view());
            let (a, attn) = b.attn.forward(p, h.view());
            x += &a;
            let (h2, ln2) = b.ln2.forward(p, x.view());
            let pre_act = b.fc1.forward(p, h2.view());
            let act = pre_act.mapv(gelu);
            x += &b.fc2.forward(p, act.view());
            caches.push(BlockCache {
                ln1,
                attn,
                ln2,
                h2,
                pre_act,
                act,
            });
        }
        let last_row = x.slice(s![ids.len() - 1..ids.len(), ..]);
        let (hn, ln_f) = self.ln_f.forward(p, last_row);
        let z = self.proj.forward(p, hn.view());
        let (emb, norm) = l2_normalize(z.row(0));
        Ok(TextCache {
            ids: ids.to_vec(),
            blocks: caches,
            ln_f,
            last: hn.row(0).to_owned(),
            emb,
            norm,
        })
    }

    pub fn backward<F: Scalar>(
        &self,
        p: &[F],
        cache: &TextCache<F>,
        d_emb: ArrayView1<F>,
        grad: &mut [F],
    ) {
        let cfg = &self.config;
        let t_len = cache.ids.len();
        let dz = l2_normalize_backward(cache.emb.view(), cache.norm, d_emb);
        let dhn = self.proj.backward(
            p,
            cache.last.view().insert_axis(Axis(0)),
            dz.view().insert_axis(Axis(0)),
            grad,
        );
        let dlast = self.ln_f.backward(p, &cache.ln_f, dhn.view(), grad);
        let mut dx = Array2::<F>::zeros((t_len, cfg.width));
        dx.row_mut(t_len - 1).assign(&dlast.row(0));
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            // x_out = x_mid + fc2(gelu(fc1(ln2(x_mid))))
            let dact = b.fc2.backward(p, c.act.view(), dx.view(), grad);
            let dpre = dact * &c.pre_act.mapv(gelu_grad);
            let dh2 = b.fc1.backward(p, c.h2.view(), dpre.view(), grad);
            dx += &b.ln2.backward(p, &c.ln2, dh2.view(), grad);
            // x_mid = x_in + attn(ln1(x_in))
            let dh = b.attn.backward(p, &c.attn, dx.view(), grad);
            dx += &b.ln1.backward(p, &c.ln1, dh.view(), grad);
        }
        {
            let mut gtok = view2_mut(grad, self.tok.clone(), cfg.vocab_size, cfg.width);
            for (t, &id) in cache.ids.iter().enumerate() {
                let mut row = gtok.row_mut(id as usize);
                row += &dx.row(t);
            }
        }
        if cfg.positional {
            let mut gpos = view2_mut(grad, self.pos.clone(), cfg.max_len, cfg.width);
            let mut used = gpos.slice_mut(s![..t_len, ..]);
            used += &dx;
        }
    }
}
