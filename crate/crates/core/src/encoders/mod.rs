//! The dual encoder: a convolutional patch encoder and a transformer text
//! encoder mapping into one unit-norm embedding space.

mod checkpoint;
mod patch;
mod text;
mod tokenizer;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use patch::{PatchCache, PatchEncoder, PatchEncoderConfig};
pub use text::{TextCache, TextEncoder, TextEncoderConfig};
pub use tokenizer::{
    TokenSeq, Tokenizer, DEFAULT_MAX_LEN, DEFAULT_MAX_VOCAB, EOS_ID, PAD_ID, UNK_ID,
};

use image::RgbImage;
use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel pixel standardization measured on a training corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelNorm {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PixelNorm {
    fn default() -> Self {
        PixelNorm {
            mean: [0.5; 3],
            std: [0.25; 3],
        }
    }
}

impl PixelNorm {
    /// Mean and standard deviation of each channel over all pixels (values
    /// scaled to [0, 1]).
    pub fn fit<'a, I: IntoIterator<Item = &'a RgbImage>>(images: I) -> Result<Self> {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut n = 0u64;
        for img in images {
            for px in img.pixels() {
                for c in 0..3 {
                    let v = px.0[c] as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::data("no pixels to fit normalization"));
        }
        let mut out = PixelNorm::default();
        for c in 0..3 {
            let m = sum[c] / n as f64;
            let var = (sq[c] / n as f64 - m * m).max(1e-8);
            out.mean[c] = m as f32;
            out.std[c] = var.sqrt() as f32;
        }
        Ok(out)
    }

    /// Channel-first standardized tensor.
    pub fn tensor(&self, img: &RgbImage) -> Array3<f32> {
        let (w, h) = img.dimensions();
        let mut out = Array3::<f32>::zeros((3, h as usize, w as usize));
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out[[c, y as usize, x as usize]] =
                    (px.0[c] as f32 / 255.0 - self.mean[c]) / self.std[c];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub patch: PatchEncoderConfig,
    pub text: TextEncoderConfig,
    /// Contrastive temperature, reused for scoring.
    pub tau: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            patch: PatchEncoderConfig::default(),
            text: TextEncoderConfig::default(),
            tau: 0.07,
        }
    }
}

/// Architecture plus frozen-or-training weights of both encoders.
#[derive(Debug, Clone)]
pub struct DualEncoder {
    pub config: ModelConfig,
    pub patch: PatchEncoder,
    pub text: TextEncoder,
    pub tokenizer: Tokenizer,
    pub pixel_norm: PixelNorm,
    pub patch_params: Vec<f32>,
    pub text_params: Vec<f32>,
}

impl DualEncoder {
    /// Fresh randomly initialized model; the text vocabulary size comes from
    /// the tokenizer.
    pub fn new<R: Rng + ?Sized>(
        mut config: ModelConfig,
        tokenizer: Tokenizer,
        pixel_norm: PixelNorm,
        rng: &mut R,
    ) -> Result<Self> {
        if !(config.tau > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        config.text.vocab_size = tokenizer.vocab_size();
        config.text.max_len = tokenizer.max_len;
        if config.patch.embed_dim != config.text.embed_dim {
            return Err(Error::invalid("patch and text embedding sizes differ"));
        }
        let patch = PatchEncoder::new(config.patch.clone())?;
        let text = TextEncoder::new(config.text.clone())?;
        let patch_params = patch.init(rng);
        let text_params = text.init(rng);
        Ok(DualEncoder {
            config,
            patch,
            text,
            tokenizer,
            pixel_norm,
            patch_params,
            text_params,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.patch.embed_dim
    }

    pub fn patch_side(&self) -> u32 {
        self.config.patch.patch_side as u32
    }

    pub fn encode_patch(&self, block: &RgbImage) -> Result<Array1<f32>> {
        let x = self.pixel_norm.tensor(block);
        Ok(self
            .patch
            .forward(&self.patch_params, x.view())?
            .embedding()
            .clone())
    }

    /// Embeds many patches; rows follow input order.
    pub fn encode_patches(&self, blocks: &[RgbImage]) -> Result<Array2<f32>> {
        let rows: Vec<Array1<f32>> = blocks
            .par_iter()
            .map(|b| self.encode_patch(b))
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((rows.len(), self.embed_dim()));
        for (i, r) in rows.iter().enumerate() {
            out.row_mut(i).assign(r);
        }
        Ok(out)
    }

    pub fn encode_tokens(&self, seq: &TokenSeq) -> Result<Array1<f32>> {
        Ok(self
            .text
            .forward(&self.text_params, seq.ids())?
            .embedding()
            .clone())
    }

    pub fn encode_text(&self, text: &str) -> Result<Array1<f32>> {
        self.encode_tokens(&self.tokenizer.encode(text)?)
    }

    /// Pooled pre-projection features of a whole image of any size.
    pub fn image_features(&self, img: &RgbImage) -> Array1<f32> {
        let x = self.pixel_norm.tensor(img);
        self.patch.features(&self.patch_params, x.view())
    }
}
