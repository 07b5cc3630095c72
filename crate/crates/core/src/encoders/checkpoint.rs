//! Versioned JSON checkpoints of the dual encoder and optimizer state.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DualEncoder, ModelConfig, PatchEncoder, PixelNorm, TextEncoder, Tokenizer};
use crate::error::{Error, Result};
use crate::nn::AdamW;

pub const CHECKPOINT_FORMAT: &str = "camsig-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub tokenizer: Tokenizer,
    pub pixel_norm: PixelNorm,
    pub patch_params: Vec<f32>,
    pub text_params: Vec<f32>,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Adam state over the concatenated patch and text parameters.
    pub optimizer: Option<AdamW>,
    /// Free-form training configuration, kept for provenance and resume.
    pub training: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn from_model(
        model: &DualEncoder,
        step: u64,
        optimizer: Option<AdamW>,
        training: Option<serde_json::Value>,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: model.config.clone(),
            tokenizer: model.tokenizer.clone(),
            pixel_norm: model.pixel_norm,
            patch_params: model.patch_params.clone(),
            text_params: model.text_params.clone(),
            step,
            optimizer,
            training,
        }
    }

    /// Rebuilds the model, checking parameter counts against the stored
    /// architecture.
    pub fn to_model(&self) -> Result<DualEncoder> {
        let patch = PatchEncoder::new(self.model.patch.clone())?;
        let text = TextEncoder::new(self.model.text.clone())?;
        if patch.n_params() != self.patch_params.len() || text.n_params() != self.text_params.len()
        {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: patch {}/{}, text {}/{}",
                self.patch_params.len(),
                patch.n_params(),
                self.text_params.len(),
                text.n_params()
            )));
        }
        if self.tokenizer.vocab_size() != self.model.text.vocab_size {
            return Err(Error::Checkpoint(
                "tokenizer does not match text encoder vocabulary".into(),
            ));
        }
        if self
            .patch_params
            .iter()
            .chain(&self.text_params)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(DualEncoder {
            config: self.model.clone(),
            patch,
            text,
            tokenizer: self.tokenizer.clone(),
            pixel_norm: self.pixel_norm,
            patch_params: self.patch_params.clone(),
            text_params: self.text_params.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let header: Header = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("unreadable header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format {:?}",
                header.format
            )));
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version {} but this build reads version {CHECKPOINT_VERSION}",
                header.version
            )));
        }
        let mut ck: Checkpoint = serde_json::from_str(text)?;
        ck.tokenizer = ck.tokenizer.rebuild();
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Hex SHA-256 of the serialized weights and architecture; changes
    /// whenever anything affecting inference changes.
    pub fn weights_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.model).unwrap_or_default());
        h.update(serde_json::to_vec(&self.pixel_norm).unwrap_or_default());
        for v in self.patch_params.iter().chain(&self.text_params) {
            h.update(v.to_le_bytes());
        }
        for t in self.tokenizer.vocab() {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}
