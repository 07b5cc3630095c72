//! On-disk store of grid embeddings, keyed by content hashes of the pixels,
//! the grid and the checkpoint weights, so any change to those misses.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{Context, Result};
use camsig_core::encoders::DualEncoder;
use camsig_core::patch::PatchGrid;
use camsig_core::splice::embed_grid;
use image::RgbImage;
use log::{debug, warn};
use ndarray::Array2;
use sha2::{Digest, Sha256};

pub struct EmbeddingCache {
    dir: PathBuf,
    enabled: bool,
    pub hits: AtomicUsize,
    pub misses: AtomicUsize,
}

pub fn key(image: &RgbImage, grid: &PatchGrid, weights_hash: &str) -> String {
    let mut h = Sha256::new();
    h.update(weights_hash.as_bytes());
    h.update(image.width().to_le_bytes());
    h.update(image.height().to_le_bytes());
    h.update(image.as_raw());
    for p in &grid.patches {
        h.update(p.x.to_le_bytes());
        h.update(p.y.to_le_bytes());
        h.update(p.side.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn encode(m: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * m.len());
    out.extend((m.nrows() as u64).to_le_bytes());
    out.extend((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        out.extend(v.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8]) -> Option<Array2<f64>> {
    let rows = u64::from_le_bytes(bytes.get(0..8)?.try_into().ok()?) as usize;
    let cols = u64::from_le_bytes(bytes.get(8..16)?.try_into().ok()?) as usize;
    let body = bytes.get(16..)?;
    if body.len() != rows.checked_mul(cols)?.checked_mul(8)? {
        return None;
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Array2::from_shape_vec((rows, cols), data).ok()
}

impl EmbeddingCache {
    pub fn new(dir: PathBuf, enabled: bool) -> Self {
        EmbeddingCache {
            dir,
            enabled,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.emb"))
    }

    /// Cached embeddings, or computed and stored.
    pub fn embed(
        &self,
        model: &DualEncoder,
        weights_hash: &str,
        image: &RgbImage,
        grid: &PatchGrid,
    ) -> Result<Array2<f64>> {
        if !self.enabled {
            return Ok(embed_grid(model, image, grid)?);
        }
        let k = key(image, grid, weights_hash);
        let path = self.path(&k);
        if let Ok(bytes) = std::fs::read(&path) {
            match decode(&bytes) {
                Some(m) if m.nrows() == grid.len() => {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                    return Ok(m);
                }
                _ => warn!("ignoring corrupt cache entry {}", path.display()),
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let m = embed_grid(model, image, grid)?;
        store(&path, &encode(&m))?;
        debug!("cached {}", path.display());
        Ok(m)
    }
}

/// Write-then-rename so concurrent readers never see a partial file.
fn store(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().expect("cache path has a parent");
    std::fs::create_dir_all(parent)
        .with_context(|| format!("creating cache directory {}", parent.display()))?;
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}
