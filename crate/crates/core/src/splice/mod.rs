//! Zero-shot splice detection and localization from patch embeddings.

mod meanshift;
mod ncut;

pub use meanshift::{bandwidth, mean_shift, mean_shift_response, Modes};
pub use ncut::{
    best_threshold_split, cut_contrast, fiedler_vector, ncut_partition, ncut_value,
    shifted_weights, Partition, NO_CUT_CONTRAST,
};

use image::RgbImage;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::encoders::DualEncoder;
use crate::error::{Error, Result};
use crate::patch::{
    accumulate_overlaps, build_grid, DenseMap, Mask, PatchGrid, DEFAULT_GRID_LONGEST,
};

/// Pairwise dot products of unit-norm patch embeddings (one per row).
pub fn affinity(embeddings: ArrayView2<f64>) -> Result<Array2<f64>> {
    for (i, row) in embeddings.rows().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if !n.is_finite() || (n - 1.0).abs() > 1e-3 {
            return Err(Error::invalid(format!(
                "embedding {i} has norm {n}, expected 1"
            )));
        }
    }
    let mut a = embeddings.dot(&embeddings.t());
    // Exact symmetry regardless of summation order.
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    Ok(a)
}

/// Image-level consistency: `φ = Σ exp(A/τ)` and its size-free form
/// `φ̄ = φ / (P² e^{1/τ})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    pub phi: f64,
    /// `ln φ`, finite even when `φ` itself overflows.
    pub log_phi: f64,
    pub phi_bar: f64,
}

pub fn image_score(a: ArrayView2<f64>, tau: f64) -> Result<Consistency> {
    if !(tau > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let (n, m) = a.dim();
    if n != m || n == 0 {
        return Err(Error::invalid("affinity must be square and non-empty"));
    }
    // Factor out e^{1/τ}: every term exp((A − 1)/τ) is at most ~1.
    let s: f64 = a.iter().map(|&v| ((v - 1.0) / tau).exp()).sum();
    let log_phi = 1.0 / tau + s.ln();
    Ok(Consistency {
        phi: log_phi.exp(),
        log_phi,
        phi_bar: s / (n * n) as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeConfig {
    /// Patches along the longest image side.
    pub grid_longest: usize,
    pub tau: f64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            grid_longest: DEFAULT_GRID_LONGEST,
            tau: 0.07,
        }
    }
}

/// Everything the pipeline produces for one image.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub grid: PatchGrid,
    pub score: Consistency,
    /// Per-patch mean-shift response (low = unlike the dominant source).
    pub patch_response: Vec<f64>,
    pub response: DenseMap,
    pub partition: Partition,
    /// Spliced pixels; at most half of the image.
    pub mask: Mask,
}

impl Analysis {
    pub fn has_splice(&self) -> bool {
        self.mask.count() > 0
    }
}

/// Grid used for an image of the given size.
pub fn analysis_grid(width: u32, height: u32, side: u32, cfg: &AnalyzeConfig) -> Result<PatchGrid> {
    if width == side && height == side {
        return build_grid(width, height, side, 2);
    }
    build_grid(width, height, side, cfg.grid_longest)
}

/// Embeds every grid patch of `image`.
pub fn embed_grid(model: &DualEncoder, image: &RgbImage, grid: &PatchGrid) -> Result<Array2<f64>> {
    let blocks: Vec<RgbImage> = grid.patches.iter().map(|p| p.extract(image)).collect();
    Ok(model.encode_patches(&blocks)?.mapv(|v| v as f64))
}

/// Per-pixel majority over the covering patches' labels (ties go to the
/// dominant region), then the smaller-region rule at pixel level.
pub fn rasterize(grid: &PatchGrid, spliced: &[bool]) -> Result<Mask> {
    let votes: Vec<f64> = spliced.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
    let share = accumulate_overlaps(grid, &votes)?;
    let mut mask = Mask::new(share.width, share.height);
    for (m, &v) in mask.data.iter_mut().zip(&share.data) {
        *m = v > 0.5;
    }
    if 2 * mask.count() > mask.data.len() {
        mask.data.iter_mut().for_each(|m| *m = !*m);
    }
    Ok(mask)
}

/// Scores, response map and mask from precomputed grid embeddings.
pub fn analyze_embeddings(
    grid: &PatchGrid,
    embeddings: ArrayView2<f64>,
    tau: f64,
) -> Result<Analysis> {
    if embeddings.nrows() != grid.len() {
        return Err(Error::invalid(format!(
            "{} embeddings for {} grid patches",
            embeddings.nrows(),
            grid.len()
        )));
    }
    let a = affinity(embeddings)?;
    let score = image_score(a.view(), tau)?;
    let patch_response = mean_shift_response(a.view());
    let response = accumulate_overlaps(grid, &patch_response)?;
    let partition = ncut_partition(a.view());
    let mask = rasterize(grid, &partition.spliced)?;
    Ok(Analysis {
        grid: grid.clone(),
        score,
        patch_response,
        response,
        partition,
        mask,
    })
}

/// Full pipeline on one image.
pub fn detect_and_localize(
    image: &RgbImage,
    model: &DualEncoder,
    cfg: &AnalyzeConfig,
) -> Result<Analysis> {
    let (w, h) = image.dimensions();
    let grid = analysis_grid(w, h, model.patch_side(), cfg)?;
    let emb = embed_grid(model, image, &grid)?;
    analyze_embeddings(&grid, emb.view(), cfg.tau)
}
