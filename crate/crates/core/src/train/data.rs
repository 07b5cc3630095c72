//! Training examples, supervision text and batch assembly.

use std::collections::HashSet;

use image::RgbImage;
use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::encoders::{TokenSeq, Tokenizer};
use crate::error::{Error, Result};
use crate::exif::{serialize, CanonicalText, ExifRecord, TextFormat};
use crate::patch::{random_crop, PatchSpec};

/// What the patch embedding is contrasted against.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "tag")]
pub enum SupervisionMode {
    /// Every registry tag of the image.
    #[default]
    FullExif,
    /// One tag only; images lacking it are skipped.
    SingleTag(String),
    /// The image caption, verbatim.
    Description,
    /// A second crop of the same image instead of any text.
    CropClr,
}

/// One training image with its metadata.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub id: String,
    pub image: RgbImage,
    pub record: ExifRecord,
    pub caption: Option<String>,
}

/// Text the patch is paired with under `mode`, or `None` when the example
/// has nothing to offer (absent tag, missing caption, empty record).
///
/// `rng` is required only for random tag order.
pub fn supervision_text(
    record: &ExifRecord,
    caption: Option<&str>,
    mode: &SupervisionMode,
    format: TextFormat,
    rng: Option<&mut dyn RngCore>,
) -> Result<Option<CanonicalText>> {
    match mode {
        SupervisionMode::FullExif => {
            if record.is_empty() {
                return Ok(None);
            }
            serialize(record, format, rng).map(Some)
        }
        SupervisionMode::SingleTag(tag) => match record.only(tag) {
            Some(r) => serialize(&r, format, rng).map(Some),
            None => Ok(None),
        },
        SupervisionMode::Description => {
            Ok(caption
                .filter(|c| !c.trim().is_empty())
                .map(|c| CanonicalText {
                    text: c.to_string(),
                    format,
                }))
        }
        SupervisionMode::CropClr => Err(Error::invalid("crop-pair supervision has no text")),
    }
}

/// The second element of every pair: metadata tokens or another crop.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Text(Vec<TokenSeq>),
    Crops(Vec<RgbImage>),
}

/// N aligned (patch, target) pairs from N distinct source images.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub source_ids: Vec<String>,
    pub patches: Vec<RgbImage>,
    pub targets: Targets,
}

impl Batch {
    pub fn new(source_ids: Vec<String>, patches: Vec<RgbImage>, targets: Targets) -> Result<Self> {
        let n = patches.len();
        let nt = match &targets {
            Targets::Text(t) => t.len(),
            Targets::Crops(c) => c.len(),
        };
        if n < 2 || nt != n || source_ids.len() != n {
            return Err(Error::invalid(format!(
                "batch needs N >= 2 aligned pairs, got {n}/{nt}/{}",
                source_ids.len()
            )));
        }
        let distinct: HashSet<&String> = source_ids.iter().collect();
        if distinct.len() != n {
            return Err(Error::invalid(
                "batch pairs must come from distinct source images",
            ));
        }
        Ok(Batch {
            source_ids,
            patches,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Whether target `j` is an acceptable retrieval result for patch `i`:
    /// identical token sequences count as the same metadata.
    pub fn matches(&self, i: usize, j: usize) -> bool {
        match &self.targets {
            Targets::Text(t) => t[i] == t[j],
            Targets::Crops(_) => i == j,
        }
    }
}

/// Two crops of one image with different origins (footprints may overlap).
/// `None` when the image admits only a single crop position.
pub fn crop_pair<R: Rng + ?Sized>(
    image: &RgbImage,
    side: u32,
    rng: &mut R,
) -> Result<Option<(PatchSpec, PatchSpec)>> {
    let (w, h) = image.dimensions();
    if w < side || h < side || side == 0 {
        return Ok(None);
    }
    if w == side && h == side {
        return Ok(None);
    }
    let (a, _) = random_crop(image, side, rng)?;
    loop {
        let (b, _) = random_crop(image, side, rng)?;
        if (b.x, b.y) != (a.x, a.y) {
            return Ok(Some((a, b)));
        }
    }
}

/// Crop-pair batch: positives are two crops of the same image, negatives
/// are crops of the other images. Images too small for two crops are
/// skipped with a warning; repeated source ids are refused.
pub fn cropclr_batch<R: Rng + ?Sized>(
    images: &[(&str, &RgbImage)],
    side: u32,
    rng: &mut R,
) -> Result<Batch> {
    let mut ids = Vec::new();
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (id, img) in images {
        match crop_pair(img, side, rng)? {
            Some((a, b)) => {
                ids.push(id.to_string());
                first.push(a.extract(img));
                second.push(b.extract(img));
            }
            None => warn!("skipping {id}: too small for two {side}px crops"),
        }
    }
    Batch::new(ids, first, Targets::Crops(second))
}

/// Text batch from examples that are already known to carry supervision.
pub fn text_batch<R: Rng + ?Sized>(
    examples: &[&TrainExample],
    tokenizer: &Tokenizer,
    mode: &SupervisionMode,
    format: TextFormat,
    side: u32,
    rng: &mut R,
) -> Result<Batch> {
    let mut ids = Vec::with_capacity(examples.len());
    let mut patches = Vec::with_capacity(examples.len());
    let mut texts = Vec::with_capacity(examples.len());
    for ex in examples {
        let mut sub = rand_chacha::ChaCha8Rng::seed_from_u64(rng.random());
        let Some(text) = supervision_text(
            &ex.record,
            ex.caption.as_deref(),
            mode,
            format,
            Some(&mut sub),
        )?
        else {
            continue;
        };
        let (_, crop) = random_crop(&ex.image, side, rng)?;
        ids.push(ex.id.clone());
        patches.push(crop);
        texts.push(tokenizer.encode(&text.text)?);
    }
    Batch::new(ids, patches, Targets::Text(texts))
}

/// Shuffles example indices and cuts them into batches of `size` (the
/// final short batch is dropped unless it is the only one).
pub fn epoch_batches<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let size = size.max(2);
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < size) {
        out.pop();
    }
    out.retain(|b| b.len() >= 2);
    out
}
