//! Dataset manifests: one row per image with its metadata source, optional
//! caption and ground-truth mask, and the training-filter decision.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use camsig_core::exif::{
    parse_exif, passes_training_filter, ExifRecord, TagRegistry, MIN_TRAINING_TAGS,
};
use camsig_core::patch::Mask;
use camsig_core::train::TrainExample;
use image::RgbImage;
use log::warn;
use serde::{Deserialize, Serialize};

const IMAGE_EXTS: [&str; 5] = ["png", "jpg", "jpeg", "tif", "tiff"];
const SIDECAR_EXTS: [&str; 3] = ["json", "tsv", "exif"];
const MASK_SUFFIX: &str = "_mask";
const CAPTION_SUFFIX: &str = ".caption.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub id: String,
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecar: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    /// Ground-truth splice mask (white = spliced).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub n_tags: usize,
    #[serde(default)]
    pub filtered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

const MISSING: &str = "image file missing";
const DUPLICATE: &str = "duplicate id";

impl Row {
    /// Missing file or duplicate id, as opposed to a metadata filter decision.
    pub fn is_broken(&self) -> bool {
        matches!(self.reason.as_deref(), Some(MISSING | DUPLICATE))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub split: String,
    pub rows: Vec<Row>,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base: PathBuf,
}

fn ext_of(p: &Path) -> Option<String> {
    p.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
}

pub fn is_image(p: &Path) -> bool {
    p.is_file() && ext_of(p).is_some_and(|e| IMAGE_EXTS.contains(&e.as_str()))
}

pub fn is_mask(p: &Path) -> bool {
    stem(p).ends_with(MASK_SUFFIX)
}

pub fn stem(p: &Path) -> String {
    p.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string()
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let mut m: Manifest = serde_json::from_str(&text)
            .with_context(|| format!("parsing manifest {}", path.display()))?;
        m.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut seen = BTreeSet::new();
        for r in &m.rows {
            if !seen.insert(r.id.as_str()) {
                bail!(camsig_core::Error::Data(format!(
                    "duplicate id {:?} in manifest",
                    r.id
                )));
            }
        }
        // Rows whose files have disappeared are flagged rather than fatal.
        for i in 0..m.rows.len() {
            if !m.resolve(&m.rows[i].image).exists() {
                let r = &mut m.rows[i];
                r.filtered = true;
                r.reason = Some(MISSING.into());
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    /// Rewrites paths under `base` relative to it, so the manifest can be
    /// stored in `base` and moved along with its files.
    pub fn relativize(&mut self, base: &Path) -> Result<()> {
        let base = base
            .canonicalize()
            .with_context(|| format!("resolving {}", base.display()))?;
        let rel = |p: &mut PathBuf| {
            if let Ok(r) = p.strip_prefix(&base) {
                *p = r.to_path_buf();
            }
        };
        for r in &mut self.rows {
            rel(&mut r.image);
            r.sidecar.as_mut().map(rel);
            r.mask.as_mut().map(rel);
        }
        self.base = base;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Rows whose image exists and whose id is unique, filtered or not.
    pub fn present(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| !r.is_broken())
    }

    /// Rows that passed the training filter.
    pub fn usable(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| !r.filtered)
    }

    pub fn load_image(&self, row: &Row) -> Result<RgbImage> {
        let p = self.resolve(&row.image);
        Ok(image::open(&p)
            .map_err(camsig_core::Error::from)
            .with_context(|| format!("reading image {}", p.display()))?
            .to_rgb8())
    }

    pub fn load_record(&self, row: &Row, registry: &TagRegistry) -> Result<ExifRecord> {
        let src = row.sidecar.as_ref().unwrap_or(&row.image);
        let mut rec = parse_exif(&self.resolve(src), registry)?;
        rec.source_id = row.id.clone();
        Ok(rec)
    }

    pub fn load_mask(&self, row: &Row) -> Result<Option<Mask>> {
        let Some(p) = &row.mask else { return Ok(None) };
        let p = self.resolve(p);
        let gray = image::open(&p)
            .map_err(camsig_core::Error::from)
            .with_context(|| format!("reading mask {}", p.display()))?
            .to_luma8();
        Ok(Some(Mask::from_gray(&gray)))
    }

    /// Images, records and captions of every usable row.
    pub fn train_examples(&self, registry: &TagRegistry) -> Result<Vec<TrainExample>> {
        self.usable()
            .map(|r| {
                Ok(TrainExample {
                    id: r.id.clone(),
                    image: self.load_image(r)?,
                    record: self.load_record(r, registry)?,
                    caption: r.caption.clone(),
                })
            })
            .collect()
    }
}

/// Scans `dir` (non-recursively) for images, pairing each with a
/// `<stem>.json|.tsv|.exif` sidecar, a `<stem>.caption.txt` caption and a
/// `<stem>_mask.png` mask when present. Metadata comes from the sidecar or,
/// failing that, from the image's own EXIF block.
pub fn build_corpus(dir: &Path, registry: &TagRegistry) -> Result<Manifest> {
    let dir = dir
        .canonicalize()
        .with_context(|| format!("reading source directory {}", dir.display()))?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .with_context(|| format!("reading source directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for path in &files {
        let stem = stem(path);
        if !is_image(path) || is_mask(path) {
            continue;
        }
        let sidecar = SIDECAR_EXTS
            .iter()
            .map(|e| dir.join(format!("{stem}.{e}")))
            .find(|p| p.is_file());
        let caption = std::fs::read_to_string(dir.join(format!("{stem}{CAPTION_SUFFIX}")))
            .ok()
            .map(|s| s.trim().to_string());
        let mask = Some(dir.join(format!("{stem}{MASK_SUFFIX}.png"))).filter(|p| p.is_file());
        let mut row = Row {
            id: stem.clone(),
            image: path.clone(),
            sidecar: sidecar.clone(),
            caption,
            mask,
            label: None,
            n_tags: 0,
            filtered: false,
            reason: None,
        };
        if !seen.insert(stem.clone()) {
            row.filtered = true;
            row.reason = Some(DUPLICATE.into());
            rows.push(row);
            continue;
        }
        match parse_exif(sidecar.as_deref().unwrap_or(path), registry) {
            Ok(rec) => {
                row.n_tags = rec.tags().len();
                if !passes_training_filter(&rec) {
                    row.filtered = true;
                    row.reason = Some(format!(
                        "{} tags, fewer than {MIN_TRAINING_TAGS}",
                        rec.tags().len()
                    ));
                }
            }
            Err(e) => {
                row.filtered = true;
                row.reason = Some(format!("metadata unreadable: {e}"));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        warn!("no images found in {}", dir.display());
    }
    Ok(Manifest {
        split: "all".into(),
        rows,
        base: dir,
    })
}
