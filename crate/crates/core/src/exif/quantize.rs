use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::normalize_value;
use crate::error::{Error, Result};

/// Tags with fewer distinct values than this use one class per value.
pub const ENUMERATED_LIMIT: usize = 20;

/// A value is "common" when its share of the tag's records strictly exceeds this.
pub const COMMON_FREQUENCY: f64 = 0.001;

/// Tags whose values are merged by leading brand token.
const BRAND_TAGS: &[&str] = &["Camera Model"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantizerMode {
    /// Every observed value is a class.
    Enumerated,
    /// Only common values are classes; the rest are dropped.
    Binned,
    /// Values are keyed by their upper-cased first token, then treated as binned.
    BrandMerged,
}

/// Outcome of quantizing one value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantized {
    Class(usize),
    Dropped,
}

impl Quantized {
    pub fn class(self) -> Option<usize> {
        match self {
            Quantized::Class(c) => Some(c),
            Quantized::Dropped => None,
        }
    }
}

/// Maps the values of one tag onto a fixed list of class labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagQuantizer {
    pub tag: String,
    pub mode: QuantizerMode,
    /// Class labels in byte order; the class index is the position here.
    pub classes: Vec<String>,
}

fn brand_key(value: &str) -> String {
    value
        .split_whitespace()
        .next()
        .unwrap_or_default()
        .to_uppercase()
}

impl TagQuantizer {
    fn key(&self, value: &str) -> String {
        let value = normalize_value(value);
        match self.mode {
            QuantizerMode::BrandMerged => brand_key(&value),
            _ => value,
        }
    }

    pub fn quantize(&self, value: &str) -> Quantized {
        let key = self.key(value);
        match self.classes.binary_search(&key) {
            Ok(i) => Quantized::Class(i),
            Err(_) => Quantized::Dropped,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Fits a quantizer for `tag` from the values observed across a corpus (one
/// entry per record carrying the tag).
pub fn fit_quantizer(tag: &str, values: &[String]) -> Result<TagQuantizer> {
    if values.is_empty() {
        return Err(Error::invalid(format!(
            "no values to fit a quantizer for {tag:?}"
        )));
    }
    let normalized: Vec<String> = values.iter().map(|v| normalize_value(v)).collect();
    let mut distinct: Vec<&String> = normalized.iter().collect();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < ENUMERATED_LIMIT {
        return Ok(TagQuantizer {
            tag: tag.to_string(),
            mode: QuantizerMode::Enumerated,
            classes: distinct.into_iter().cloned().collect(),
        });
    }

    let mode = if BRAND_TAGS.contains(&tag) {
        QuantizerMode::BrandMerged
    } else {
        QuantizerMode::Binned
    };
    let mut counts: HashMap<String, usize> = HashMap::new();
    for v in &normalized {
        let key = match mode {
            QuantizerMode::BrandMerged => brand_key(v),
            _ => v.clone(),
        };
        *counts.entry(key).or_default() += 1;
    }
    let n = normalized.len() as f64;
    let mut classes: Vec<String> = counts
        .into_iter()
        .filter(|&(_, c)| c as f64 / n > COMMON_FREQUENCY)
        .map(|(k, _)| k)
        .collect();
    if classes.is_empty() {
        return Err(Error::data(format!(
            "tag {tag:?} has no value above the {COMMON_FREQUENCY} frequency floor"
        )));
    }
    classes.sort();
    Ok(TagQuantizer {
        tag: tag.to_string(),
        mode,
        classes,
    })
}

/// Writes quantizers as a pretty-printed JSON object keyed by tag name.
pub fn save_quantizers(path: &Path, quantizers: &BTreeMap<String, TagQuantizer>) -> Result<()> {
    let text = serde_json::to_string_pretty(quantizers)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_quantizers(path: &Path) -> Result<BTreeMap<String, TagQuantizer>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
