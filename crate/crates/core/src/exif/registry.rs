use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::quantize::TagQuantizer;
use super::ExifRecord;
use crate::error::{Error, Result};

const TAG_LIST: &str = include_str!("../../data/exif_tags.txt");

/// Number of tags in the standard registry.
pub const STANDARD_TAG_COUNT: usize = 44;

/// Alternative spellings accepted on input and mapped onto registry names.
///
/// Covers the raw EXIF field names used by most extraction tools and the
/// misspellings that circulate in published tag lists.
const ALIASES: &[(&str, &str)] = &[
    ("Make", "Camera Make"),
    ("Model", "Camera Model"),
    ("ApertureValue", "Aperture Value"),
    ("ColorSpace", "Color Space"),
    ("ComponentsConfiguration", "Components Configuration"),
    ("CompressedBitsPerPixel", "Compressed Bits"),
    ("CustomRendered", "Custom Rendered"),
    ("DateTime", "Date/Time"),
    ("Data/Time", "Date/Time"),
    ("DateTimeDigitized", "Date/Time Digitized"),
    ("Data/Time Digitized", "Date/Time Digitized"),
    ("DateTimeOriginal", "Date/Time Original"),
    ("Data/Time Original", "Date/Time Original"),
    ("DigitalZoomRatio", "Digital Zoom Ratio"),
    ("PixelYDimension", "Exif Image Height"),
    ("PixelXDimension", "Exif Image Width"),
    ("ExifVersion", "Exif Version"),
    ("ExposureBiasValue", "Exposure Bias Value"),
    ("ExposureMode", "Exposure Mode"),
    ("ExposureProgram", "Exposure Program"),
    ("ExposureTime", "Exposure Time"),
    ("FNumber", "F-Number"),
    ("FileSource", "File Source"),
    ("FlashpixVersion", "FlashPix Version"),
    ("FocalLength", "Focal Length"),
    ("FocalPlaneXResolution", "Focal Plane X Resolution"),
    ("Focal Place X Resolution", "Focal Plane X Resolution"),
    ("FocalPlaneYResolution", "Focal Plane Y Resolution"),
    ("Focal Place Y Resolution", "Focal Plane Y Resolution"),
    ("GainControl", "Gain Control"),
    ("ISOSpeedRatings", "ISO Speed Ratings"),
    ("PhotographicSensitivity", "ISO Speed Ratings"),
    ("ISO speed Ratings", "ISO Speed Ratings"),
    ("InteroperabilityIndex", "Interoperability Index"),
    ("InteroperabilityVersion", "Interoperability Version"),
    ("MaxApertureValue", "Max Aperture Value"),
    ("MeteringMode", "Metering Mode"),
    ("ResolutionUnit", "Resolution Unit"),
    ("SceneCaptureType", "Scene Capture Type"),
    ("SensingMethod", "Sensing Method"),
    ("ShutterSpeedValue", "Shutter Speed Value"),
    ("ThumbnailCompression", "Thumbnail Compression"),
    ("ThumbnailLength", "Thumbnail Length"),
    ("JPEGInterchangeFormatLength", "Thumbnail Length"),
    ("ThumbnailOffset", "Thumbnail Offset"),
    ("JPEGInterchangeFormat", "Thumbnail Offset"),
    ("WhiteBalance", "White Balance Mode"),
    ("White Balance", "White Balance Mode"),
    ("XResolution", "X Resolution"),
    ("YResolution", "Y Resolution"),
    ("YCbCrPositioning", "YCbCr Positioning"),
];

fn standard_names() -> &'static [String] {
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES.get_or_init(|| {
        TAG_LIST
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_owned)
            .collect()
    })
}

fn alias_table() -> &'static HashMap<&'static str, &'static str> {
    static TABLE: OnceLock<HashMap<&'static str, &'static str>> = OnceLock::new();
    TABLE.get_or_init(|| ALIASES.iter().copied().collect())
}

/// Ordered set of tag names admitted into the metadata modality.
///
/// The order is fixed and defines the canonical serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRegistry {
    allowed: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    /// Fitted per-tag quantizers, keyed by tag name.
    #[serde(default)]
    pub quantizers: BTreeMap<String, TagQuantizer>,
}

impl TagRegistry {
    /// The 44-tag registry shipped with the crate.
    pub fn standard() -> Self {
        Self::from_names(standard_names().iter().cloned())
            .expect("shipped tag list has unique names")
    }

    /// Builds a registry from names in the given order.
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let allowed: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(allowed.len());
        for (i, name) in allowed.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate tag name {name:?}")));
            }
        }
        Ok(TagRegistry {
            allowed,
            index,
            quantizers: BTreeMap::new(),
        })
    }

    pub fn names(&self) -> &[String] {
        &self.allowed
    }

    pub fn len(&self) -> usize {
        self.allowed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty()
    }

    /// Position of `name` in the registry order, after alias resolution.
    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(self.resolve(name)).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.position(name).is_some()
    }

    /// Maps an input tag name onto its registry spelling when an alias exists.
    pub fn resolve<'a>(&self, name: &'a str) -> &'a str {
        if self.index.contains_key(name) {
            return name;
        }
        alias_table().get(name).copied().unwrap_or(name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut reg: TagRegistry = serde_json::from_str(text)?;
        let names = std::mem::take(&mut reg.allowed);
        let quantizers = std::mem::take(&mut reg.quantizers);
        let mut out = TagRegistry::from_names(names)?;
        out.quantizers = quantizers;
        Ok(out)
    }
}

impl Default for TagRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

/// Selects the tags whose presence frequency across `corpus` strictly exceeds
/// `threshold`.
///
/// Tags from the standard registry keep their standard order; any other names
/// follow in byte order.
pub fn select_common_tags(corpus: &[ExifRecord], threshold: f64) -> Result<TagRegistry> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot select tags from an empty corpus"));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "presence threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for record in corpus {
        for (name, _) in record.tags() {
            *counts.entry(name.as_str()).or_default() += 1;
        }
    }
    let n = corpus.len() as f64;
    let standard = TagRegistry::standard();
    let mut kept: Vec<&str> = counts
        .into_iter()
        .filter(|&(_, c)| c as f64 / n > threshold)
        .map(|(name, _)| name)
        .collect();
    kept.sort_by(|a, b| {
        let ka = standard.position(a).unwrap_or(usize::MAX);
        let kb = standard.position(b).unwrap_or(usize::MAX);
        ka.cmp(&kb).then_with(|| a.cmp(b))
    });
    TagRegistry::from_names(kept)
}
