use std::io::Cursor;
use std::path::Path;

use serde_json::Value;

use super::{ExifRecord, TagRegistry};
use crate::error::{Error, Result};

/// Text formats accepted for metadata sidecar files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SidecarFormat {
    /// One `Name<TAB>Value` pair per line; blank lines and `#` comments ignored.
    Tsv,
    /// A JSON object, possibly nested; leaf keys are tag names.
    Json,
}

impl SidecarFormat {
    pub fn detect(text: &str) -> Self {
        if text.trim_start().starts_with('{') {
            SidecarFormat::Json
        } else {
            SidecarFormat::Tsv
        }
    }
}

/// Parses a sidecar document into a registry-filtered record.
pub fn parse_sidecar(text: &str, registry: &TagRegistry, source_id: &str) -> Result<ExifRecord> {
    let pairs = match SidecarFormat::detect(text) {
        SidecarFormat::Tsv => text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .filter_map(|l| l.split_once('\t'))
            .map(|(k, v)| (k.trim().to_string(), v.to_string()))
            .collect(),
        SidecarFormat::Json => {
            let doc: Value = serde_json::from_str(text)?;
            let mut out = Vec::new();
            flatten_json(&doc, &mut out);
            out
        }
    };
    Ok(ExifRecord::from_pairs(registry, source_id, pairs))
}

fn flatten_json(value: &Value, out: &mut Vec<(String, String)>) {
    let Value::Object(map) = value else { return };
    for (key, v) in map {
        match v {
            Value::Object(_) => flatten_json(v, out),
            Value::String(s) => out.push((key.clone(), s.clone())),
            Value::Number(n) => out.push((key.clone(), n.to_string())),
            Value::Bool(b) => out.push((key.clone(), b.to_string())),
            Value::Array(items) => {
                let joined: Vec<String> = items
                    .iter()
                    .map(|i| match i {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect();
                out.push((key.clone(), joined.join(", ")));
            }
            Value::Null => {}
        }
    }
}

/// Extracts registry tags embedded in an image container (JPEG, TIFF, PNG,
/// WebP, HEIF). Containers without a metadata block yield an empty record.
pub fn parse_exif_bytes(bytes: &[u8], registry: &TagRegistry, source_id: &str) -> ExifRecord {
    let mut reader = exif::Reader::new();
    reader.continue_on_error(true);
    let parsed = reader
        .read_from_container(&mut Cursor::new(bytes))
        .or_else(|e| e.distill_partial_result(|_| {}));
    let Ok(parsed) = parsed else {
        return ExifRecord::empty(source_id);
    };
    let pairs = parsed.fields().filter_map(|field| {
        let name = if field.ifd_num == exif::In::THUMBNAIL {
            match field.tag {
                exif::Tag::Compression => "Thumbnail Compression".to_string(),
                exif::Tag::JPEGInterchangeFormat => "Thumbnail Offset".to_string(),
                exif::Tag::JPEGInterchangeFormatLength => "Thumbnail Length".to_string(),
                _ => return None,
            }
        } else {
            field.tag.to_string()
        };
        let value = field.display_value().with_unit(&parsed).to_string();
        Some((name, value.trim_matches('"').to_string()))
    });
    ExifRecord::from_pairs(registry, source_id, pairs)
}

fn is_sidecar_path(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("json" | "txt" | "tsv" | "exif")
    )
}

/// Reads metadata from either a sidecar document or an image file, chosen by
/// file extension. The record's source id is the file stem.
pub fn parse_exif(path: &Path, registry: &TagRegistry) -> Result<ExifRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if is_sidecar_path(path) {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::data(format!("{} is not UTF-8", path.display())))?;
        parse_sidecar(&text, registry, &source_id)
    } else {
        Ok(parse_exif_bytes(&bytes, registry, &source_id))
    }
}
