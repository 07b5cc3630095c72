//! The metadata modality: EXIF records, the tag registry, text serialization
//! and per-tag quantization.

mod parse;
mod quantize;
mod registry;
mod serialize;

pub use parse::{parse_exif, parse_exif_bytes, parse_sidecar, SidecarFormat};
pub use quantize::{
    fit_quantizer, load_quantizers, save_quantizers, Quantized, QuantizerMode, TagQuantizer,
};
pub use registry::{select_common_tags, TagRegistry, STANDARD_TAG_COUNT};
pub use serialize::{serialize, CanonicalText, TagOrder, TextFormat};

use serde::{Deserialize, Serialize};

/// Minimum number of registry tags a record needs to be used for training.
pub const MIN_TRAINING_TAGS: usize = 10;

/// Trims surrounding whitespace and collapses internal whitespace runs to a
/// single space. Case is preserved.
pub fn normalize_value(value: &str) -> String {
    value.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Registry tags of one image, held in registry order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExifRecord {
    tags: Vec<(String, String)>,
    pub source_id: String,
}

impl ExifRecord {
    pub fn empty(source_id: impl Into<String>) -> Self {
        ExifRecord {
            tags: Vec::new(),
            source_id: source_id.into(),
        }
    }

    /// Builds a record from raw `(name, value)` pairs.
    ///
    /// Names are resolved through the registry's aliases; unknown names and
    /// values that normalize to the empty string are discarded. When a name
    /// repeats, the first occurrence wins.
    pub fn from_pairs<I>(registry: &TagRegistry, source_id: impl Into<String>, pairs: I) -> Self
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut slots: Vec<Option<String>> = vec![None; registry.len()];
        for (name, value) in pairs {
            let Some(pos) = registry.position(name.trim()) else {
                continue;
            };
            let value = normalize_value(&value);
            if value.is_empty() || slots[pos].is_some() {
                continue;
            }
            slots[pos] = Some(value);
        }
        let tags = registry
            .names()
            .iter()
            .zip(slots)
            .filter_map(|(name, v)| v.map(|v| (name.clone(), v)))
            .collect();
        ExifRecord {
            tags,
            source_id: source_id.into(),
        }
    }

    pub fn tags(&self) -> &[(String, String)] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.tags
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_str())
    }

    /// Record restricted to a single tag, if present.
    pub fn only(&self, name: &str) -> Option<ExifRecord> {
        self.tags
            .iter()
            .find(|(n, _)| n == name)
            .map(|t| ExifRecord {
                tags: vec![t.clone()],
                source_id: self.source_id.clone(),
            })
    }

    /// Fixed-order text with tag names, the training default.
    pub fn canonical_text(&self) -> crate::Result<CanonicalText> {
        serialize(self, TextFormat::default(), None)
    }
}

/// True iff the record carries enough registry tags to be used for training.
pub fn passes_training_filter(record: &ExifRecord) -> bool {
    record.len() >= MIN_TRAINING_TAGS
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairs(names: &[String]) -> Vec<(String, String)> {
        names
            .iter()
            .map(|n| (n.clone(), format!("v {n}")))
            .collect()
    }

    #[test]
    fn value_normalization() {
        assert_eq!(normalize_value("  NIKON   D90 \t"), "NIKON D90");
        assert_eq!(normalize_value(" \n "), "");
    }

    #[test]
    fn filter_boundary() {
        let reg = TagRegistry::standard();
        let names = reg.names().to_vec();
        let r9 = ExifRecord::from_pairs(&reg, "a", pairs(&names[..9]));
        let r10 = ExifRecord::from_pairs(&reg, "a", pairs(&names[..10]));
        let r44 = ExifRecord::from_pairs(&reg, "a", pairs(&names));
        assert!(!passes_training_filter(&r9));
        assert!(passes_training_filter(&r10));
        assert!(passes_training_filter(&r44));
    }

    #[test]
    fn duplicates_and_blank_values_are_dropped() {
        let reg = TagRegistry::standard();
        let rec = ExifRecord::from_pairs(
            &reg,
            "a",
            vec![
                ("Make".into(), "Canon".into()),
                ("Camera Make".into(), "Apple".into()),
                ("Flash".into(), "   ".into()),
            ],
        );
        assert_eq!(
            rec.tags(),
            [("Camera Make".to_string(), "Canon".to_string())]
        );
    }

    proptest! {
        #[test]
        fn registry_order_is_independent_of_input_order(
            subset in proptest::sample::subsequence((0..44usize).collect::<Vec<_>>(), 0..44),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let reg = TagRegistry::standard();
            let names: Vec<String> = subset.iter().map(|&i| reg.names()[i].clone()).collect();
            let mut shuffled = pairs(&names);
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = ExifRecord::from_pairs(&reg, "x", pairs(&names));
            let b = ExifRecord::from_pairs(&reg, "x", shuffled);
            prop_assert_eq!(&a, &b);
            let got: Vec<&String> = a.tags().iter().map(|(n, _)| n).collect();
            prop_assert_eq!(got, names.iter().collect::<Vec<_>>());
        }

        #[test]
        fn adding_a_tag_never_fails_the_filter(
            subset in proptest::sample::subsequence((0..44usize).collect::<Vec<_>>(), 0..44),
            extra in 0..44usize,
        ) {
            let reg = TagRegistry::standard();
            let names: Vec<String> = subset.iter().map(|&i| reg.names()[i].clone()).collect();
            let before = ExifRecord::from_pairs(&reg, "x", pairs(&names));
            let mut more = names.clone();
            more.push(reg.names()[extra].clone());
            let after = ExifRecord::from_pairs(&reg, "x", pairs(&more));
            prop_assert!(!passes_training_filter(&before) || passes_training_filter(&after));
        }
    }
}
