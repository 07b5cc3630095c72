use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::ExifRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TagOrder {
    /// Registry order.
    #[default]
    Fixed,
    /// A fresh uniform permutation on every call.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TextFormat {
    pub order: TagOrder,
    pub names: bool,
}

impl Default for TextFormat {
    fn default() -> Self {
        TextFormat {
            order: TagOrder::Fixed,
            names: true,
        }
    }
}

/// Text rendering of an [`ExifRecord`], the input to the text encoder.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CanonicalText {
    pub text: String,
    pub format: TextFormat,
}

impl CanonicalText {
    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// Renders a record as `Name: Value` pieces joined by single spaces, or as
/// bare values when `format.names` is false.
///
/// Random order draws a permutation from `rng`, which is then required.
pub fn serialize(
    record: &ExifRecord,
    format: TextFormat,
    rng: Option<&mut dyn RngCore>,
) -> Result<CanonicalText> {
    if record.is_empty() {
        return Err(Error::invalid("cannot serialize an empty record"));
    }
    let mut order: Vec<usize> = (0..record.len()).collect();
    if format.order == TagOrder::Random {
        let rng = rng.ok_or_else(|| Error::invalid("random tag order needs a random source"))?;
        order.shuffle(rng);
    }
    let pieces: Vec<String> = order
        .into_iter()
        .map(|i| {
            let (name, value) = &record.tags()[i];
            if format.names {
                format!("{name}: {value}")
            } else {
                value.clone()
            }
        })
        .collect();
    Ok(CanonicalText {
        text: pieces.join(" "),
        format,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exif::TagRegistry;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(pairs: &[(&str, &str)]) -> ExifRecord {
        ExifRecord::from_pairs(
            &TagRegistry::standard(),
            "t",
            pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())),
        )
    }

    #[test]
    fn fixed_order_with_names() {
        let r = rec(&[("Focal Length", "35.0 mm"), ("Camera Make", "Apple")]);
        let t = serialize(&r, TextFormat::default(), None).unwrap();
        assert_eq!(t.text, "Camera Make: Apple Focal Length: 35.0 mm");
    }

    #[test]
    fn values_only() {
        let r = rec(&[("Camera Make", "Apple")]);
        let f = TextFormat {
            order: TagOrder::Fixed,
            names: false,
        };
        assert_eq!(serialize(&r, f, None).unwrap().text, "Apple");
    }

    #[test]
    fn empty_record_and_missing_rng_are_errors() {
        assert!(serialize(&ExifRecord::empty("x"), TextFormat::default(), None).is_err());
        let r = rec(&[("Camera Make", "Apple")]);
        let f = TextFormat {
            order: TagOrder::Random,
            names: true,
        };
        assert!(serialize(&r, f, None).is_err());
    }

    #[test]
    fn canonical_text_is_stable() {
        let r = rec(&[
            ("Camera Make", "Apple"),
            ("Flash", "Unfired"),
            ("Software", "Picasa"),
        ]);
        assert_eq!(r.canonical_text().unwrap(), r.canonical_text().unwrap());
    }

    proptest! {
        #[test]
        fn random_order_is_a_permutation_of_fixed(
            subset in proptest::sample::subsequence((0..44usize).collect::<Vec<_>>(), 1..44),
            seed in any::<u64>(),
        ) {
            let reg = TagRegistry::standard();
            let r = ExifRecord::from_pairs(
                &reg,
                "t",
                subset.iter().map(|&i| (reg.names()[i].clone(), format!("val{i}"))),
            );
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = TextFormat { order: TagOrder::Random, names: true };
            let text = serialize(&r, f, Some(&mut rng)).unwrap().text;
            // Values are unique tokens, so tag boundaries are recoverable.
            let mut pieces = Vec::new();
            let mut rest = text.as_str();
            while !rest.is_empty() {
                let (name, tail) = rest.split_once(": ").unwrap();
                let (value, tail) = tail.split_once(' ').unwrap_or((tail, ""));
                pieces.push((name.to_string(), value.to_string()));
                rest = tail;
            }
            pieces.sort_by_key(|(n, _)| reg.position(n).unwrap());
            prop_assert_eq!(pieces.as_slice(), r.tags());
        }
    }
}
