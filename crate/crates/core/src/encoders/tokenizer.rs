//! Word-piece tokenizer fit on registry tag names and corpus text.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const DEFAULT_MAX_LEN: usize = 256;
pub const DEFAULT_MAX_VOCAB: usize = 4096;

const SPECIALS: [&str; 3] = ["[PAD]", "[UNK]", "[EOS]"];
const CONT: &str = "##";

/// Token ids of one text; the last id is always [`EOS_ID`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq(pub Vec<u32>);

impl TokenSeq {
    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(PartialEq, Eq, Clone, Copy)]
enum CharClass {
    Letter,
    Digit,
    Other,
}

fn class(c: char) -> CharClass {
    if c.is_alphabetic() {
        CharClass::Letter
    } else if c.is_ascii_digit() {
        CharClass::Digit
    } else {
        CharClass::Other
    }
}

/// Splits text into pieces: whitespace separates words, and within a word
/// runs of letters, runs of digits and single other characters become
/// separate pieces. Pieces after the first in a word carry the `##` marker.
fn pre_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        let mut current_class = None;
        let mut first = true;
        let flush = |buf: &mut String, first: &mut bool, out: &mut Vec<String>| {
            if !buf.is_empty() {
                let piece = if *first {
                    buf.clone()
                } else {
                    format!("{CONT}{buf}")
                };
                out.push(piece);
                buf.clear();
                *first = false;
            }
        };
        for c in word.chars() {
            let k = class(c);
            if current_class != Some(k) || k == CharClass::Other {
                flush(&mut current, &mut first, &mut out);
                current_class = Some(k);
            }
            current.push(c);
        }
        flush(&mut current, &mut first, &mut out);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tokenizer {
    vocab: Vec<String>,
    pub max_len: usize,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl PartialEq for Tokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab && self.max_len == other.max_len
    }
}

impl Tokenizer {
    /// Fits a vocabulary: special tokens, every printable ASCII character in
    /// both word-initial and continuation form, then the most frequent
    /// pieces of `texts` up to `max_vocab` entries in total. Pieces from
    /// `always_include` (e.g. registry tag names) are kept regardless of
    /// frequency.
    pub fn fit<'a, I>(
        texts: I,
        always_include: &[String],
        max_len: usize,
        max_vocab: usize,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_len < 2 {
            return Err(Error::invalid("max_len must be at least 2"));
        }
        let mut vocab: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut seen: BTreeSet<String> = vocab.iter().cloned().collect();
        let mut push = |v: &mut Vec<String>, s: String| {
            if seen.insert(s.clone()) {
                v.push(s);
            }
        };
        for b in 0x21u8..0x7f {
            let c = b as char;
            push(&mut vocab, c.to_string());
            push(&mut vocab, format!("{CONT}{c}"));
        }
        for name in always_include {
            for piece in pre_tokenize(name) {
                push(&mut vocab, piece);
            }
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for piece in pre_tokenize(text) {
                *counts.entry(piece).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (piece, _) in ranked {
            if vocab.len() >= max_vocab {
                break;
            }
            push(&mut vocab, piece);
        }
        Ok(Self::from_vocab(vocab, max_len))
    }

    pub fn from_vocab(vocab: Vec<String>, max_len: usize) -> Self {
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Tokenizer {
            vocab,
            max_len,
            index,
        }
    }

    /// Restores the lookup table after deserialization.
    pub fn rebuild(self) -> Self {
        Self::from_vocab(self.vocab, self.max_len)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Greedy longest-match split of one piece into vocabulary entries.
    fn word_piece(&self, piece: &str, out: &mut Vec<u32>) {
        if let Some(&id) = self.index.get(piece) {
            out.push(id);
            return;
        }
        let (prefix, body) = match piece.strip_prefix(CONT) {
            Some(rest) => (CONT, rest),
            None => ("", piece),
        };
        let chars: Vec<char> = body.chars().collect();
        let mut start = 0;
        let mut ids = Vec::new();
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let sub: String = chars[start..end].iter().collect();
                let key = if start == 0 {
                    format!("{prefix}{sub}")
                } else {
                    format!("{CONT}{sub}")
                };
                if let Some(&id) = self.index.get(&key) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    ids.push(id);
                    start = end;
                }
                None => {
                    out.push(UNK_ID);
                    return;
                }
            }
        }
        out.extend(ids);
    }

    /// Tokenizes `text`, truncating to `max_len - 1` pieces and appending EOS.
    pub fn encode(&self, text: &str) -> Result<TokenSeq> {
        let pieces = pre_tokenize(text);
        if pieces.is_empty() {
            return Err(Error::invalid("cannot tokenize empty text"));
        }
        let mut ids = Vec::with_capacity(pieces.len() + 1);
        for piece in &pieces {
            self.word_piece(piece, &mut ids);
            if ids.len() >= self.max_len - 1 {
                break;
            }
        }
        ids.truncate(self.max_len - 1);
        ids.push(EOS_ID);
        Ok(TokenSeq(ids))
    }

    /// Inverse of [`encode`](Self::encode) for texts with single-space
    /// word separation; special tokens are skipped.
    pub fn decode(&self, seq: &TokenSeq) -> String {
        let mut out = String::new();
        for &id in seq.ids() {
            if id == PAD_ID || id == EOS_ID {
                continue;
            }
            let tok = self
                .vocab
                .get(id as usize)
                .map(String::as_str)
                .unwrap_or("[UNK]");
            match tok.strip_prefix(CONT) {
                Some(rest) => out.push_str(rest),
                None => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(tok);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exif::TagRegistry;
    use proptest::prelude::*;

    fn tok(max_len: usize) -> Tokenizer {
        let names = TagRegistry::standard().names().to_vec();
        Tokenizer::fit(
            [
                "Camera Make: Apple Focal Length: 35.0 mm",
                "Exposure Time: 1/250",
            ],
            &names,
            max_len,
            DEFAULT_MAX_VOCAB,
        )
        .unwrap()
    }

    #[test]
    fn pre_tokenization() {
        assert_eq!(
            pre_tokenize("Focal Length: 35.0 mm"),
            ["Focal", "Length", "##:", "35", "##.", "##0", "mm"]
        );
        assert_eq!(pre_tokenize("Date/Time"), ["Date", "##/", "##Time"]);
    }

    #[test]
    fn deterministic_and_eos_terminated() {
        let t = tok(DEFAULT_MAX_LEN);
        let a = t.encode("Camera Make: Apple").unwrap();
        assert_eq!(a, t.encode("Camera Make: Apple").unwrap());
        assert_eq!(*a.ids().last().unwrap(), EOS_ID);
        assert!(t.encode("   ").is_err());
    }

    #[test]
    fn truncation_keeps_prefix() {
        let t = tok(8);
        let long = "Camera Make: Apple Focal Length: 35.0 mm Exposure Time: 1/250";
        let full = tok(DEFAULT_MAX_LEN).encode(long).unwrap();
        let cut = t.encode(long).unwrap();
        assert_eq!(cut.len(), 8);
        assert_eq!(*cut.ids().last().unwrap(), EOS_ID);
        assert_eq!(cut.ids()[..7], full.ids()[..7]);
    }

    #[test]
    fn registry_names_have_no_unknowns() {
        let t = tok(DEFAULT_MAX_LEN);
        for name in TagRegistry::standard().names() {
            let seq = t.encode(name).unwrap();
            assert!(!seq.ids().contains(&UNK_ID), "{name}");
            assert_eq!(t.decode(&seq), *name);
        }
    }

    #[test]
    fn serde_round_trip() {
        let t = tok(DEFAULT_MAX_LEN);
        let back: Tokenizer =
            serde_json::from_str::<Tokenizer>(&serde_json::to_string(&t).unwrap())
                .unwrap()
                .rebuild();
        assert_eq!(back, t);
        assert_eq!(
            back.encode("Flash: Fired").unwrap(),
            t.encode("Flash: Fired").unwrap()
        );
    }

    proptest! {
        #[test]
        fn ascii_text_round_trips(words in proptest::collection::vec("[!-~]{1,8}", 1..12)) {
            let t = tok(DEFAULT_MAX_LEN);
            let text = words.join(" ");
            let seq = t.encode(&text).unwrap();
            prop_assert!(seq.ids().iter().all(|&i| (i as usize) < t.vocab_size()));
            prop_assert!(!seq.ids().contains(&UNK_ID));
            if seq.len() < DEFAULT_MAX_LEN {
                prop_assert_eq!(t.decode(&seq), text);
            }
        }
    }
}
