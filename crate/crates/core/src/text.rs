//! Caption tokenization and vocabulary.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::TextError;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Lowercases, turns ASCII punctuation into spaces and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(ToString::to_string).collect()
}

/// Word ↔ id map. Ids 0..4 are PAD, BOS, EOS and UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    ids: BTreeMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_words(core::iter::empty::<&str>())
    }
}

impl Vocab {
    /// Builds a vocabulary from words in id order (specials are prepended).
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Self { words: Vec::new(), ids: BTreeMap::new() };
        for w in SPECIALS.into_iter().chain(words) {
            if !vocab.ids.contains_key(w) {
                vocab.ids.insert(w.to_string(), vocab.words.len());
                vocab.words.push(w.to_string());
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    /// Words in id order, specials included.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    /// `BOS w₁ … wₙ EOS`, unknown words mapped to UNK.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(BOS);
        ids.extend(tokens.iter().map(|t| self.id(t.as_ref()).unwrap_or(UNK)));
        ids.push(EOS);
        ids
    }

    /// Drops PAD/BOS/EOS, keeps UNK as its marker word.
    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>, TextError> {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS))
            .map(|&id| self.word(id).map(ToString::to_string).ok_or(TextError::UnknownId(id)))
            .collect()
    }
}

/// Keeps words occurring at least `min_count` times, truncated to the `max_words` most
/// frequent (ties broken lexicographically). `max_words` excludes the four specials.
pub fn build_vocab<S: AsRef<str>>(captions: &[Vec<S>], min_count: usize, max_words: usize) -> Vocab {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for caption in captions {
        for tok in caption {
            *counts.entry(tok.as_ref()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(w, c)| c >= min_count.max(1) && !SPECIALS.contains(&w))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    kept.truncate(max_words);
    Vocab::from_words(kept.into_iter().map(|(w, _)| w))
}
