use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Token};

pub const UNK: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
const SPECIALS: [&str; 3] = ["<unk>", "<s>", "</s>"];

/// Closed token inventory. Ids `0..3` are `<unk>`, `<s>`, `</s>`; the rest are
/// ordered by descending frequency, then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        Self::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut all: Vec<String> = Vec::new();
        let mut index = BTreeMap::new();
        for t in SPECIALS.iter().map(|s| s.to_string()).chain(tokens) {
            if !index.contains_key(&t) {
                index.insert(t.clone(), all.len());
                all.push(t);
            }
        }
        Self { tokens: all, index }
    }

    /// Headline and body tokens of every article; `max_size` counts specials,
    /// 0 means unlimited.
    pub fn build(corpus: &Corpus, max_size: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for a in corpus.articles() {
            for t in a.headline.iter().chain(&a.body) {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let room = if max_size == 0 {
            usize::MAX
        } else {
            max_size.saturating_sub(SPECIALS.len())
        };
        Self::from_tokens(ranked.into_iter().take(room).map(|(t, _)| t.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn ids(&self, tokens: &[Token]) -> Vec<usize> {
        tokens.iter().map(|t| self.id_or_unk(t)).collect()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Per-article extension of the vocabulary: source tokens outside it get ids
/// `vocab.len() + k` so they can be produced by copying.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceMap {
    /// Extended id of every source position.
    pub ext_ids: Vec<usize>,
    /// In-vocabulary id of every source position (`UNK` for OOV).
    pub vocab_ids: Vec<usize>,
    pub oov: Vec<String>,
    pub base: usize,
}

impl SourceMap {
    pub fn new(vocab: &Vocab, source: &[Token]) -> Self {
        let base = vocab.len();
        let mut oov: Vec<String> = Vec::new();
        let mut ext_ids = Vec::with_capacity(source.len());
        let mut vocab_ids = Vec::with_capacity(source.len());
        for t in source {
            match vocab.id(t) {
                Some(id) => {
                    ext_ids.push(id);
                    vocab_ids.push(id);
                }
                None => {
                    let k = match oov.iter().position(|o| o == t) {
                        Some(k) => k,
                        None => {
                            oov.push(t.clone());
                            oov.len() - 1
                        }
                    };
                    ext_ids.push(base + k);
                    vocab_ids.push(UNK);
                }
            }
        }
        Self {
            ext_ids,
            vocab_ids,
            oov,
            base,
        }
    }

    pub fn width(&self) -> usize {
        self.base + self.oov.len()
    }

    /// Extended id of a target token: vocabulary, then source OOV, else `UNK`.
    pub fn target_id(&self, vocab: &Vocab, token: &str) -> usize {
        vocab
            .id(token)
            .or_else(|| self.oov.iter().position(|o| o == token).map(|k| self.base + k))
            .unwrap_or(UNK)
    }

    /// Maps an extended id back to an in-vocabulary id for embedding lookup.
    pub fn input_id(&self, ext: usize) -> usize {
        if ext < self.base {
            ext
        } else {
            UNK
        }
    }

    pub fn token<'a>(&'a self, vocab: &'a Vocab, ext: usize) -> &'a str {
        if ext < self.base {
            vocab.token(ext).unwrap_or("<unk>")
        } else {
            self.oov.get(ext - self.base).map_or("<unk>", String::as_str)
        }
    }

    pub fn decode(&self, vocab: &Vocab, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(vocab, i).to_string()).collect()
    }
}
