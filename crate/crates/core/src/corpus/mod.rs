//! Corpus ingestion and the text transforms every experiment is built on.
//!
//! Documents are segmented once at construction. Transforms that rebuild a
//! text from sentence pieces (shuffle, removal) join with single spaces and
//! record the spans directly, so the sentence list of the result is exactly
//! the list of pieces, even when a piece had no terminator of its own.

mod load;
mod segment;
mod synthetic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::rng::{fnv1a64, mix64, SplitMix64};

pub use load::{load_corpus, CorpusFormat, CorpusLoad, DatasetManifest, RecordError};
pub use segment::{estimate_tokens, segment_sentences, SentenceSpan};
pub use synthetic::{synthetic_corpus, SyntheticSpec};

pub type Meta = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub sentences: Vec<SentenceSpan>,
    pub token_estimate: usize,
    pub dataset: String,
    #[serde(default)]
    pub meta: Meta,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, dataset: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            id: id.into(),
            sentences: segment_sentences(&text),
            token_estimate: estimate_tokens(&text),
            text,
            dataset: dataset.into(),
            meta: Meta::new(),
        }
    }

    pub fn with_meta(mut self, meta: Meta) -> Self {
        self.meta = meta;
        self
    }

    /// Same identity as `self`, new text, freshly segmented.
    pub fn with_text(&self, text: String) -> Self {
        Self {
            id: self.id.clone(),
            sentences: segment_sentences(&text),
            token_estimate: estimate_tokens(&text),
            text,
            dataset: self.dataset.clone(),
            meta: self.meta.clone(),
        }
    }

    /// Same identity as `self`, text rebuilt from `pieces` joined by single
    /// spaces. Each piece becomes exactly one sentence span.
    pub fn with_sentences<S: AsRef<str>>(&self, pieces: &[S]) -> Self {
        let mut text = String::new();
        let mut sentences = Vec::with_capacity(pieces.len());
        for piece in pieces {
            let piece = piece.as_ref().trim();
            if piece.is_empty() {
                continue;
            }
            if !text.is_empty() {
                text.push(' ');
            }
            let start = text.len();
            text.push_str(piece);
            sentences.push(SentenceSpan {
                index: sentences.len(),
                start,
                end: text.len(),
                token_estimate: estimate_tokens(piece),
            });
        }
        Self {
            id: self.id.clone(),
            token_estimate: estimate_tokens(&text),
            text,
            sentences,
            dataset: self.dataset.clone(),
            meta: self.meta.clone(),
        }
    }

    pub fn sentence_text(&self, index: usize) -> &str {
        self.sentences[index].text(&self.text)
    }

    pub fn sentence_texts(&self) -> Vec<&str> {
        self.sentences.iter().map(|s| s.text(&self.text)).collect()
    }
}

/// Keeps the longest prefix of whole sentences that fits `context_tokens`.
/// When even the first sentence is too long, keeps its first
/// `context_tokens` whitespace tokens instead.
pub fn truncate_to_context(doc: &Document, context_tokens: usize) -> Document {
    let budget = context_tokens.max(1);
    if doc.token_estimate <= budget {
        return doc.clone();
    }

    let mut used = 0;
    let mut keep_end = None;
    for span in &doc.sentences {
        if used + span.token_estimate > budget {
            break;
        }
        used += span.token_estimate;
        keep_end = Some(span.end);
    }

    let end = match keep_end {
        Some(end) => end,
        None => {
            let first = &doc.sentences[0];
            nth_token_end(&doc.text, first.start, budget).unwrap_or(first.end)
        }
    };
    doc.with_text(doc.text[..end].to_string())
}

/// Byte offset just past the `count`-th whitespace token at or after `from`.
fn nth_token_end(text: &str, from: usize, count: usize) -> Option<usize> {
    let mut seen = 0;
    let mut in_token = false;
    for (i, c) in text[from..].char_indices() {
        if c.is_whitespace() {
            if in_token {
                seen += 1;
                if seen == count {
                    return Some(from + i);
                }
            }
            in_token = false;
        } else {
            in_token = true;
        }
    }
    (in_token && seen + 1 == count).then_some(text.len())
}

/// Fisher-Yates permutation of `n` sentence indices for `(seed, doc_id)`.
///
/// The generator is [`SplitMix64`] seeded with `mix64(seed) ^ fnv1a64(doc_id)`.
/// Entry `k` of the result is the original index placed at position `k`.
pub fn sentence_permutation(n: usize, seed: u64, doc_id: &str) -> Vec<usize> {
    let mut rng = SplitMix64::new(mix64(seed) ^ fnv1a64(doc_id.as_bytes()));
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
    order
}

/// Reorders the sentences of `doc` by `permutation` (as produced by
/// [`sentence_permutation`]) and joins them with single spaces.
pub fn apply_permutation(doc: &Document, permutation: &[usize]) -> Document {
    let pieces: Vec<&str> = permutation.iter().map(|&i| doc.sentence_text(i)).collect();
    doc.with_sentences(&pieces)
}

pub fn shuffle_sentences(doc: &Document, seed: u64) -> Document {
    let permutation = sentence_permutation(doc.sentences.len(), seed, &doc.id);
    apply_permutation(doc, &permutation)
}
