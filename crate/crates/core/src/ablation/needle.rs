use crate::corpus::{estimate_tokens, segment_sentences};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const LOREM_WORDS: &[&str] = &[
    "lorem", "ipsum", "dolor", "sit", "amet", "consectetur", "adipiscing", "elit", "sed", "do",
    "eiusmod", "tempor", "incididunt", "ut", "labore", "et", "dolore", "magna", "aliqua", "enim",
    "ad", "minim", "veniam", "quis", "nostrud", "exercitation", "ullamco", "laboris", "nisi",
    "aliquip", "ex", "ea", "commodo", "consequat", "duis", "aute", "irure", "in", "reprehenderit",
    "voluptate", "velit", "esse", "cillum", "fugiat", "nulla", "pariatur", "excepteur", "sint",
    "occaecat", "cupidatat", "non", "proident", "sunt", "culpa", "qui", "officia", "deserunt",
    "mollit", "anim", "id", "est", "laborum", "pellentesque", "habitant", "morbi", "tristique",
    "senectus", "netus", "malesuada", "fames", "turpis", "egestas", "vestibulum", "tortor",
    "quam", "feugiat", "vitae", "ultricies", "eget", "tempus", "aenean", "ultrices", "mi",
    "placerat", "eleifend", "leo", "mauris", "pharetra", "nibh", "vel", "fringilla", "sapien",
    "curabitur", "rhoncus", "volutpat", "blandit", "posuere", "urna", "nunc", "lacus", "viverra",
];

const LOREM_OPENING: &str = "Lorem ipsum dolor sit amet, consectetur adipiscing elit.";

/// Filler passage that needles are cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct NeedleSource {
    pub text: String,
    pub token_estimate: usize,
}

impl NeedleSource {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            token_estimate: estimate_tokens(&text),
            text,
        }
    }

    /// The lorem-ipsum passage shipped in `assets/lorem_ipsum.txt`.
    pub fn bundled() -> Self {
        Self::new(include_str!("../../assets/lorem_ipsum.txt"))
    }

    /// Deterministic paragraph-structured lorem ipsum of at least
    /// `min_tokens` tokens. Always starts with the classic opening sentence.
    pub fn lorem(min_tokens: usize) -> Self {
        let mut rng = SplitMix64::new(0x1057_1e55);
        let mut paragraphs: Vec<String> = Vec::new();
        let mut tokens = 0;
        while tokens < min_tokens.max(1) {
            let sentences = 4 + rng.below(4) as usize;
            let mut paragraph: Vec<String> = Vec::with_capacity(sentences);
            for s in 0..sentences {
                if paragraphs.is_empty() && s == 0 {
                    paragraph.push(LOREM_OPENING.to_string());
                    tokens += estimate_tokens(LOREM_OPENING);
                    continue;
                }
                let words = 7 + rng.below(10) as usize;
                let comma_after = if words > 9 { Some(3 + rng.below(4) as usize) } else { None };
                let mut sentence = String::new();
                for w in 0..words {
                    let word = LOREM_WORDS[rng.below(LOREM_WORDS.len() as u64) as usize];
                    if w == 0 {
                        let mut chars = word.chars();
                        if let Some(first) = chars.next() {
                            sentence.extend(first.to_uppercase());
                            sentence.push_str(chars.as_str());
                        }
                    } else {
                        sentence.push(' ');
                        sentence.push_str(word);
                    }
                    if Some(w) == comma_after {
                        sentence.push(',');
                    }
                }
                sentence.push('.');
                tokens += words;
                paragraph.push(sentence);
            }
            paragraphs.push(paragraph.join(" "));
        }
        Self::new(paragraphs.join("\n\n"))
    }
}

/// Prefix of the source holding at least `token_budget` tokens, extended to
/// the end of the sentence in which the budget runs out.
pub fn build_needle(source: &NeedleSource, token_budget: usize) -> Result<String> {
    let budget = token_budget.max(1);
    if source.token_estimate < budget {
        return Err(Error::NeedleTooShort {
            required: budget,
            available: source.token_estimate,
        });
    }
    let mut seen = 0;
    for span in segment_sentences(&source.text) {
        seen += span.token_estimate;
        if seen >= budget {
            return Ok(source.text[..span.end].to_string());
        }
    }
    Ok(source.text.trim_end().to_string())
}
