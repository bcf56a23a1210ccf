use serde::{Deserialize, Serialize};

/// One sentence of a parent text, addressed by byte offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub token_estimate: usize,
}

impl SentenceSpan {
    pub fn text<'a>(&self, parent: &'a str) -> &'a str {
        &parent[self.start..self.end]
    }
}

/// Count of maximal runs of non-whitespace characters.
pub fn estimate_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Splits after `.`, `!` or `?` when followed by whitespace or end of text,
/// and at every newline. Spans are trimmed; whitespace-only fragments are
/// dropped. No abbreviation handling.
pub fn segment_sentences(text: &str) -> Vec<SentenceSpan> {
    let mut cuts = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((at, c)) = chars.next() {
        if c == '\n' {
            cuts.push((at, at + 1));
        } else if is_terminator(c) {
            let followed_by_space = match chars.peek() {
                None => true,
                Some(&(_, next)) => next.is_whitespace(),
            };
            if followed_by_space {
                cuts.push((at + c.len_utf8(), at + c.len_utf8()));
            }
        }
    }

    let mut spans = Vec::new();
    let mut fragment_start = 0;
    let push = |from: usize, to: usize, spans: &mut Vec<SentenceSpan>| {
        let fragment = &text[from..to];
        let trimmed = fragment.trim_start();
        let start = from + (fragment.len() - trimmed.len());
        let trimmed = trimmed.trim_end();
        if !trimmed.is_empty() {
            spans.push(SentenceSpan {
                index: spans.len(),
                start,
                end: start + trimmed.len(),
                token_estimate: estimate_tokens(trimmed),
            });
        }
    };
    for (fragment_end, next_start) in cuts {
        push(fragment_start, fragment_end, &mut spans);
        fragment_start = next_start;
    }
    push(fragment_start, text.len(), &mut spans);
    spans
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(text: &str) -> Vec<&str> {
        segment_sentences(text).iter().map(|s| s.text(text)).collect()
    }

    #[test]
    fn terminators_split() {
        assert_eq!(texts("A. B? C!"), vec!["A.", "B?", "C!"]);
    }

    #[test]
    fn newlines_split() {
        assert_eq!(texts("Line1\nLine2"), vec!["Line1", "Line2"]);
        assert_eq!(texts("one\n\n\n  two  \n"), vec!["one", "two"]);
    }

    #[test]
    fn abbreviations_are_not_special() {
        assert_eq!(texts("e.g. test."), vec!["e.g.", "test."]);
    }

    #[test]
    fn terminator_inside_token_does_not_split() {
        assert_eq!(texts("Version 1.2 shipped. Done"), vec!["Version 1.2 shipped.", "Done"]);
        assert_eq!(texts("Wait... what?"), vec!["Wait...", "what?"]);
    }

    #[test]
    fn empty_and_blank_inputs() {
        assert!(segment_sentences("").is_empty());
        assert!(segment_sentences("  \n\t\n").is_empty());
    }

    #[test]
    fn spans_carry_token_counts() {
        let spans = segment_sentences("a b c. d e");
        assert_eq!(spans[0].token_estimate, 3);
        assert_eq!(spans[1].token_estimate, 2);
        assert_eq!(spans[1].index, 1);
    }

    #[test]
    fn multibyte_text() {
        assert_eq!(texts("Ça va? Très bien. 日本語\nend"), vec!["Ça va?", "Très bien.", "日本語", "end"]);
    }

    #[test]
    fn token_estimate_examples() {
        assert_eq!(estimate_tokens("hello world"), 2);
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("a  b\tc\n"), 3);
    }
}
