//! Insertion and removal ablations and the grid that measures them.

mod needle;

use std::cmp::Ordering as CmpOrdering;
use serde::{Deserialize, Serialize};

pub use needle::{build_needle, NeedleSource};

use crate::corpus::{truncate_to_context, Document};
use crate::error::{Error, Result};
use crate::numerics::cosine_similarity;
use crate::parallel::map_ordered;
use crate::providers::Provider;

pub const DEFAULT_INSERT_FRACTIONS: [f64; 5] = [0.05, 0.10, 0.25, 0.50, 1.00];
pub const DEFAULT_REMOVE_FRACTIONS: [f64; 3] = [0.10, 0.25, 0.50];
/// Runs fail when more than this fraction of cells fail.
pub const FAILURE_THRESHOLD: f64 = 0.10;

const SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationKind {
    Insert,
    Remove,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Beginning,
    Middle,
    End,
}

impl Position {
    pub const ALL: [Position; 3] = [Position::Beginning, Position::Middle, Position::End];

    pub fn as_str(self) -> &'static str {
        match self {
            Position::Beginning => "beginning",
            Position::Middle => "middle",
            Position::End => "end",
        }
    }
}

impl AblationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationKind::Insert => "insert",
            AblationKind::Remove => "remove",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub kind: AblationKind,
    pub position: Position,
    /// Insert: needle size as a fraction of the document's tokens.
    /// Remove: fraction of sentences removed, rounded up.
    pub fraction: f64,
}

impl AblationSpec {
    pub fn grid(kind: AblationKind, fractions: &[f64]) -> Vec<Self> {
        Position::ALL
            .iter()
            .flat_map(|&position| {
                fractions.iter().map(move |&fraction| Self {
                    kind,
                    position,
                    fraction,
                })
            })
            .collect()
    }

    pub fn default_insert() -> Vec<Self> {
        Self::grid(AblationKind::Insert, &DEFAULT_INSERT_FRACTIONS)
    }

    pub fn default_remove() -> Vec<Self> {
        Self::grid(AblationKind::Remove, &DEFAULT_REMOVE_FRACTIONS)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fraction > 0.0 && self.fraction <= 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("fraction must be in (0, 1], got {}", self.fraction)))
        }
    }

    pub fn canonical_cmp(&self, other: &Self) -> CmpOrdering {
        (self.kind, self.position)
            .cmp(&(other.kind, other.position))
            .then(self.fraction.total_cmp(&other.fraction))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub doc_id: String,
    pub kind: AblationKind,
    pub position: Position,
    pub fraction: f64,
    pub cosine: f64,
    pub model_id: String,
    pub dataset: String,
    pub altered_token_estimate: usize,
}

impl AblationResult {
    pub fn spec(&self) -> AblationSpec {
        AblationSpec {
            kind: self.kind,
            position: self.position,
            fraction: self.fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub doc_id: String,
    pub dataset: String,
    pub model_id: String,
    pub spec: Option<AblationSpec>,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct GridOutcome {
    pub results: Vec<AblationResult>,
    pub failures: Vec<CellFailure>,
    pub cells: usize,
}

impl GridOutcome {
    pub fn failed_cells(&self) -> usize {
        self.cells - self.results.len()
    }

    pub fn check_threshold(&self) -> Result<()> {
        let failed = self.failed_cells();
        if self.cells > 0 && failed as f64 > FAILURE_THRESHOLD * self.cells as f64 {
            Err(Error::PartialFailure {
                failed,
                total: self.cells,
            })
        } else {
            Ok(())
        }
    }
}

/// Number of sentences before the insertion point used for `Middle`: the
/// boundary whose token prefix sum is closest to half the document, earliest
/// on ties.
pub fn middle_boundary(doc: &Document) -> usize {
    let total = doc.token_estimate as i64;
    let mut best = (i64::MAX, 0);
    let mut prefix = 0i64;
    for k in 0..=doc.sentences.len() {
        if k > 0 {
            prefix += doc.sentences[k - 1].token_estimate as i64;
        }
        let gap = (2 * prefix - total).abs();
        if gap < best.0 {
            best = (gap, k);
        }
    }
    best.1
}

/// Byte offset in `doc.text` where a needle goes for `position`.
pub fn insertion_offset(doc: &Document, position: Position) -> usize {
    match position {
        Position::Beginning => 0,
        Position::End => doc.text.len(),
        Position::Middle => match middle_boundary(doc) {
            0 => 0,
            k if k == doc.sentences.len() => doc.text.len(),
            k => doc.sentences[k - 1].end,
        },
    }
}

/// Places `needle` at `position`, separated from the original text by a
/// blank line. The original characters are kept in order and untouched.
pub fn insert_needle(doc: &Document, needle: &str, position: Position) -> Document {
    let at = insertion_offset(doc, position);
    let (head, tail) = doc.text.split_at(at);
    let mut text = String::with_capacity(doc.text.len() + needle.len() + 2 * SEPARATOR.len());
    text.push_str(head);
    if !head.is_empty() {
        text.push_str(SEPARATOR);
    }
    text.push_str(needle);
    if !tail.is_empty() {
        text.push_str(SEPARATOR);
    }
    text.push_str(tail);
    doc.with_text(text)
}

/// `ceil(fraction * n)` without floating-point overshoot (0.1 * 30 must give 3).
pub fn removal_count(n: usize, fraction: f64) -> usize {
    let exact = fraction * n as f64;
    let k = (exact - 1e-9 * exact.max(1.0)).ceil();
    (k.max(1.0) as usize).min(n)
}

/// Removes `ceil(fraction * n)` contiguous sentences and joins the rest with
/// single spaces. The middle block starts at `floor((n - k) / 2)`.
pub fn remove_sentences(doc: &Document, fraction: f64, position: Position) -> Result<Document> {
    let n = doc.sentences.len();
    if n == 0 {
        return Err(Error::InvalidInput(format!("document {} has no sentences", doc.id)));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let k = removal_count(n, fraction);
    if k >= n {
        return Err(Error::DegenerateRemoval { k, n });
    }
    let start = match position {
        Position::Beginning => 0,
        Position::End => n - k,
        Position::Middle => (n - k) / 2,
    };
    let kept: Vec<&str> = (0..n)
        .filter(|i| !(start..start + k).contains(i))
        .map(|i| doc.sentence_text(i))
        .collect();
    Ok(doc.with_sentences(&kept))
}

/// Builds the altered document for one cell, before context truncation.
pub fn apply_spec(doc: &Document, spec: &AblationSpec, source: &NeedleSource) -> Result<Document> {
    spec.validate()?;
    match spec.kind {
        AblationKind::Insert => {
            let budget = ((spec.fraction * doc.token_estimate as f64) - 1e-9).ceil().max(1.0) as usize;
            let needle = build_needle(source, budget)?;
            Ok(insert_needle(doc, &needle, spec.position))
        }
        AblationKind::Remove => remove_sentences(doc, spec.fraction, spec.position),
    }
}

/// Embeds every (document, condition) pair and records the cosine between
/// the original and altered texts. Both texts are truncated to the
/// provider's context window before embedding. Results come back in
/// `(doc_id, kind, position, fraction)` order.
pub fn run_ablation_grid(
    docs: &[Document],
    provider: &Provider,
    specs: &[AblationSpec],
    source: &NeedleSource,
) -> GridOutcome {
    let context = provider.config().context_tokens;
    let workers = provider.config().max_concurrency;
    let per_doc = map_ordered(docs, workers, |doc| run_document(doc, provider, specs, source, context));
    let mut outcome = GridOutcome {
        cells: docs.len() * specs.len(),
        ..GridOutcome::default()
    };
    for (results, failures) in per_doc {
        outcome.results.extend(results);
        outcome.failures.extend(failures);
    }
    outcome
        .results
        .sort_by(|a, b| a.doc_id.cmp(&b.doc_id).then(a.spec().canonical_cmp(&b.spec())));
    outcome.failures.sort_by(|a, b| {
        a.doc_id.cmp(&b.doc_id).then(match (&a.spec, &b.spec) {
            (Some(x), Some(y)) => x.canonical_cmp(y),
            (x, y) => x.is_some().cmp(&y.is_some()),
        })
    });
    outcome
}

fn run_document(
    doc: &Document,
    provider: &Provider,
    specs: &[AblationSpec],
    source: &NeedleSource,
    context: usize,
) -> (Vec<AblationResult>, Vec<CellFailure>) {
    let fail = |spec: Option<AblationSpec>, message: String| CellFailure {
        doc_id: doc.id.clone(),
        dataset: doc.dataset.clone(),
        model_id: provider.model_id().to_string(),
        spec,
        message,
    };
    let original = truncate_to_context(doc, context);
    let mut texts = vec![original.text.clone()];
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for spec in specs {
        match apply_spec(&original, spec, source) {
            Ok(altered) => {
                let tokens = altered.token_estimate;
                texts.push(truncate_to_context(&altered, context).text);
                cells.push((*spec, tokens));
            }
            Err(e) => failures.push(fail(Some(*spec), e.to_string())),
        }
    }

    let vectors = match provider.embed(&texts) {
        Ok(v) => v,
        Err(e) => {
            let message = format!("embedding failed: {e}");
            failures.extend(cells.iter().map(|(spec, _)| fail(Some(*spec), message.clone())));
            return (Vec::new(), failures);
        }
    };

    let mut results = Vec::with_capacity(cells.len());
    for ((spec, tokens), altered) in cells.iter().zip(&vectors[1..]) {
        match cosine_similarity(&vectors[0].values, &altered.values) {
            Ok(cosine) => results.push(AblationResult {
                doc_id: doc.id.clone(),
                kind: spec.kind,
                position: spec.position,
                fraction: spec.fraction,
                cosine,
                model_id: provider.model_id().to_string(),
                dataset: doc.dataset.clone(),
                altered_token_estimate: *tokens,
            }),
            Err(e) => failures.push(fail(Some(*spec), e.to_string())),
        }
    }
    (results, failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthetic_corpus, SyntheticSpec};
    use crate::providers::ProviderConfig;
    use proptest::prelude::*;

    fn ten_token_doc(n: usize) -> Document {
        let text = (0..n)
            .map(|i| format!("S{i} a b c d e f g h end."))
            .collect::<Vec<_>>()
            .join(" ");
        Document::new("d", text, "t")
    }

    #[test]
    fn default_grids() {
        assert_eq!(AblationSpec::default_insert().len(), 15);
        assert_eq!(AblationSpec::default_remove().len(), 9);
    }

    #[test]
    fn beginning_insert_keeps_original_as_suffix() {
        let doc = ten_token_doc(3);
        let altered = insert_needle(&doc, "Lorem ipsum dolor.", Position::Beginning);
        assert!(altered.text.starts_with("Lorem"));
        assert!(altered.text.ends_with(&doc.text));
        let end = insert_needle(&doc, "Lorem ipsum dolor.", Position::End);
        assert!(end.text.starts_with(&doc.text));
        assert!(end.text.ends_with("\n\nLorem ipsum dolor."));
    }

    #[test]
    fn middle_goes_after_half_the_tokens() {
        let doc = ten_token_doc(4);
        assert_eq!(middle_boundary(&doc), 2);
        let altered = insert_needle(&doc, "Needle here.", Position::Middle);
        let texts = altered.sentence_texts();
        assert_eq!(texts[2], "Needle here.");
        assert_eq!(texts.len(), 5);
    }

    #[test]
    fn middle_tie_prefers_earlier_boundary() {
        // Prefix sums 0, 3, 6, 9 against half of 9: boundaries 1 and 2 tie.
        let doc = Document::new("d", "a b c. d e f. g h i.", "t");
        assert_eq!(middle_boundary(&doc), 1);
    }

    #[test]
    fn insertion_adds_needle_tokens() {
        let doc = ten_token_doc(10);
        let source = NeedleSource::lorem(1000);
        for fraction in DEFAULT_INSERT_FRACTIONS {
            let spec = AblationSpec { kind: AblationKind::Insert, position: Position::End, fraction };
            let altered = apply_spec(&doc, &spec, &source).unwrap();
            let needle_tokens = altered.token_estimate - doc.token_estimate;
            let floor = fraction * doc.token_estimate as f64;
            assert!(needle_tokens as f64 >= floor - 1e-9);
            assert!((needle_tokens as f64) < floor + 17.0);
        }
    }

    #[test]
    fn removal_examples() {
        assert_eq!(removal_count(10, 0.25), 3);
        let four = ten_token_doc(4);
        let kept = remove_sentences(&four, 0.5, Position::End).unwrap();
        assert_eq!(kept.sentence_texts(), vec![four.sentence_text(0), four.sentence_text(1)]);
        let five = ten_token_doc(5);
        let middle = remove_sentences(&five, 0.2, Position::Middle).unwrap();
        let expected: Vec<&str> = [0, 1, 3, 4].iter().map(|&i| five.sentence_text(i)).collect();
        assert_eq!(middle.sentence_texts(), expected);
    }

    #[test]
    fn removing_everything_is_degenerate() {
        let one = ten_token_doc(1);
        assert!(matches!(
            remove_sentences(&one, 0.1, Position::Beginning),
            Err(Error::DegenerateRemoval { k: 1, n: 1 })
        ));
        assert!(remove_sentences(&ten_token_doc(4), 1.0, Position::End).is_err());
        assert!(remove_sentences(&ten_token_doc(4), 0.0, Position::End).is_err());
    }

    #[test]
    fn grid_cardinality_and_order() {
        let docs = synthetic_corpus(&SyntheticSpec::fixed(6, 8, 3));
        let provider = Provider::new(ProviderConfig::preset("toy-decay").unwrap(), None).unwrap();
        let specs = AblationSpec::default_insert();
        let outcome = run_ablation_grid(&docs, &provider, &specs, &NeedleSource::lorem(2000));
        assert_eq!(outcome.results.len(), 90);
        assert!(outcome.failures.is_empty());
        outcome.check_threshold().unwrap();
        let mut sorted = outcome.results.clone();
        sorted.sort_by(|a, b| a.doc_id.cmp(&b.doc_id).then(a.spec().canonical_cmp(&b.spec())));
        assert_eq!(sorted, outcome.results);
    }

    #[test]
    fn uniform_bag_of_words_begin_equals_end() {
        let docs = synthetic_corpus(&SyntheticSpec::fixed(5, 10, 8));
        let provider = Provider::new(ProviderConfig::preset("toy-uniform").unwrap(), None).unwrap();
        let specs = [
            AblationSpec { kind: AblationKind::Insert, position: Position::Beginning, fraction: 0.25 },
            AblationSpec { kind: AblationKind::Insert, position: Position::End, fraction: 0.25 },
        ];
        let outcome = run_ablation_grid(&docs, &provider, &specs, &NeedleSource::lorem(2000));
        for pair in outcome.results.chunks(2) {
            assert!((pair[0].cosine - pair[1].cosine).abs() <= 1e-9);
        }
    }

    #[test]
    fn degenerate_cells_are_counted_as_failures() {
        let docs = vec![Document::new("tiny", "Only one sentence.", "t")];
        let provider = Provider::new(ProviderConfig::preset("toy-uniform").unwrap(), None).unwrap();
        let outcome = run_ablation_grid(&docs, &provider, &AblationSpec::default_remove(), &NeedleSource::lorem(100));
        assert_eq!(outcome.failed_cells(), 9);
        assert!(matches!(outcome.check_threshold(), Err(Error::PartialFailure { failed: 9, total: 9 })));
    }

    proptest! {
        #[test]
        fn insertion_preserves_original_characters(
            n in 1usize..12,
            position in prop_oneof![Just(Position::Beginning), Just(Position::Middle), Just(Position::End)],
        ) {
            let doc = ten_token_doc(n);
            let needle = "Lorem ipsum dolor sit amet.";
            let at = insertion_offset(&doc, position);
            let altered = insert_needle(&doc, needle, position);
            let (head, tail) = doc.text.split_at(at);
            prop_assert!(altered.text.starts_with(head));
            prop_assert!(altered.text.ends_with(tail));
            prop_assert_eq!(altered.token_estimate, doc.token_estimate + 5);
            if position != Position::Middle {
                prop_assert!(altered.text.contains(&doc.text));
            }
        }

        #[test]
        fn removal_drops_a_contiguous_block(
            n in 2usize..40,
            fraction in prop_oneof![Just(0.1), Just(0.25), Just(0.5)],
            position in prop_oneof![Just(Position::Beginning), Just(Position::Middle), Just(Position::End)],
        ) {
            let doc = ten_token_doc(n);
            let k = removal_count(n, fraction);
            prop_assume!(k < n);
            let out = remove_sentences(&doc, fraction, position).unwrap();
            let before = doc.sentence_texts();
            let after = out.sentence_texts();
            prop_assert_eq!(after.len(), n - k);
            let start = (0..=n - k).find(|&s| {
                before[..s].iter().chain(&before[s + k..]).eq(after.iter())
            });
            prop_assert!(start.is_some());
        }
    }
}
