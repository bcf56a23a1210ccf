//! Sentence-importance probe.
//!
//! Each document embedding is regressed (no intercept) on the embeddings of
//! its own sentences. The fitted weights, rescaled to unit L2 norm, are read
//! as sentence importances and pooled against sentence position.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{apply_permutation, sentence_permutation, truncate_to_context, Document};
use crate::error::{Error, Result};
use crate::numerics::{l2_normalize, ols_solve, pearson, sign_test_p, CorrelationStat, OlsFit};
use crate::parallel::map_ordered;
use crate::providers::Provider;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub doc_id: String,
    pub dataset: String,
    pub model_id: String,
    pub family: String,
    pub n_sentences: usize,
    /// Unit L2 norm.
    pub coefficients: Vec<f64>,
    pub raw_fit: OlsFit,
    pub shuffled: bool,
    /// `permutation[k]` is the original index of the sentence at position `k`.
    pub permutation: Option<Vec<usize>>,
    /// `n_sentences >= dim`: the fit interpolates and the weights are not unique.
    pub exact_interpolation: bool,
}

impl RegressionResult {
    /// Raw weight of the first sentence as a share of the summed raw weights.
    /// A position-blind model gives `1 / n_sentences` in expectation.
    pub fn first_share(&self) -> Option<f64> {
        let total: f64 = self.raw_fit.coefficients.iter().sum();
        (total > 0.0).then(|| self.raw_fit.coefficients[0] / total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionMode {
    /// 1-based sentence index.
    #[default]
    Absolute,
    /// 1-based index divided by the document's sentence count.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    All,
    ByModel,
    ByFamily,
    ByLengthBucket,
}

/// Half-open range `[lo, hi)` of sentence counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub lo: usize,
    pub hi: usize,
}

impl LengthBucket {
    pub fn contains(&self, n: usize) -> bool {
        (self.lo..self.hi).contains(&n)
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.lo, self.hi)
    }
}

pub fn default_buckets() -> Vec<LengthBucket> {
    (0..6)
        .map(|i| LengthBucket {
            lo: 5 + 10 * i,
            hi: 15 + 10 * i,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolingOptions {
    #[serde(default = "default_min_sentences")]
    pub min_sentences: usize,
    #[serde(default)]
    pub include_exact_interpolation: bool,
    #[serde(default)]
    pub position_mode: PositionMode,
    #[serde(default = "default_buckets")]
    pub buckets: Vec<LengthBucket>,
    #[serde(default = "default_min_bucket_n")]
    pub min_bucket_n: usize,
}

fn default_min_sentences() -> usize {
    5
}

fn default_min_bucket_n() -> usize {
    10
}

impl Default for PoolingOptions {
    fn default() -> Self {
        Self {
            min_sentences: default_min_sentences(),
            include_exact_interpolation: false,
            position_mode: PositionMode::Absolute,
            buckets: default_buckets(),
            min_bucket_n: default_min_bucket_n(),
        }
    }
}

impl PoolingOptions {
    pub fn admits(&self, r: &RegressionResult) -> bool {
        r.n_sentences >= self.min_sentences && (self.include_exact_interpolation || !r.exact_interpolation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionStats {
    pub grouping: String,
    pub stat: CorrelationStat,
    pub n_documents: usize,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentFailure {
    pub doc_id: String,
    pub dataset: String,
    pub model_id: String,
    pub message: String,
}

pub fn decompose_document(doc: &Document, provider: &Provider) -> Result<RegressionResult> {
    let truncated = truncate_to_context(doc, provider.config().context_tokens);
    decompose_prepared(&truncated, provider, None)
}

fn decompose_prepared(doc: &Document, provider: &Provider, permutation: Option<Vec<usize>>) -> Result<RegressionResult> {
    let n = doc.sentences.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "document {} has {n} sentence(s); decomposition needs at least 2",
            doc.id
        )));
    }
    let mut texts: Vec<&str> = Vec::with_capacity(n + 1);
    texts.push(&doc.text);
    texts.extend(doc.sentence_texts());
    let vectors = provider.embed(&texts)?;

    let response = l2_normalize(&vectors[0].values)?;
    let columns = vectors[1..]
        .iter()
        .map(|v| l2_normalize(&v.values))
        .collect::<Result<Vec<_>>>()?;
    let fit = ols_solve(&columns, &response)?;
    let coefficients = l2_normalize(&fit.coefficients)
        .map_err(|_| Error::DegenerateSample(format!("document {}: all coefficients are zero", doc.id)))?;

    Ok(RegressionResult {
        doc_id: doc.id.clone(),
        dataset: doc.dataset.clone(),
        model_id: provider.model_id().to_string(),
        family: provider.config().family_label(),
        n_sentences: n,
        coefficients,
        exact_interpolation: n >= response.len(),
        shuffled: permutation.is_some(),
        permutation,
        raw_fit: fit,
    })
}

/// Decomposes many documents concurrently. Successful results come back
/// sorted by document id.
pub fn decompose_all(docs: &[Document], provider: &Provider) -> (Vec<RegressionResult>, Vec<DocumentFailure>) {
    collect(docs, provider, map_ordered(docs, provider.config().max_concurrency, |d| decompose_document(d, provider)))
}

fn collect(
    docs: &[Document],
    provider: &Provider,
    outcomes: Vec<Result<RegressionResult>>,
) -> (Vec<RegressionResult>, Vec<DocumentFailure>) {
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (doc, outcome) in docs.iter().zip(outcomes) {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => failures.push(DocumentFailure {
                doc_id: doc.id.clone(),
                dataset: doc.dataset.clone(),
                model_id: provider.model_id().to_string(),
                message: e.to_string(),
            }),
        }
    }
    results.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    failures.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    (results, failures)
}

fn position_value(index: usize, n: usize, mode: PositionMode) -> f64 {
    match mode {
        PositionMode::Absolute => (index + 1) as f64,
        PositionMode::Normalized => (index + 1) as f64 / n as f64,
    }
}

fn pooled(label: String, members: &[&RegressionResult], mode: PositionMode) -> Option<PositionStats> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in members {
        for (i, c) in r.coefficients.iter().enumerate() {
            xs.push(position_value(i, r.n_sentences, mode));
            ys.push(*c);
        }
    }
    match pearson(&xs, &ys) {
        Ok(stat) => Some(PositionStats {
            grouping: label,
            stat,
            n_documents: members.len(),
            n_pairs: xs.len(),
        }),
        Err(e) => {
            log::warn!("group {label} dropped: {e}");
            None
        }
    }
}

fn canonical<'a>(results: &'a [RegressionResult], options: &PoolingOptions) -> Vec<&'a RegressionResult> {
    let mut kept: Vec<&RegressionResult> = results.iter().filter(|r| options.admits(r)).collect();
    kept.sort_by(|a, b| {
        (&a.model_id, &a.dataset, &a.doc_id, a.shuffled).cmp(&(&b.model_id, &b.dataset, &b.doc_id, b.shuffled))
    });
    kept
}

/// Correlation between sentence position and normalized coefficient, pooled
/// over all admitted documents in each group.
pub fn position_importance_stats(
    results: &[RegressionResult],
    grouping: Grouping,
    options: &PoolingOptions,
) -> Result<Vec<PositionStats>> {
    let kept = canonical(results, options);
    if kept.is_empty() {
        return Err(Error::DegenerateSample("no documents pass the pooling filters".into()));
    }
    if grouping == Grouping::ByLengthBucket {
        return Ok(bucket_by_length(results, &options.buckets, options.min_bucket_n, options));
    }
    let mut groups: BTreeMap<String, Vec<&RegressionResult>> = BTreeMap::new();
    for r in kept {
        let label = match grouping {
            Grouping::All => "all".to_string(),
            Grouping::ByModel => r.model_id.clone(),
            Grouping::ByFamily => r.family.clone(),
            Grouping::ByLengthBucket => unreachable!(),
        };
        groups.entry(label).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .filter_map(|(label, members)| pooled(label, &members, options.position_mode))
        .collect())
}

/// One row per bucket of sentence counts; buckets with fewer than
/// `min_bucket_n` documents are left out.
pub fn bucket_by_length(
    results: &[RegressionResult],
    buckets: &[LengthBucket],
    min_bucket_n: usize,
    options: &PoolingOptions,
) -> Vec<PositionStats> {
    let kept = canonical(results, options);
    buckets
        .iter()
        .filter_map(|bucket| {
            let members: Vec<&RegressionResult> =
                kept.iter().copied().filter(|r| bucket.contains(r.n_sentences)).collect();
            if members.len() < min_bucket_n.max(1) {
                if !members.is_empty() {
                    log::info!("bucket {} omitted: {} documents", bucket.label(), members.len());
                }
                return None;
            }
            pooled(bucket.label(), &members, options.position_mode)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstSentenceRow {
    pub doc_id: String,
    pub n_sentences: usize,
    pub share: f64,
    pub expected: f64,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstSentenceReport {
    pub rows: Vec<FirstSentenceRow>,
    pub mean_share: f64,
    pub mean_expected: f64,
    pub mean_excess: f64,
    pub n_positive: usize,
    pub n_negative: usize,
    pub sign_test_p: f64,
}

impl FirstSentenceReport {
    pub fn from_results(results: &[RegressionResult]) -> Self {
        let rows: Vec<FirstSentenceRow> = results
            .iter()
            .filter_map(|r| {
                let share = r.first_share()?;
                let expected = 1.0 / r.n_sentences as f64;
                Some(FirstSentenceRow {
                    doc_id: r.doc_id.clone(),
                    n_sentences: r.n_sentences,
                    share,
                    expected,
                    excess: share - expected,
                })
            })
            .collect();
        let mean = |f: fn(&FirstSentenceRow) -> f64| {
            if rows.is_empty() {
                0.0
            } else {
                rows.iter().map(f).sum::<f64>() / rows.len() as f64
            }
        };
        let n_positive = rows.iter().filter(|r| r.excess > 0.0).count();
        let n_negative = rows.iter().filter(|r| r.excess < 0.0).count();
        Self {
            mean_share: mean(|r| r.share),
            mean_expected: mean(|r| r.expected),
            mean_excess: mean(|r| r.excess),
            sign_test_p: sign_test_p(n_positive, n_negative),
            n_positive,
            n_negative,
            rows,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShuffleControl {
    pub results: Vec<RegressionResult>,
    pub failures: Vec<DocumentFailure>,
    pub stats: Vec<PositionStats>,
    pub first_sentence: FirstSentenceReport,
}

/// Shuffles each document's sentences (after context truncation) with
/// `seed`, then runs the full decomposition on the shuffled text.
pub fn shuffle_control(docs: &[Document], provider: &Provider, seed: u64, options: &PoolingOptions) -> ShuffleControl {
    let context = provider.config().context_tokens;
    let outcomes = map_ordered(docs, provider.config().max_concurrency, |doc| {
        let truncated = truncate_to_context(doc, context);
        let permutation = sentence_permutation(truncated.sentences.len(), seed, &truncated.id);
        let shuffled = apply_permutation(&truncated, &permutation);
        decompose_prepared(&shuffled, provider, Some(permutation))
    });
    let (results, failures) = collect(docs, provider, outcomes);
    let stats = position_importance_stats(&results, Grouping::All, options).unwrap_or_default();
    let admitted: Vec<RegressionResult> = results.iter().filter(|r| options.admits(r)).cloned().collect();
    let first_sentence = FirstSentenceReport::from_results(&admitted);
    ShuffleControl {
        results,
        failures,
        stats,
        first_sentence,
    }
}
