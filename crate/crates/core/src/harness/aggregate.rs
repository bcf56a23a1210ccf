use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ablation::{AblationKind, AblationResult, Position};
use crate::decomposition::RegressionResult;
use crate::error::{Error, Result};

/// One raw record as persisted in a stage's `raw.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawRecord {
    Ablation(AblationResult),
    Regression(RegressionResult),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub dataset: String,
    /// `insert`, `remove`, `decompose` or `shuffled`.
    pub kind: String,
    /// Ablation position, or the 1-based sentence index for coefficients.
    pub position: String,
    pub fraction: Option<f64>,
    /// `cosine` or `coefficient`.
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub stddev: f64,
    /// `(end - this) / end` against the end row of the same condition.
    pub rel_decrease_mean: Option<f64>,
    pub rel_decrease_median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn total_n(&self) -> usize {
        self.rows.iter().map(|r| r.n).sum()
    }

    pub fn row(&self, model: &str, dataset: &str, kind: &str, position: &str, fraction: Option<f64>) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| {
            r.model == model && r.dataset == dataset && r.kind == kind && r.position == position && r.fraction == fraction
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub stddev: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Some(Self {
            n,
            mean,
            median,
            stddev: var.sqrt(),
        })
    }
}

/// `(end - value) / end`.
pub fn relative_decrease(value: f64, end: f64) -> Option<f64> {
    (end != 0.0).then(|| (end - value) / end)
}

/// Sort key that orders positions naturally: ablation positions by their
/// place in the document, sentence indices numerically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum PositionKey {
    Named(Position),
    Index(usize),
}

impl PositionKey {
    fn label(self) -> String {
        match self {
            PositionKey::Named(p) => p.as_str().to_string(),
            PositionKey::Index(i) => i.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Fraction(u64);

impl Fraction {
    fn new(f: f64) -> Self {
        // Bit pattern order equals numeric order for non-negative floats.
        Fraction(f.to_bits())
    }

    fn value(self) -> f64 {
        f64::from_bits(self.0)
    }
}

type GroupKey = (String, String, String, PositionKey, Option<Fraction>);

fn build(groups: BTreeMap<GroupKey, Vec<f64>>, metric: &str) -> SummaryTable {
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((model, dataset, kind, position, fraction), values)| {
            let m = Moments::of(&values).expect("groups are never empty");
            SummaryRow {
                model,
                dataset,
                kind,
                position: position.label(),
                fraction: fraction.map(Fraction::value),
                metric: metric.to_string(),
                n: m.n,
                mean: m.mean,
                median: m.median,
                stddev: m.stddev,
                rel_decrease_mean: None,
                rel_decrease_median: None,
            }
        })
        .collect();

    if metric == "cosine" {
        let ends: BTreeMap<(String, String, String, Option<u64>), (f64, f64)> = rows
            .iter()
            .filter(|r| r.position == Position::End.as_str())
            .map(|r| {
                (
                    (r.model.clone(), r.dataset.clone(), r.kind.clone(), r.fraction.map(f64::to_bits)),
                    (r.mean, r.median),
                )
            })
            .collect();
        for row in &mut rows {
            if row.position == Position::End.as_str() {
                continue;
            }
            let key = (row.model.clone(), row.dataset.clone(), row.kind.clone(), row.fraction.map(f64::to_bits));
            if let Some(&(end_mean, end_median)) = ends.get(&key) {
                row.rel_decrease_mean = relative_decrease(row.mean, end_mean);
                row.rel_decrease_median = relative_decrease(row.median, end_median);
            }
        }
    }
    SummaryTable { rows }
}

pub fn aggregate_ablation(raw: &[AblationResult]) -> Result<SummaryTable> {
    if raw.is_empty() {
        return Err(Error::InvalidInput("nothing to aggregate".into()));
    }
    let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    for r in raw {
        groups
            .entry((
                r.model_id.clone(),
                r.dataset.clone(),
                r.kind.as_str().to_string(),
                PositionKey::Named(r.position),
                Some(Fraction::new(r.fraction)),
            ))
            .or_default()
            .push(r.cosine);
    }
    Ok(build(groups, "cosine"))
}

/// Per-position normalized coefficients.
pub fn aggregate_regression(raw: &[RegressionResult]) -> Result<SummaryTable> {
    if raw.is_empty() {
        return Err(Error::InvalidInput("nothing to aggregate".into()));
    }
    let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    for r in raw {
        let kind = if r.shuffled { "shuffled" } else { "decompose" };
        for (i, c) in r.coefficients.iter().enumerate() {
            groups
                .entry((r.model_id.clone(), r.dataset.clone(), kind.to_string(), PositionKey::Index(i + 1), None))
                .or_default()
                .push(*c);
        }
    }
    Ok(build(groups, "coefficient"))
}

/// Summarizes a homogeneous batch of raw records. Rows are ordered by model,
/// dataset, kind, position and fraction.
pub fn aggregate(raw: &[RawRecord]) -> Result<SummaryTable> {
    let ablation: Vec<AblationResult> = raw
        .iter()
        .filter_map(|r| match r {
            RawRecord::Ablation(a) => Some(a.clone()),
            RawRecord::Regression(_) => None,
        })
        .collect();
    match (ablation.len(), raw.len()) {
        (_, 0) => Err(Error::InvalidInput("nothing to aggregate".into())),
        (a, n) if a == n => aggregate_ablation(&ablation),
        (0, _) => {
            let regression: Vec<RegressionResult> = raw
                .iter()
                .filter_map(|r| match r {
                    RawRecord::Regression(x) => Some(x.clone()),
                    RawRecord::Ablation(_) => None,
                })
                .collect();
            aggregate_regression(&regression)
        }
        _ => Err(Error::InvalidInput("cannot aggregate ablation and regression results together".into())),
    }
}

/// Begin-versus-end relative decrease of mean cosine, if both rows exist.
pub fn begin_end_gap(table: &SummaryTable, model: &str, dataset: &str, kind: AblationKind, fraction: f64) -> Option<f64> {
    let begin = table.row(model, dataset, kind.as_str(), Position::Beginning.as_str(), Some(fraction))?;
    let end = table.row(model, dataset, kind.as_str(), Position::End.as_str(), Some(fraction))?;
    relative_decrease(begin.mean, end.mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::OlsFit;

    fn cell(doc: &str, kind: AblationKind, position: Position, fraction: f64, cosine: f64) -> AblationResult {
        AblationResult {
            doc_id: doc.into(),
            kind,
            position,
            fraction,
            cosine,
            model_id: "m".into(),
            dataset: "d".into(),
            altered_token_estimate: 10,
        }
    }

    #[test]
    fn single_value() {
        let t = aggregate_ablation(&[cell("a", AblationKind::Insert, Position::End, 0.1, 0.97)]).unwrap();
        let r = &t.rows[0];
        assert_eq!((r.mean, r.median, r.stddev, r.n), (0.97, 0.97, 0.0, 1));
    }

    #[test]
    fn two_values() {
        let t = aggregate_ablation(&[
            cell("a", AblationKind::Insert, Position::End, 0.1, 0.9),
            cell("b", AblationKind::Insert, Position::End, 0.1, 1.0),
        ])
        .unwrap();
        assert!((t.rows[0].mean - 0.95).abs() < 1e-15);
        assert!((t.rows[0].median - 0.95).abs() < 1e-15);
        assert!((t.rows[0].stddev - 0.05).abs() < 1e-15);
    }

    #[test]
    fn begin_end_relative_decrease() {
        let t = aggregate_ablation(&[
            cell("a", AblationKind::Insert, Position::Beginning, 0.2, 0.885),
            cell("a", AblationKind::Insert, Position::End, 0.2, 0.963),
        ])
        .unwrap();
        let gap = begin_end_gap(&t, "m", "d", AblationKind::Insert, 0.2).unwrap();
        assert!((gap - 0.081).abs() < 5e-4, "{gap}");
        assert_eq!(t.rows[0].position, "beginning");
        assert_eq!(t.rows[1].rel_decrease_mean, None);
    }

    #[test]
    fn rows_are_ordered_and_conserve_counts() {
        let mut raw = Vec::new();
        for doc in ["b", "a", "c"] {
            for &p in Position::ALL.iter().rev() {
                for f in [0.5, 0.05, 1.0] {
                    raw.push(cell(doc, AblationKind::Remove, p, f, 0.9));
                    raw.push(cell(doc, AblationKind::Insert, p, f, 0.8));
                }
            }
        }
        let t = aggregate_ablation(&raw).unwrap();
        assert_eq!(t.rows.len(), 18);
        assert_eq!(t.total_n(), raw.len());
        assert_eq!(t.rows[0].kind, "insert");
        assert_eq!(t.rows[0].position, "beginning");
        assert_eq!(t.rows[0].fraction, Some(0.05));
        assert_eq!(t.rows[2].fraction, Some(1.0));
        assert_eq!(t.rows[3].position, "middle");
    }

    fn regression(doc: &str, coefficients: Vec<f64>) -> RegressionResult {
        RegressionResult {
            doc_id: doc.into(),
            dataset: "d".into(),
            model_id: "m".into(),
            family: "none".into(),
            n_sentences: coefficients.len(),
            raw_fit: OlsFit {
                coefficients: coefficients.clone(),
                r_squared: 1.0,
                mae: 0.0,
                sse: 0.0,
                condition: 1.0,
                ridge_used: false,
            },
            coefficients,
            shuffled: false,
            permutation: None,
            exact_interpolation: false,
        }
    }

    #[test]
    fn regression_rows_sort_numerically() {
        let raw: Vec<RawRecord> = [regression("a", vec![0.1; 12]), regression("b", vec![0.2; 3])]
            .into_iter()
            .map(RawRecord::Regression)
            .collect();
        let t = aggregate(&raw).unwrap();
        let positions: Vec<&str> = t.rows.iter().map(|r| r.position.as_str()).collect();
        assert_eq!(positions[..3], ["1", "2", "3"]);
        assert_eq!(positions[11], "12");
        assert_eq!(t.total_n(), 15);
        assert!((t.rows[0].mean - 0.15).abs() < 1e-15);
    }

    #[test]
    fn mixed_kinds_are_rejected() {
        let raw = vec![
            RawRecord::Ablation(cell("a", AblationKind::Insert, Position::End, 0.1, 0.9)),
            RawRecord::Regression(regression("a", vec![1.0, 0.0])),
        ];
        assert!(aggregate(&raw).is_err());
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn raw_records_round_trip_untagged() {
        let a = RawRecord::Ablation(cell("a", AblationKind::Insert, Position::Middle, 0.25, 0.5));
        let r = RawRecord::Regression(regression("b", vec![0.6, 0.8]));
        for rec in [a, r] {
            let line = serde_json::to_string(&rec).unwrap();
            assert_eq!(serde_json::from_str::<RawRecord>(&line).unwrap(), rec);
        }
    }
}
