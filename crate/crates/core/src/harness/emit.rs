use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::plot::{Chart, Segment, Series};
use super::{Conventions, ReferenceRow, SummaryTable};
use crate::decomposition::{PoolingOptions, PositionMode, PositionStats, RegressionResult};
use crate::error::{Error, Result};
use crate::truncation_model::{ExposureProfile, ImportanceProfile};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

pub(crate) fn write_jsonl<T: Serialize, I: IntoIterator<Item = T>>(path: &Path, items: I) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    finish(w, path)
}

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let w = create(path)?;
    let mut csv = csv::Writer::from_writer(w);
    for row in rows {
        csv.serialize(row).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    }
    let w = csv
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    finish(w, path)
}

/// `summary.csv` and `summary.json` (the latter with convention labels).
pub(crate) fn write_summary(dir: &Path, table: &SummaryTable, conventions: &Conventions) -> Result<()> {
    write_csv(&dir.join("summary.csv"), &table.rows)?;
    write_json(
        &dir.join("summary.json"),
        &serde_json::json!({"conventions": conventions, "rows": table.rows}),
    )
}

#[derive(Serialize)]
struct StatsRow<'a> {
    model: &'a str,
    scheme: &'a str,
    grouping: &'a str,
    r: f64,
    p: f64,
    n_documents: usize,
    n_pairs: usize,
}

pub(crate) fn write_position_stats(path: &Path, rows: &[(String, String, PositionStats)]) -> Result<()> {
    let rows: Vec<StatsRow> = rows
        .iter()
        .map(|(model, scheme, s)| StatsRow {
            model,
            scheme,
            grouping: &s.grouping,
            r: s.stat.r,
            p: s.stat.p_two_sided,
            n_documents: s.n_documents,
            n_pairs: s.n_pairs,
        })
        .collect();
    write_csv(path, &rows)
}

pub(crate) fn write_reference(path: &Path, rows: &[ReferenceRow]) -> Result<()> {
    write_csv(path, rows)
}

pub(crate) fn write_exposure(dir: &Path, profile: &ExposureProfile, importances: &[(String, ImportanceProfile)]) -> Result<()> {
    let path = dir.join("profile.csv");
    let mut w = create(&path)?;
    let mut header = vec!["position".to_string(), "exposure".to_string()];
    header.extend(importances.iter().map(|(label, _)| label.clone()));
    let io = |e| Error::io(&path, e);
    {
        let mut csv = csv::Writer::from_writer(&mut w);
        let map = |e: csv::Error| Error::InvalidInput(format!("{}: {e}", path.display()));
        csv.write_record(&header).map_err(map)?;
        for (i, t) in profile.t.iter().enumerate() {
            let mut record = vec![(i + 1).to_string(), t.to_string()];
            record.extend(importances.iter().map(|(_, imp)| imp.importance[i].to_string()));
            csv.write_record(&record).map_err(map)?;
        }
        csv.flush().map_err(io)?;
    }
    finish(w, &path)?;
    let verdicts: Vec<serde_json::Value> = importances
        .iter()
        .map(|(label, imp)| serde_json::json!({"update_map": label, "verdict": imp.verdict}))
        .collect();
    write_json(
        &dir.join("exposure.json"),
        &serde_json::json!({"N": profile.n, "samples": profile.samples, "maps": verdicts}),
    )
}

fn slug(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if c.is_ascii_alphanumeric() || c == '.' || c == '_' {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

fn write_svg(path: &Path, chart: &Chart) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(chart.to_svg().as_bytes()).map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

#[derive(Serialize)]
struct LinePoint<'a> {
    model: &'a str,
    dataset: &'a str,
    kind: &'a str,
    position: &'a str,
    fraction: f64,
    mean: f64,
    median: f64,
    n: usize,
}

/// One chart per (model, dataset, kind): mean cosine against fraction, one
/// line per position. Returns notes about skipped charts.
pub fn emit_ablation_plots(table: &SummaryTable, out_dir: &Path) -> Result<Vec<String>> {
    let mut groups: BTreeMap<(&str, &str, &str), Vec<&super::SummaryRow>> = BTreeMap::new();
    for row in table.rows.iter().filter(|r| r.metric == "cosine") {
        groups.entry((&row.model, &row.dataset, &row.kind)).or_default().push(row);
    }
    let mut notes = Vec::new();
    if groups.is_empty() {
        notes.push("no cosine rows; ablation plots skipped".to_string());
        return Ok(notes);
    }
    for ((model, dataset, kind), rows) in groups {
        let mut series: Vec<Series> = Vec::new();
        let mut data = Vec::new();
        for row in rows {
            let Some(fraction) = row.fraction else { continue };
            match series.iter_mut().find(|s| s.label == row.position) {
                Some(s) => s.points.push((fraction, row.mean)),
                None => series.push(Series {
                    label: row.position.clone(),
                    points: vec![(fraction, row.mean)],
                }),
            }
            data.push(LinePoint {
                model,
                dataset,
                kind,
                position: &row.position,
                fraction,
                mean: row.mean,
                median: row.median,
                n: row.n,
            });
        }
        let chart = Chart {
            title: format!("{kind}: {model} / {dataset}"),
            x_label: if kind == "insert" { "needle size (fraction of tokens)" } else { "fraction of sentences removed" }
                .into(),
            y_label: "mean cosine similarity".into(),
            lines: series,
            ..Chart::default()
        };
        if chart.is_empty() {
            notes.push(format!("{kind} plot for {model} / {dataset} skipped: no points"));
            continue;
        }
        let stem = out_dir.join(format!("{kind}-{}-{}", slug(model), slug(dataset)));
        write_svg(&stem.with_extension("svg"), &chart)?;
        write_csv(&stem.with_extension("csv"), &data)?;
    }
    Ok(notes)
}

#[derive(Serialize)]
struct CoefficientPoint<'a> {
    doc_id: &'a str,
    dataset: &'a str,
    n_sentences: usize,
    bucket: &'a str,
    position: f64,
    coefficient: f64,
}

#[derive(Serialize)]
struct Trend {
    bucket: String,
    n_documents: usize,
    n_pairs: usize,
    intercept: f64,
    slope: f64,
    x_min: f64,
    x_max: f64,
}

fn line_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| {
        let slope = sxy / sxx;
        (my - slope * mx, slope)
    })
}

/// Per model: coefficient against sentence position, with one least-squares
/// trend line per length bucket holding at least `min_bucket_n` documents.
pub fn emit_coefficient_plots(results: &[RegressionResult], opts: &PoolingOptions, out_dir: &Path) -> Result<Vec<String>> {
    let mut by_model: BTreeMap<&str, Vec<&RegressionResult>> = BTreeMap::new();
    for r in results.iter().filter(|r| opts.admits(r)) {
        by_model.entry(&r.model_id).or_default().push(r);
    }
    let mut notes = Vec::new();
    if by_model.is_empty() {
        notes.push("no documents pass the pooling filters; coefficient plots skipped".to_string());
        return Ok(notes);
    }
    for (model, mut docs) in by_model {
        docs.sort_by(|a, b| (&a.dataset, &a.doc_id, a.shuffled).cmp(&(&b.dataset, &b.doc_id, b.shuffled)));
        let label_of = |n: usize| {
            opts.buckets
                .iter()
                .find(|b| b.contains(n))
                .map_or_else(|| "other".to_string(), |b| b.label())
        };
        let mut buckets: Vec<(String, Vec<(f64, f64)>, usize)> = Vec::new();
        let mut data_labels = Vec::new();
        for r in &docs {
            let label = label_of(r.n_sentences);
            let points: Vec<(f64, f64)> = r
                .coefficients
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let x = match opts.position_mode {
                        PositionMode::Absolute => (i + 1) as f64,
                        PositionMode::Normalized => (i + 1) as f64 / r.n_sentences as f64,
                    };
                    (x, *c)
                })
                .collect();
            match buckets.iter_mut().find(|b| b.0 == label) {
                Some(b) => {
                    b.1.extend(&points);
                    b.2 += 1;
                }
                None => buckets.push((label.clone(), points.clone(), 1)),
            }
            data_labels.push((label, points));
        }
        buckets.sort_by_key(|b| {
            opts.buckets
                .iter()
                .position(|x| x.label() == b.0)
                .unwrap_or(usize::MAX)
        });

        let mut data = Vec::new();
        for (r, (label, points)) in docs.iter().zip(&data_labels) {
            for &(x, y) in points {
                data.push(CoefficientPoint {
                    doc_id: &r.doc_id,
                    dataset: &r.dataset,
                    n_sentences: r.n_sentences,
                    bucket: label,
                    position: x,
                    coefficient: y,
                });
            }
        }
        let mut trends = Vec::new();
        let mut segments = Vec::new();
        for (label, points, n_docs) in &buckets {
            if label == "other" || *n_docs < opts.min_bucket_n.max(1) {
                notes.push(format!("trend for bucket {label} of {model} skipped: {n_docs} documents"));
                continue;
            }
            let Some((a, b)) = line_fit(points) else { continue };
            let x_min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let x_max = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            segments.push(Segment {
                label: format!("trend {label}"),
                from: (x_min, a + b * x_min),
                to: (x_max, a + b * x_max),
            });
            trends.push(Trend {
                bucket: label.clone(),
                n_documents: *n_docs,
                n_pairs: points.len(),
                intercept: a,
                slope: b,
                x_min,
                x_max,
            });
        }
        let chart = Chart {
            title: format!("coefficients: {model}"),
            x_label: match opts.position_mode {
                PositionMode::Absolute => "sentence position".into(),
                PositionMode::Normalized => "sentence position / sentences".into(),
            },
            y_label: "normalized coefficient".into(),
            scatter: buckets
                .into_iter()
                .map(|(label, points, n)| Series {
                    label: format!("{label} (n={n})"),
                    points,
                })
                .collect(),
            segments,
            ..Chart::default()
        };
        let stem = out_dir.join(format!("coefficients-{}", slug(model)));
        write_svg(&stem.with_extension("svg"), &chart)?;
        write_csv(&stem.with_extension("csv"), &data)?;
        write_csv(&PathBuf::from(format!("{}-trends.csv", stem.display())), &trends)?;
    }
    Ok(notes)
}

/// Importance under each update map, rescaled to a maximum of 1.
pub fn emit_exposure_plot(profile: &ExposureProfile, importances: &[(String, ImportanceProfile)], out_dir: &Path) -> Result<Vec<String>> {
    if profile.t.is_empty() || importances.is_empty() {
        return Ok(vec!["nothing to plot for exposure".to_string()]);
    }
    let scaled = |v: &[f64]| -> Vec<(f64, f64)> {
        let max = v.iter().copied().fold(0.0, f64::max);
        v.iter()
            .enumerate()
            .map(|(i, x)| ((i + 1) as f64, if max > 0.0 { x / max } else { 0.0 }))
            .collect()
    };
    let chart = Chart {
        title: format!("importance by position (N = {})", profile.n),
        x_label: "position".into(),
        y_label: "relative importance".into(),
        lines: importances
            .iter()
            .map(|(label, imp)| Series {
                label: label.clone(),
                points: scaled(&imp.importance),
            })
            .collect(),
        ..Chart::default()
    };
    write_svg(&out_dir.join("importance.svg"), &chart)?;
    #[derive(Serialize)]
    struct Point<'a> {
        update_map: &'a str,
        position: f64,
        relative_importance: f64,
    }
    let data: Vec<Point> = chart
        .lines
        .iter()
        .flat_map(|s| {
            s.points.iter().map(move |&(x, y)| Point {
                update_map: &s.label,
                position: x,
                relative_importance: y,
            })
        })
        .collect();
    write_csv(&out_dir.join("importance.csv"), &data)?;
    Ok(Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        assert_eq!(slug("toy:toy-uniform:00ff"), "toy-toy-uniform-00ff");
        assert_eq!(slug("Paul Graham/essays"), "paul-graham-essays");
    }

    #[test]
    fn line_fit_recovers_slope() {
        let (a, b) = line_fit(&[(1.0, 3.0), (2.0, 5.0), (3.0, 7.0)]).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12);
        assert!(line_fit(&[(1.0, 3.0), (1.0, 5.0)]).is_none());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x/y.jsonl");
        write_jsonl(&path, [1.5f64, 0.1 + 0.2, 1e-300]).unwrap();
        let back: Vec<f64> = read_jsonl(&path).unwrap();
        assert_eq!(back, vec![1.5, 0.1 + 0.2, 1e-300]);
    }
}
