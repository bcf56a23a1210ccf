//! Python bindings for `posbias`.

use std::path::PathBuf;

use posbias::ablation::{self, AblationKind};
use posbias::corpus::{self, Document};
use posbias::harness::{self, Command, RunConfig};
use posbias::numerics;
use posbias::providers::{Provider, ProviderConfig};
use posbias::truncation_model::{self as tm, LengthDistribution, TruncationPolicy, UpdateMap};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: posbias::Error) -> PyErr {
    match e {
        posbias::Error::Io { .. } | posbias::Error::Upstream { .. } | posbias::Error::PartialFailure { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Clone)]
struct OlsFit {
    coefficients: Vec<f64>,
    r_squared: f64,
    mae: f64,
    sse: f64,
    condition: f64,
    ridge_used: bool,
}

#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Clone)]
struct Correlation {
    r: f64,
    p_two_sided: f64,
    n: usize,
}

#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Clone)]
struct Exposure {
    t: Vec<f64>,
    importance: Vec<f64>,
    verdict: String,
}

#[pyfunction]
fn segment_sentences(text: &str) -> Vec<String> {
    corpus::segment_sentences(text).iter().map(|s| s.text(text).to_string()).collect()
}

#[pyfunction]
fn estimate_tokens(text: &str) -> usize {
    corpus::estimate_tokens(text)
}

#[pyfunction]
fn truncate(text: &str, context_tokens: usize) -> String {
    corpus::truncate_to_context(&Document::new("doc", text, "py"), context_tokens).text
}

#[pyfunction]
fn shuffle_sentences(text: &str, seed: u64) -> String {
    corpus::shuffle_sentences(&Document::new("doc", text, "py"), seed).text
}

#[pyfunction]
fn removal_count(n: usize, fraction: f64) -> usize {
    ablation::removal_count(n, fraction)
}

#[pyfunction]
fn ols(columns: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<OlsFit> {
    let f = numerics::ols_solve(&columns, &y).map_err(err)?;
    Ok(OlsFit {
        coefficients: f.coefficients,
        r_squared: f.r_squared,
        mae: f.mae,
        sse: f.sse,
        condition: f.condition,
        ridge_used: f.ridge_used,
    })
}

#[pyfunction]
fn pearson(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<Correlation> {
    let s = numerics::pearson(&xs, &ys).map_err(err)?;
    Ok(Correlation { r: s.r, p_two_sided: s.p_two_sided, n: s.n })
}

#[pyfunction]
fn student_t_p(t: f64, df: f64) -> f64 {
    numerics::student_t_two_sided_p(t, df)
}

#[pyfunction]
fn cosine(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    numerics::cosine_similarity(&a, &b).map_err(err)
}

/// Embeds texts with a named provider preset (e.g. "toy-decay").
#[pyfunction]
fn embed(texts: Vec<String>, preset: &str) -> PyResult<Vec<Vec<f64>>> {
    let config = ProviderConfig::preset(preset).ok_or_else(|| PyValueError::new_err(format!("unknown preset {preset:?}")))?;
    let provider = Provider::new(config, None).map_err(err)?;
    Ok(provider.embed(&texts).map_err(err)?.into_iter().map(|v| v.values).collect())
}

/// `distribution` is a list of `(length, probability)` pairs.
#[pyfunction]
#[pyo3(signature = (distribution, n, samples=1000, update="identity", truncate_head=false))]
fn exposure(distribution: Vec<(usize, f64)>, n: usize, samples: u64, update: &str, truncate_head: bool) -> PyResult<Exposure> {
    let dist = LengthDistribution::new(distribution).map_err(err)?;
    let policy = if truncate_head { TruncationPolicy::TruncateHead } else { TruncationPolicy::TruncateTail };
    let profile = tm::exposure_profile(&dist, n, samples, policy).map_err(err)?;
    let imp = tm::importance_profile(&profile, &UpdateMap::parse(update).map_err(err)?).map_err(err)?;
    Ok(Exposure {
        t: profile.t,
        importance: imp.importance,
        verdict: format!("{:?}", imp.verdict),
    })
}

/// Runs one pipeline stage from a JSON config file and returns the exit
/// status (0 success, 2 too many failed units).
#[pyfunction]
#[pyo3(signature = (config, command, kind=None, output_dir=None))]
fn run(py: Python<'_>, config: PathBuf, command: &str, kind: Option<&str>, output_dir: Option<PathBuf>) -> PyResult<i32> {
    let mut cfg = RunConfig::load(&config).map_err(err)?;
    if let Some(out) = output_dir {
        cfg.output_dir = out;
    }
    let kind = match kind {
        None => None,
        Some("insert") => Some(AblationKind::Insert),
        Some("remove") => Some(AblationKind::Remove),
        Some(other) => return Err(PyValueError::new_err(format!("unknown ablation kind {other:?}"))),
    };
    let command = match command {
        "ingest" => Command::Ingest,
        "embed" => Command::Embed,
        "ablate" => Command::Ablate(kind),
        "decompose" => Command::Decompose,
        "shuffle-control" => Command::ShuffleControl,
        "exposure" => Command::Exposure,
        "report" => Command::Report,
        other => return Err(PyValueError::new_err(format!("unknown command {other:?}"))),
    };
    let status = py.detach(|| harness::run(cfg, &command)).map_err(err)?;
    Ok(status.exit_code())
}

#[pymodule]
fn posbias_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<OlsFit>()?;
    m.add_class::<Correlation>()?;
    m.add_class::<Exposure>()?;
    m.add_function(wrap_pyfunction!(segment_sentences, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_tokens, m)?)?;
    m.add_function(wrap_pyfunction!(truncate, m)?)?;
    m.add_function(wrap_pyfunction!(shuffle_sentences, m)?)?;
    m.add_function(wrap_pyfunction!(removal_count, m)?)?;
    m.add_function(wrap_pyfunction!(ols, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(student_t_p, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_function(wrap_pyfunction!(exposure, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
