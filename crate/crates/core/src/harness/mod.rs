//! Orchestration: runs a stage over every configured provider and writes
//! raw records, summaries, plots and run metadata.

mod aggregate;
mod config;
mod emit;
pub mod plot;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use aggregate::{
    aggregate, aggregate_ablation, aggregate_regression, begin_end_gap, relative_decrease, Moments, RawRecord,
    SummaryRow, SummaryTable,
};
pub use config::{
    AblationSettings, DecompositionSettings, DistributionSpec, ExposureSettings, Overrides, ProviderEntry, RunConfig,
};
pub use emit::{emit_ablation_plots, emit_coefficient_plots, emit_exposure_plot};

use crate::ablation::{run_ablation_grid, AblationKind, AblationResult, NeedleSource, FAILURE_THRESHOLD};
use crate::corpus::{load_corpus, synthetic_corpus, truncate_to_context, Document, RecordError};
use crate::decomposition::{
    decompose_all, position_importance_stats, shuffle_control, DocumentFailure, FirstSentenceReport, Grouping,
    PositionStats, RegressionResult,
};
use crate::error::{Error, Result};
use crate::providers::{EmbeddingCache, Provider};
use crate::truncation_model::{exposure_profile, importance_profile};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Ingest,
    Embed,
    /// Both kinds when `None`.
    Ablate(Option<AblationKind>),
    Decompose,
    ShuffleControl,
    Exposure,
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Embed => "embed",
            Command::Ablate(_) => "ablate",
            Command::Decompose => "decompose",
            Command::ShuffleControl => "shuffle-control",
            Command::Exposure => "exposure",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Success,
    /// More than the tolerated share of units failed.
    PartialFailure,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Success => 0,
            RunStatus::PartialFailure => 2,
        }
    }
}

/// Labels that travel with every report so numbers are read correctly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub r_squared: String,
    pub intercept: bool,
    pub coefficient_normalization: String,
    pub position_mode: String,
    pub truncation: String,
    pub token_estimate: String,
    pub removal_rounding: String,
    pub stddev: String,
    pub relative_decrease: String,
}

impl Conventions {
    pub fn for_config(config: &RunConfig) -> Self {
        Self {
            r_squared: "uncentered: 1 - |residual|^2 / |response|^2".into(),
            intercept: false,
            coefficient_normalization: "unit L2 norm per document".into(),
            position_mode: serde_json::to_value(config.decomposition.pooling.position_mode)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            truncation: "keep leading whole sentences within the context; word-level when the first sentence alone overflows"
                .into(),
            token_estimate: "whitespace-separated words".into(),
            removal_rounding: "ceil(fraction * sentences)".into(),
            stddev: "population".into(),
            relative_decrease: "(end - position) / end".into(),
        }
    }
}

/// Published figures for comparison. They come from large proprietary and
/// open models on full corpora and are not expected to match toy runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub quantity: String,
    pub family: String,
    pub condition: String,
    pub value: f64,
}

pub fn reference_rows() -> Vec<ReferenceRow> {
    let row = |quantity: &str, family: &str, condition: &str, value: f64| ReferenceRow {
        quantity: quantity.into(),
        family: family.into(),
        condition: condition.into(),
        value,
    };
    vec![
        row("mean_cosine", "APE", "insert beginning 20%", 0.885),
        row("mean_cosine", "APE", "insert end 20%", 0.963),
        row("rel_decrease", "APE", "insert beginning vs end 20%", 0.08),
        row("mean_cosine", "RoPE", "insert beginning 20%", 0.819),
        row("mean_cosine", "RoPE", "insert end 20%", 0.968),
        row("rel_decrease", "RoPE", "insert beginning vs end 20%", 0.154),
        row("mean_cosine", "ALiBi", "insert beginning 20%", 0.981),
        row("mean_cosine", "ALiBi", "insert end 20%", 0.999),
        row("rel_decrease", "ALiBi", "insert beginning vs end 20%", 0.018),
        row("rel_decrease_median", "all", "remove beginning vs end 50%", 0.106),
        row("mean_r_squared", "all", "sentence reconstruction", 0.876),
        row("pearson_r", "APE", "coefficient vs position", -0.127657),
        row("p_value", "APE", "coefficient vs position", 2.233374e-103),
        row("pearson_r", "RoPE", "coefficient vs position", -0.115861),
        row("p_value", "RoPE", "coefficient vs position", 2.259581e-85),
        row("pearson_r", "ALiBi", "coefficient vs position", -0.07615),
        row("p_value", "ALiBi", "coefficient vs position", 9.205763e-38),
    ]
}

#[derive(Debug, Clone, Serialize)]
struct RunMetadata<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    stage: &'a str,
    started_unix: u64,
    finished_unix: u64,
    config_sha256: String,
    seed: u64,
    providers: Vec<String>,
    conventions: Conventions,
    notes: &'a [String],
    config: &'a RunConfig,
}

/// One failed unit of work, as written to `failures.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub stage: String,
    pub model_id: Option<String>,
    pub dataset: String,
    pub doc_id: String,
    pub condition: Option<String>,
    pub message: String,
}

impl FailureRecord {
    fn from_record(e: &RecordError) -> Self {
        Self {
            stage: "ingest".into(),
            model_id: None,
            dataset: e.dataset.clone(),
            doc_id: e.location.clone(),
            condition: None,
            message: e.message.clone(),
        }
    }

    fn from_document(stage: &str, f: &DocumentFailure) -> Self {
        Self {
            stage: stage.into(),
            model_id: Some(f.model_id.clone()),
            dataset: f.dataset.clone(),
            doc_id: f.doc_id.clone(),
            condition: None,
            message: f.message.clone(),
        }
    }
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn config_hash(config: &RunConfig) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

/// Validated configuration with its providers constructed. Building a
/// session is where missing credentials surface.
pub struct Session {
    pub config: RunConfig,
    pub providers: Vec<Provider>,
}

impl Session {
    pub fn open(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let cache = match &config.cache_dir {
            Some(dir) => Some(Arc::new(EmbeddingCache::open(dir)?)),
            None => None,
        };
        let providers = config
            .provider_configs()?
            .into_iter()
            .map(|c| Provider::new(c, cache.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, providers })
    }

    /// Corpus documents followed by synthetic ones, plus per-record errors.
    pub fn documents(&self) -> Result<(Vec<Document>, Vec<RecordError>)> {
        let mut docs = Vec::new();
        let mut errors = Vec::new();
        for manifest in &self.config.corpora {
            let load = load_corpus(manifest)?;
            docs.extend(load.documents);
            errors.extend(load.errors);
        }
        for spec in &self.config.synthetic {
            docs.extend(synthetic_corpus(spec));
        }
        if docs.is_empty() {
            return Err(Error::EmptyCorpus("configuration lists no corpora or synthetic documents".into()));
        }
        Ok((docs, errors))
    }

    pub fn needle(&self) -> Result<NeedleSource> {
        if let Some(path) = &self.config.needle_path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            return Ok(NeedleSource::new(text));
        }
        let bundled = NeedleSource::bundled();
        let need = self.providers.iter().map(|p| p.config().context_tokens).max().unwrap_or(0);
        Ok(if need <= bundled.token_estimate {
            bundled
        } else {
            NeedleSource::lorem(need)
        })
    }
}

/// Loads nothing from disk beyond what the config references; writes under
/// `config.output_dir/<stage>/`.
pub fn run(config: RunConfig, command: &Command) -> Result<RunStatus> {
    let session = Session::open(config)?;
    session.run(command)
}

impl Session {
    pub fn run(&self, command: &Command) -> Result<RunStatus> {
        match command {
            Command::Ingest => self.ingest(),
            Command::Embed => self.embed(),
            Command::Ablate(Some(kind)) => self.ablate(*kind),
            Command::Ablate(None) => {
                let a = self.ablate(AblationKind::Insert)?;
                let b = self.ablate(AblationKind::Remove)?;
                Ok(if a == RunStatus::Success && b == RunStatus::Success {
                    RunStatus::Success
                } else {
                    RunStatus::PartialFailure
                })
            }
            Command::Decompose => self.decompose(),
            Command::ShuffleControl => self.shuffle(),
            Command::Exposure => self.exposure(),
            Command::Report => self.report(),
        }
    }

    fn stage_dir(&self, stage: &str) -> Result<PathBuf> {
        let dir = self.config.output_dir.join(stage);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn write_metadata(&self, dir: &Path, command: &str, stage: &str, started: u64, notes: &[String]) -> Result<()> {
        let meta = RunMetadata {
            tool: "posbias",
            version: env!("CARGO_PKG_VERSION"),
            command,
            stage,
            started_unix: started,
            finished_unix: now_unix(),
            config_sha256: config_hash(&self.config)?,
            seed: self.config.seed,
            providers: self.providers.iter().map(|p| p.model_id().to_string()).collect(),
            conventions: Conventions::for_config(&self.config),
            notes,
            config: &self.config,
        };
        emit::write_json(&dir.join("run_metadata.json"), &meta)
    }

    fn status(failed: usize, total: usize) -> RunStatus {
        if total > 0 && failed as f64 > FAILURE_THRESHOLD * total as f64 {
            log::error!("{failed} of {total} units failed");
            RunStatus::PartialFailure
        } else {
            RunStatus::Success
        }
    }

    fn ingest(&self) -> Result<RunStatus> {
        let started = now_unix();
        let dir = self.stage_dir("ingest")?;
        let (docs, errors) = self.documents()?;
        #[derive(Serialize)]
        struct Segmented<'a> {
            doc_id: &'a str,
            dataset: &'a str,
            token_estimate: usize,
            n_sentences: usize,
            sentences: &'a [crate::corpus::SentenceSpan],
        }
        emit::write_jsonl(
            &dir.join("documents.jsonl"),
            docs.iter().map(|d| Segmented {
                doc_id: &d.id,
                dataset: &d.dataset,
                token_estimate: d.token_estimate,
                n_sentences: d.sentences.len(),
                sentences: &d.sentences,
            }),
        )?;
        let mut per_dataset: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for d in &docs {
            per_dataset.entry(&d.dataset).or_default().0 += 1;
        }
        for e in &errors {
            per_dataset.entry(&e.dataset).or_default().1 += 1;
        }
        let summary: Vec<serde_json::Value> = per_dataset
            .iter()
            .map(|(name, (n, bad))| serde_json::json!({"dataset": name, "documents": n, "rejected": bad}))
            .collect();
        emit::write_json(&dir.join("summary.json"), &summary)?;
        emit::write_jsonl(&dir.join("failures.jsonl"), errors.iter().map(FailureRecord::from_record))?;
        self.write_metadata(&dir, "ingest", "ingest", started, &[])?;
        Ok(Self::status(errors.len(), docs.len() + errors.len()))
    }

    fn embed(&self) -> Result<RunStatus> {
        let started = now_unix();
        let dir = self.stage_dir("embed")?;
        let (docs, _) = self.documents()?;
        let mut failures = Vec::new();
        let mut report = Vec::new();
        for provider in &self.providers {
            let before = provider.upstream_requests();
            let mut texts = 0;
            for doc in &docs {
                let truncated = truncate_to_context(doc, provider.config().context_tokens);
                let mut batch: Vec<&str> = vec![&truncated.text];
                batch.extend(truncated.sentence_texts());
                texts += batch.len();
                if let Err(e) = provider.embed(&batch) {
                    failures.push(FailureRecord {
                        stage: "embed".into(),
                        model_id: Some(provider.model_id().to_string()),
                        dataset: doc.dataset.clone(),
                        doc_id: doc.id.clone(),
                        condition: None,
                        message: e.to_string(),
                    });
                }
            }
            report.push(serde_json::json!({
                "model_id": provider.model_id(),
                "documents": docs.len(),
                "texts": texts,
                "upstream_requests": provider.upstream_requests() - before,
            }));
        }
        emit::write_json(&dir.join("embed_report.json"), &report)?;
        emit::write_jsonl(&dir.join("failures.jsonl"), failures.iter())?;
        let mut notes = Vec::new();
        if self.config.cache_dir.is_none() {
            notes.push("no cache directory configured; embeddings were computed but not kept".to_string());
        }
        self.write_metadata(&dir, "embed", "embed", started, &notes)?;
        Ok(Self::status(failures.len(), docs.len() * self.providers.len()))
    }

    fn ablate(&self, kind: AblationKind) -> Result<RunStatus> {
        let started = now_unix();
        let stage = format!("ablate-{}", kind.as_str());
        let dir = self.stage_dir(&stage)?;
        let (docs, _) = self.documents()?;
        let needle = self.needle()?;
        let specs = self.config.ablation.specs(kind);
        let mut results: Vec<AblationResult> = Vec::new();
        let mut failures = Vec::new();
        let mut cells = 0;
        for provider in &self.providers {
            let outcome = run_ablation_grid(&docs, provider, &specs, &needle);
            cells += outcome.cells;
            failures.extend(outcome.failures.iter().map(|f| FailureRecord {
                stage: stage.clone(),
                model_id: Some(f.model_id.clone()),
                dataset: f.dataset.clone(),
                doc_id: f.doc_id.clone(),
                condition: f
                    .spec
                    .map(|s| format!("{} {} {}", s.kind.as_str(), s.position.as_str(), s.fraction)),
                message: f.message.clone(),
            }));
            results.extend(outcome.results);
        }
        emit::write_jsonl(&dir.join("raw.jsonl"), results.iter())?;
        emit::write_jsonl(&dir.join("failures.jsonl"), failures.iter())?;
        let mut notes = Vec::new();
        if results.is_empty() {
            notes.push("no successful cells; summary skipped".to_string());
        } else {
            let table = aggregate_ablation(&results)?;
            emit::write_summary(&dir, &table, &Conventions::for_config(&self.config))?;
            notes.extend(emit_ablation_plots(&table, &dir.join("plots"))?);
        }
        self.write_metadata(&dir, "ablate", &stage, started, &notes)?;
        Ok(Self::status(cells - results.len(), cells))
    }

    fn regression_outputs(&self, dir: &Path, results: &[RegressionResult]) -> Result<Vec<String>> {
        emit::write_jsonl(&dir.join("raw.jsonl"), results.iter())?;
        let mut notes = Vec::new();
        if results.is_empty() {
            notes.push("no successful documents; summary skipped".to_string());
            return Ok(notes);
        }
        let table = aggregate_regression(results)?;
        emit::write_summary(dir, &table, &Conventions::for_config(&self.config))?;
        let stats = self.position_stats(results, &mut notes);
        emit::write_position_stats(&dir.join("position_stats.csv"), &stats)?;
        let opts = &self.config.decomposition.pooling;
        notes.extend(emit_coefficient_plots(results, opts, &dir.join("plots"))?);
        Ok(notes)
    }

    /// Stats for every configured grouping scheme. `all` and length buckets
    /// are computed per model; the model and family schemes span models.
    fn position_stats(&self, results: &[RegressionResult], notes: &mut Vec<String>) -> Vec<(String, String, PositionStats)> {
        let opts = &self.config.decomposition.pooling;
        let mut by_model: BTreeMap<&str, Vec<RegressionResult>> = BTreeMap::new();
        for r in results {
            by_model.entry(&r.model_id).or_default().push(r.clone());
        }
        let mut rows = Vec::new();
        for grouping in &self.config.decomposition.groupings {
            let scheme = serde_json::to_value(grouping)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            let parts: Vec<(String, &[RegressionResult])> = match grouping {
                Grouping::ByModel | Grouping::ByFamily => vec![("*".to_string(), results)],
                Grouping::All | Grouping::ByLengthBucket => {
                    by_model.iter().map(|(m, rs)| (m.to_string(), rs.as_slice())).collect()
                }
            };
            for (model, part) in parts {
                match position_importance_stats(part, *grouping, opts) {
                    Ok(stats) => rows.extend(stats.into_iter().map(|s| (model.clone(), scheme.clone(), s))),
                    Err(e) => notes.push(format!("{scheme} statistics for {model} skipped: {e}")),
                }
            }
        }
        rows
    }

    fn decompose(&self) -> Result<RunStatus> {
        let started = now_unix();
        let dir = self.stage_dir("decompose")?;
        let (docs, _) = self.documents()?;
        let mut results = Vec::new();
        let mut failures = Vec::new();
        for provider in &self.providers {
            let (r, f) = decompose_all(&docs, provider);
            results.extend(r);
            failures.extend(f.iter().map(|f| FailureRecord::from_document("decompose", f)));
        }
        emit::write_jsonl(&dir.join("failures.jsonl"), failures.iter())?;
        let notes = self.regression_outputs(&dir, &results)?;
        self.write_metadata(&dir, "decompose", "decompose", started, &notes)?;
        Ok(Self::status(failures.len(), docs.len() * self.providers.len()))
    }

    fn shuffle(&self) -> Result<RunStatus> {
        let started = now_unix();
        let dir = self.stage_dir("shuffle-control")?;
        let (docs, _) = self.documents()?;
        let opts = &self.config.decomposition.pooling;
        let mut results = Vec::new();
        let mut failures = Vec::new();
        let mut reports: Vec<(String, FirstSentenceReport)> = Vec::new();
        for provider in &self.providers {
            let control = shuffle_control(&docs, provider, self.config.seed, opts);
            failures.extend(control.failures.iter().map(|f| FailureRecord::from_document("shuffle-control", f)));
            reports.push((provider.model_id().to_string(), control.first_sentence));
            results.extend(control.results);
        }
        emit::write_jsonl(&dir.join("failures.jsonl"), failures.iter())?;
        let first: Vec<serde_json::Value> = reports
            .iter()
            .map(|(model, r)| serde_json::json!({"model_id": model, "seed": self.config.seed, "report": r}))
            .collect();
        emit::write_json(&dir.join("first_sentence.json"), &first)?;
        let notes = self.regression_outputs(&dir, &results)?;
        self.write_metadata(&dir, "shuffle-control", "shuffle-control", started, &notes)?;
        Ok(Self::status(failures.len(), docs.len() * self.providers.len()))
    }

    fn exposure(&self) -> Result<RunStatus> {
        let started = now_unix();
        let dir = self.stage_dir("exposure")?;
        let settings = &self.config.exposure;
        let dist = settings.distribution()?;
        let profile = exposure_profile(&dist, settings.context, settings.samples, settings.policy)?;
        let maps = settings.update_maps()?;
        let mut importances = Vec::with_capacity(maps.len());
        for u in &maps {
            importances.push((u.label(), importance_profile(&profile, u)?));
        }
        emit::write_exposure(&dir, &profile, &importances)?;
        let notes = emit_exposure_plot(&profile, &importances, &dir.join("plots"))?;
        self.write_metadata(&dir, "exposure", "exposure", started, &notes)?;
        Ok(RunStatus::Success)
    }

    /// Rebuilds summaries and plots from the raw files of earlier stages.
    fn report(&self) -> Result<RunStatus> {
        let started = now_unix();
        let dir = self.stage_dir("report")?;
        let mut notes = Vec::new();
        let mut found = false;
        for stage in ["ablate-insert", "ablate-remove"] {
            let raw = self.config.output_dir.join(stage).join("raw.jsonl");
            if !raw.exists() {
                continue;
            }
            let results: Vec<AblationResult> = emit::read_jsonl(&raw)?;
            if results.is_empty() {
                continue;
            }
            found = true;
            let out = dir.join(stage);
            let table = aggregate_ablation(&results)?;
            emit::write_summary(&out, &table, &Conventions::for_config(&self.config))?;
            notes.extend(emit_ablation_plots(&table, &out.join("plots"))?);
        }
        for stage in ["decompose", "shuffle-control"] {
            let raw = self.config.output_dir.join(stage).join("raw.jsonl");
            if !raw.exists() {
                continue;
            }
            let results: Vec<RegressionResult> = emit::read_jsonl(&raw)?;
            if results.is_empty() {
                continue;
            }
            found = true;
            let out = dir.join(stage);
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let table = aggregate_regression(&results)?;
            emit::write_summary(&out, &table, &Conventions::for_config(&self.config))?;
            let stats = self.position_stats(&results, &mut notes);
            emit::write_position_stats(&out.join("position_stats.csv"), &stats)?;
            notes.extend(emit_coefficient_plots(&results, &self.config.decomposition.pooling, &out.join("plots"))?);
        }
        if !found {
            return Err(Error::InvalidInput(format!(
                "no raw results under {}; run ablate, decompose or shuffle-control first",
                self.config.output_dir.display()
            )));
        }
        emit::write_reference(&dir.join("reference.csv"), &reference_rows())?;
        self.write_metadata(&dir, "report", "report", started, &notes)?;
        Ok(RunStatus::Success)
    }
}
