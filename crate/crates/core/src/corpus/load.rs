use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Document, Meta};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    Jsonl,
    PlainDir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub path: PathBuf,
    pub format: CorpusFormat,
    /// Filled in by the loader.
    #[serde(default)]
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordError {
    pub dataset: String,
    /// 1-based line number for jsonl, file name for plain-dir.
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct CorpusLoad {
    pub manifest: DatasetManifest,
    pub documents: Vec<Document>,
    pub errors: Vec<RecordError>,
}

#[derive(Deserialize)]
struct JsonlRecord {
    id: Option<serde_json::Value>,
    text: Option<serde_json::Value>,
    #[serde(default)]
    meta: Option<serde_json::Value>,
}

/// Reads every document of a dataset. Bad records are reported and skipped;
/// an empty result is an error.
pub fn load_corpus(manifest: &DatasetManifest) -> Result<CorpusLoad> {
    let (mut documents, errors) = match manifest.format {
        CorpusFormat::Jsonl => load_jsonl(&manifest.name, &manifest.path)?,
        CorpusFormat::PlainDir => load_dir(&manifest.name, &manifest.path)?,
    };
    for e in &errors {
        log::warn!("{}:{}: {}", e.dataset, e.location, e.message);
    }
    if documents.is_empty() {
        return Err(Error::EmptyCorpus(manifest.name.clone()));
    }
    documents.sort_by(|a, b| a.id.cmp(&b.id));
    let mut manifest = manifest.clone();
    manifest.count = documents.len();
    Ok(CorpusLoad {
        manifest,
        documents,
        errors,
    })
}

fn load_jsonl(dataset: &str, path: &Path) -> Result<(Vec<Document>, Vec<RecordError>)> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| RecordError {
            dataset: dataset.to_string(),
            location: format!("line {}", i + 1),
            message,
        };
        let record: JsonlRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                errors.push(fail(format!("malformed JSON: {e}")));
                continue;
            }
        };
        let id = match record.id {
            Some(serde_json::Value::String(s)) => s,
            Some(_) => {
                errors.push(fail("`id` must be a string".into()));
                continue;
            }
            None => {
                errors.push(fail("missing `id`".into()));
                continue;
            }
        };
        let text = match record.text {
            Some(serde_json::Value::String(s)) => s,
            Some(_) => {
                errors.push(fail("`text` must be a string".into()));
                continue;
            }
            None => {
                errors.push(fail("missing `text`".into()));
                continue;
            }
        };
        if text.trim().is_empty() {
            errors.push(fail("`text` is empty".into()));
            continue;
        }
        let meta = match record.meta {
            None | Some(serde_json::Value::Null) => Meta::new(),
            Some(serde_json::Value::Object(map)) => map.into_iter().collect(),
            Some(_) => {
                errors.push(fail("`meta` must be an object".into()));
                continue;
            }
        };
        docs.push(Document::new(id, text, dataset).with_meta(meta));
    }
    reject_duplicates(dataset, &mut docs, &mut errors);
    Ok((docs, errors))
}

fn load_dir(dataset: &str, path: &Path) -> Result<(Vec<Document>, Vec<RecordError>)> {
    let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut errors = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let file_type = entry.file_type().map_err(|e| Error::io(entry.path(), e))?;
        if !file_type.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let fail = |message: String| RecordError {
            dataset: dataset.to_string(),
            location: name.clone(),
            message,
        };
        match fs::read(entry.path()) {
            Ok(bytes) => match String::from_utf8(bytes) {
                Ok(text) if text.trim().is_empty() => errors.push(fail("file is empty".into())),
                Ok(text) => docs.push(Document::new(name.clone(), text, dataset)),
                Err(_) => errors.push(fail("not valid UTF-8".into())),
            },
            Err(e) => errors.push(fail(e.to_string())),
        }
    }
    Ok((docs, errors))
}

fn reject_duplicates(dataset: &str, docs: &mut Vec<Document>, errors: &mut Vec<RecordError>) {
    let mut seen = std::collections::BTreeSet::new();
    docs.retain(|d| {
        if seen.insert(d.id.clone()) {
            true
        } else {
            errors.push(RecordError {
                dataset: dataset.to_string(),
                location: format!("id {}", d.id),
                message: "duplicate id, later record dropped".into(),
            });
            false
        }
    });
}
