//! Embedding providers behind one `embed` contract.
//!
//! A [`Provider`] resolves its configuration once (API keys are read at
//! construction, so a missing key fails before any work starts), then serves
//! `embed` calls: inputs are re-truncated to the context window, duplicates
//! collapsed, the cache consulted, and misses fetched in batches of at most
//! `max_batch` with at most `max_concurrency` requests in flight across all
//! callers. Output order always matches input order.

mod cache;
mod http;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

pub use cache::{CacheKey, EmbeddingCache};

use crate::corpus::{estimate_tokens, truncate_to_context, Document};
use crate::error::{Error, Result};
use crate::numerics::l2_normalize;
use crate::rng::fnv1a64;
use crate::toy_encoder::{toy_embed, Pooling, Positional, ToyConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub model_id: String,
    pub dim: usize,
    pub values: Vec<f64>,
    pub normalized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    HttpOpenaiShape,
    HttpCohereShape,
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// Selector for `--provider`; defaults to `model`.
    #[serde(default)]
    pub name: String,
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    pub context_tokens: usize,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_true")]
    pub normalize_output: bool,
    #[serde(default)]
    pub toy: Option<ToyConfig>,
    /// Positional-encoding family label (APE, RoPE, ALiBi, ...).
    #[serde(default)]
    pub family: Option<String>,
    #[serde(default = "default_input_type")]
    pub input_type: String,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
}

fn default_max_batch() -> usize {
    64
}
fn default_max_concurrency() -> usize {
    4
}
fn default_true() -> bool {
    true
}
fn default_input_type() -> String {
    "search_document".into()
}
fn default_retry_base_ms() -> u64 {
    500
}

impl ProviderConfig {
    pub fn toy(name: impl Into<String>, toy: ToyConfig, context_tokens: usize) -> Self {
        let name = name.into();
        Self {
            name: name.clone(),
            kind: ProviderKind::Toy,
            endpoint: None,
            model: name,
            api_key_env: None,
            context_tokens,
            max_batch: default_max_batch(),
            max_concurrency: default_max_concurrency(),
            normalize_output: true,
            family: Some(toy.family().to_string()),
            toy: Some(toy),
            input_type: default_input_type(),
            retry_base_ms: default_retry_base_ms(),
        }
    }

    pub fn openai(name: impl Into<String>, endpoint: impl Into<String>, model: impl Into<String>, context_tokens: usize) -> Self {
        Self {
            name: name.into(),
            kind: ProviderKind::HttpOpenaiShape,
            endpoint: Some(endpoint.into()),
            model: model.into(),
            api_key_env: None,
            context_tokens,
            max_batch: default_max_batch(),
            max_concurrency: default_max_concurrency(),
            normalize_output: true,
            toy: None,
            family: None,
            input_type: default_input_type(),
            retry_base_ms: default_retry_base_ms(),
        }
    }

    /// Built-in configurations. Open-weight models expect a local
    /// OpenAI-shape server; point `endpoint` elsewhere as needed.
    pub fn preset(name: &str) -> Option<Self> {
        const LOCAL: &str = "http://localhost:8080/v1/embeddings";
        let http = |model: &str, context: usize, family: &str| {
            let mut c = Self::openai(name, LOCAL, model, context);
            c.family = Some(family.to_string());
            c
        };
        let toy = |positional, pooling| Self::toy(name, ToyConfig::new(positional, pooling), 512);
        Some(match name {
            "embed-english-v3.0" => {
                let mut c = http("embed-english-v3.0", 512, "unknown");
                c.kind = ProviderKind::HttpCohereShape;
                c.endpoint = Some("https://api.cohere.com/v1/embed".into());
                c.api_key_env = Some("COHERE_API_KEY".into());
                c.max_batch = 96;
                c
            }
            "bge-m3" => http("BAAI/bge-m3", 8192, "APE"),
            "e5-large-v2" => http("intfloat/e5-large-v2", 512, "APE"),
            "nomic-embed-text-v1.5" => http("nomic-ai/nomic-embed-text-v1.5", 8192, "RoPE"),
            "e5-rope-base" => http("dwzhu/e5rope-base", 512, "RoPE"),
            "jina-embeddings-v2-base" => http("jinaai/jina-embeddings-v2-base-en", 8192, "ALiBi"),
            "mosaic-bert-base-1024" => http("mosaicml/mosaic-bert-base-seqlen-1024", 1024, "ALiBi"),
            "toy-uniform" => toy(Positional::None, Pooling::Uniform),
            "toy-decay" => toy(Positional::None, Pooling::ExpDecay { lambda: 0.05 }),
            "toy-ape" => toy(Positional::ApeSinusoidal, Pooling::AlibiAttention { slope: 0.0 }),
            "toy-rope" => toy(Positional::Rope, Pooling::Uniform),
            "toy-alibi" => toy(Positional::None, Pooling::AlibiAttention { slope: 0.05 }),
            _ => return None,
        })
    }

    pub fn preset_names() -> &'static [&'static str] {
        &[
            "embed-english-v3.0",
            "bge-m3",
            "e5-large-v2",
            "nomic-embed-text-v1.5",
            "e5-rope-base",
            "jina-embeddings-v2-base",
            "mosaic-bert-base-1024",
            "toy-uniform",
            "toy-decay",
            "toy-ape",
            "toy-rope",
            "toy-alibi",
        ]
    }

    pub fn display_name(&self) -> &str {
        if self.name.is_empty() {
            &self.model
        } else {
            &self.name
        }
    }

    /// Identity used for cache keys and result records. Toy ids embed a hash
    /// of the full encoder configuration.
    pub fn model_id(&self) -> String {
        let base = match (&self.kind, &self.toy) {
            (ProviderKind::Toy, Some(toy)) => {
                let json = serde_json::to_string(toy).unwrap_or_default();
                format!("toy:{}:{:016x}", self.model, fnv1a64(json.as_bytes()))
            }
            _ => self.model.clone(),
        };
        if self.normalize_output {
            base
        } else {
            format!("{base}#raw")
        }
    }

    pub fn family_label(&self) -> String {
        match (&self.family, &self.toy) {
            (Some(f), _) => f.clone(),
            (None, Some(toy)) => toy.family().to_string(),
            (None, None) => "unknown".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_tokens == 0 {
            return Err(Error::Config(format!("{}: context_tokens must be at least 1", self.display_name())));
        }
        if self.max_batch == 0 || self.max_concurrency == 0 {
            return Err(Error::Config(format!(
                "{}: max_batch and max_concurrency must be at least 1",
                self.display_name()
            )));
        }
        match self.kind {
            ProviderKind::Toy => self
                .toy
                .as_ref()
                .ok_or_else(|| Error::Config(format!("{}: toy provider needs a `toy` section", self.display_name())))?
                .validate(),
            _ if self.endpoint.is_none() => Err(Error::Config(format!(
                "{}: http provider needs an endpoint",
                self.display_name()
            ))),
            _ => Ok(()),
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut free = self.free.lock().expect("semaphore poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore poisoned");
        }
        *free -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

pub struct Provider {
    config: ProviderConfig,
    model_id: String,
    cache: Option<Arc<EmbeddingCache>>,
    http: Option<http::HttpClient>,
    inflight: Semaphore,
    requests: AtomicUsize,
}

impl std::fmt::Debug for Provider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Provider").field("model_id", &self.model_id).finish()
    }
}

impl Provider {
    pub fn new(config: ProviderConfig, cache: Option<Arc<EmbeddingCache>>) -> Result<Self> {
        config.validate()?;
        let http = match config.kind {
            ProviderKind::Toy => None,
            _ => {
                let api_key = match &config.api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| Error::MissingApiKey(var.clone()))?),
                    None => None,
                };
                Some(http::HttpClient::new(api_key))
            }
        };
        Ok(Self {
            model_id: config.model_id(),
            inflight: Semaphore::new(config.max_concurrency),
            config,
            cache,
            http,
            requests: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// Upstream batch requests issued so far (cache hits excluded).
    pub fn upstream_requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn embed<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<EmbeddingVector>> {
        let mut prepared = Vec::with_capacity(texts.len());
        for (i, text) in texts.iter().enumerate() {
            let text = text.as_ref();
            if text.trim().is_empty() {
                return Err(Error::InvalidInput(format!("text {i} is empty")));
            }
            prepared.push(self.fit_context(text));
        }

        let mut unique: Vec<String> = Vec::new();
        let mut slot_of: HashMap<&str, usize> = HashMap::new();
        let slots: Vec<usize> = prepared
            .iter()
            .map(|t| {
                *slot_of.entry(t.as_str()).or_insert_with(|| {
                    unique.push(t.clone());
                    unique.len() - 1
                })
            })
            .collect();

        let mut found: Vec<Option<EmbeddingVector>> = vec![None; unique.len()];
        let mut misses = Vec::new();
        for (slot, text) in unique.iter().enumerate() {
            let hit = match &self.cache {
                Some(cache) => cache.get(&CacheKey::new(&self.model_id, text))?,
                None => None,
            };
            match hit {
                Some(v) => found[slot] = Some(v),
                None => misses.push(slot),
            }
        }

        let batches: Vec<&[usize]> = misses.chunks(self.config.max_batch).collect();
        let fetched = self.run_batches(&unique, &batches)?;
        let mut dim = found.iter().flatten().map(|v| v.dim).next();
        for (batch, vectors) in batches.iter().zip(fetched) {
            for (&slot, v) in batch.iter().zip(vectors) {
                match dim {
                    Some(d) if d != v.dim => return Err(Error::DimensionMismatch { expected: d, got: v.dim }),
                    _ => dim = Some(v.dim),
                }
                if let Some(cache) = &self.cache {
                    cache.put(&CacheKey::new(&self.model_id, &unique[slot]), &v)?;
                }
                found[slot] = Some(v);
            }
        }

        Ok(slots
            .into_iter()
            .map(|slot| found[slot].clone().expect("every slot filled"))
            .collect())
    }

    fn fit_context(&self, text: &str) -> String {
        if estimate_tokens(text) <= self.config.context_tokens {
            return text.to_string();
        }
        truncate_to_context(&Document::new("", text, ""), self.config.context_tokens).text
    }

    fn run_batches(&self, unique: &[String], batches: &[&[usize]]) -> Result<Vec<Vec<EmbeddingVector>>> {
        if batches.is_empty() {
            return Ok(Vec::new());
        }
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<Vec<EmbeddingVector>>>>> =
            Mutex::new((0..batches.len()).map(|_| None).collect());
        let workers = self.config.max_concurrency.min(batches.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let b = next.fetch_add(1, Ordering::SeqCst);
                    if b >= batches.len() {
                        break;
                    }
                    let texts: Vec<String> = batches[b].iter().map(|&s| unique[s].clone()).collect();
                    let outcome = self.fetch(b, &texts);
                    results.lock().expect("results poisoned")[b] = Some(outcome);
                });
            }
        });
        results
            .into_inner()
            .expect("results poisoned")
            .into_iter()
            .map(|r| r.expect("every batch ran"))
            .collect()
    }

    fn fetch(&self, batch: usize, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let _permit = self.inflight.acquire();
        self.requests.fetch_add(1, Ordering::SeqCst);
        let raw: Vec<Vec<f64>> = match (&self.config.kind, &self.http) {
            (ProviderKind::Toy, _) => {
                let toy = self.config.toy.as_ref().expect("validated");
                texts
                    .iter()
                    .map(|t| toy_embed(t, toy).map(|v| v.values))
                    .collect::<Result<_>>()?
            }
            (_, Some(client)) => client
                .embed_batch(&self.config, batch, texts)
                .map_err(|(attempts, message)| Error::Upstream {
                    batch,
                    attempts,
                    message,
                })?,
            (_, None) => unreachable!("http provider without client"),
        };

        let dim = raw.first().map(Vec::len).unwrap_or(0);
        raw.into_iter()
            .map(|values| {
                if values.len() != dim || dim == 0 {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: values.len(),
                    });
                }
                if values.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("embedding"));
                }
                let (values, normalized) = if self.config.normalize_output {
                    (l2_normalize(&values)?, true)
                } else {
                    (values, false)
                };
                Ok(EmbeddingVector {
                    model_id: self.model_id.clone(),
                    dim,
                    values,
                    normalized,
                })
            })
            .collect()
    }
}
