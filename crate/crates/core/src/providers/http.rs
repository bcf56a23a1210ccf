use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{ProviderConfig, ProviderKind};
use crate::rng::{mix64, unit_f64};

const MAX_ATTEMPTS: usize = 5;
const MAX_BODY_BYTES: u64 = 512 * 1024 * 1024;

#[derive(Deserialize)]
struct OpenAiResponse {
    data: Vec<OpenAiItem>,
}

#[derive(Deserialize)]
struct OpenAiItem {
    index: usize,
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct CohereResponse {
    embeddings: Vec<Vec<f64>>,
}

pub(crate) enum Failure {
    /// 429, 5xx or transport trouble.
    Retryable(String),
    Fatal(String),
}

pub(crate) struct HttpClient {
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpClient {
    pub(crate) fn new(api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, api_key }
    }

    /// One request with bounded exponential backoff on retryable failures.
    pub(crate) fn embed_batch(
        &self,
        config: &ProviderConfig,
        batch: usize,
        texts: &[String],
    ) -> Result<Vec<Vec<f64>>, (usize, String)> {
        let mut last = String::new();
        for attempt in 0..MAX_ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(backoff(config.retry_base_ms, batch, attempt));
            }
            match self.send(config, texts) {
                Ok(vectors) => return Ok(vectors),
                Err(Failure::Fatal(message)) => return Err((attempt + 1, message)),
                Err(Failure::Retryable(message)) => {
                    log::warn!("batch {batch} attempt {}: {message}", attempt + 1);
                    last = message;
                }
            }
        }
        Err((MAX_ATTEMPTS, last))
    }

    fn send(&self, config: &ProviderConfig, texts: &[String]) -> Result<Vec<Vec<f64>>, Failure> {
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or_else(|| Failure::Fatal("no endpoint configured".into()))?;
        let body = match config.kind {
            ProviderKind::HttpCohereShape => json!({
                "model": config.model,
                "input": texts,
                "input_type": config.input_type,
            }),
            _ => json!({ "model": config.model, "input": texts }),
        };
        let mut request = self.agent.post(endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send(serde_json::to_vec(&body).map_err(|e| Failure::Fatal(e.to_string()))?)
            .map_err(|e| Failure::Retryable(format!("transport: {e}")))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Failure::Retryable(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            let detail = response.body_mut().read_to_string().unwrap_or_default();
            return Err(Failure::Fatal(format!("HTTP {status}: {}", detail.trim())));
        }
        let raw = response
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_to_vec()
            .map_err(|e| Failure::Retryable(format!("reading body: {e}")))?;
        let vectors = match config.kind {
            ProviderKind::HttpCohereShape => {
                let parsed: CohereResponse = serde_json::from_slice(&raw)
                    .map_err(|e| Failure::Fatal(format!("unexpected response shape: {e}")))?;
                parsed.embeddings
            }
            _ => {
                let mut parsed: OpenAiResponse = serde_json::from_slice(&raw)
                    .map_err(|e| Failure::Fatal(format!("unexpected response shape: {e}")))?;
                parsed.data.sort_by_key(|item| item.index);
                let indices_ok = parsed.data.iter().enumerate().all(|(i, item)| item.index == i);
                if !indices_ok {
                    return Err(Failure::Fatal("response indices are not 0..n".into()));
                }
                parsed.data.into_iter().map(|item| item.embedding).collect()
            }
        };
        if vectors.len() != texts.len() {
            return Err(Failure::Fatal(format!(
                "sent {} texts, received {} embeddings",
                texts.len(),
                vectors.len()
            )));
        }
        Ok(vectors)
    }
}

/// `base * 2^(attempt-1)`, scaled by a jitter factor in `[0.5, 1)`, capped at 30 s.
fn backoff(base_ms: u64, batch: usize, attempt: usize) -> Duration {
    let jitter = 0.5 + 0.5 * unit_f64(mix64(((batch as u64) << 8) ^ attempt as u64));
    let ms = (base_ms as f64 * 2f64.powi(attempt as i32 - 1) * jitter).min(30_000.0);
    Duration::from_micros((ms * 1000.0) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_grows_and_is_bounded() {
        let d1 = backoff(100, 0, 1);
        let d4 = backoff(100, 0, 4);
        assert!(d1 >= Duration::from_millis(50) && d1 < Duration::from_millis(100));
        assert!(d4 >= Duration::from_millis(400) && d4 < Duration::from_millis(800));
        assert!(backoff(100_000, 3, 4) <= Duration::from_secs(30));
    }
}
