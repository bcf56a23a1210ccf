//! Deterministic reference encoder with a positional bias that is known by
//! construction.
//!
//! A text is split on whitespace; each lowercased token maps to a fixed
//! pseudo-random unit vector. Positional information is either absent,
//! added as a sinusoidal table, or applied as a rotary transform, and the
//! token vectors are pooled by a weighted mean whose weights may decay with
//! position or come from single-query attention with a linear distance
//! penalty.
//!
//! Token vectors: `h = fnv1a64(lowercase(token))`, key `k = h ^ mix64(seed)`,
//! component `c` is `SplitMix64::at(k, c)` mapped to `[-1, 1]`, and the
//! result is L2-normalized.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, l2_normalize};
use crate::providers::EmbeddingVector;
use crate::rng::{fnv1a64, mix64, unit_f64, SplitMix64};

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;
const QUERY_KEY: &str = "\u{0}alibi-query";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positional {
    None,
    ApeSinusoidal,
    Rope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pooling {
    Uniform,
    LinearDecay { alpha: f64 },
    ExpDecay { lambda: f64 },
    Exposure { profile: Vec<f64> },
    /// Softmax attention from a fixed query, with an ALiBi distance penalty
    /// of `slope` from the first position. Slope 0 is plain attention pooling.
    AlibiAttention { slope: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_positional")]
    pub positional: Positional,
    #[serde(default = "default_pooling")]
    pub pooling: Pooling,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
}

fn default_dim() -> usize {
    DEFAULT_DIM
}
fn default_positional() -> Positional {
    Positional::None
}
fn default_pooling() -> Pooling {
    Pooling::Uniform
}
fn default_rope_base() -> f64 {
    DEFAULT_ROPE_BASE
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            seed: 0,
            positional: Positional::None,
            pooling: Pooling::Uniform,
            rope_base: DEFAULT_ROPE_BASE,
        }
    }
}

impl ToyConfig {
    pub fn new(positional: Positional, pooling: Pooling) -> Self {
        Self {
            positional,
            pooling,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || !self.dim.is_multiple_of(2) {
            return Err(Error::Config(format!("toy dim must be even and positive, got {}", self.dim)));
        }
        if !(self.rope_base.is_finite() && self.rope_base > 0.0) {
            return Err(Error::Config("rope_base must be positive".into()));
        }
        let non_negative = |v: f64, what: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be a finite non-negative number")))
            }
        };
        match &self.pooling {
            Pooling::Uniform => Ok(()),
            Pooling::LinearDecay { alpha } => non_negative(*alpha, "alpha"),
            Pooling::ExpDecay { lambda } => non_negative(*lambda, "lambda"),
            Pooling::AlibiAttention { slope } => non_negative(*slope, "slope"),
            Pooling::Exposure { profile } => {
                profile.iter().try_for_each(|p| non_negative(*p, "exposure profile entry"))
            }
        }
    }

    /// Positional-encoding family label used when grouping results.
    pub fn family(&self) -> &'static str {
        match (self.positional, &self.pooling) {
            (Positional::ApeSinusoidal, _) => "APE",
            (Positional::Rope, _) => "RoPE",
            (Positional::None, Pooling::AlibiAttention { .. }) => "ALiBi",
            (Positional::None, _) => "none",
        }
    }
}

/// Rotation angle for dimension pair `i` at position `pos`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationParams {
    pub pos: usize,
    pub i: usize,
    pub d: usize,
    pub theta: f64,
}

impl RotationParams {
    pub fn new(pos: usize, i: usize, d: usize, base: f64) -> Self {
        let theta = pos as f64 / base.powf(2.0 * i as f64 / d as f64);
        Self { pos, i, d, theta }
    }
}

/// Linear coefficient of the distance penalty `m(|i-j|) = -slope * |i-j|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlibiSlope(pub f64);

pub fn token_vector(token: &str, cfg: &ToyConfig) -> Vec<f64> {
    let key = fnv1a64(token.to_lowercase().as_bytes()) ^ mix64(cfg.seed);
    unit_random_vector(key, cfg.dim)
}

fn unit_random_vector(key: u64, dim: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..dim as u64)
        .map(|c| 2.0 * unit_f64(SplitMix64::at(key, c)) - 1.0)
        .collect();
    // A zero draw in every component has probability 2^-(53 dim).
    l2_normalize(&raw).expect("random vector is nonzero")
}

pub fn rope_rotate(x: &[f64], pos: usize, cfg: &ToyConfig) -> Result<Vec<f64>> {
    if !x.len().is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("rotary input must have even length, got {}", x.len())));
    }
    let d = x.len();
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let (sin, cos) = RotationParams::new(pos, i, d, cfg.rope_base).theta.sin_cos();
        let (a, b) = (x[2 * i], x[2 * i + 1]);
        out[2 * i] = a * cos - b * sin;
        out[2 * i + 1] = a * sin + b * cos;
    }
    Ok(out)
}

/// Sinusoidal table row: `[2i] = sin(theta)`, `[2i+1] = cos(theta)`.
pub fn ape_vector(pos: usize, cfg: &ToyConfig) -> Vec<f64> {
    let d = cfg.dim;
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let (sin, cos) = RotationParams::new(pos, i, d, cfg.rope_base).theta.sin_cos();
        out[2 * i] = sin;
        out[2 * i + 1] = cos;
    }
    out
}

pub fn alibi_bias(i: usize, j: usize, slope: AlibiSlope) -> f64 {
    -slope.0 * i.abs_diff(j) as f64
}

/// Position weights for the mean-family pooling schemes, summing to one.
pub fn pooling_weights(n: usize, cfg: &ToyConfig) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidInput("cannot pool zero tokens".into()));
    }
    let raw: Vec<f64> = match &cfg.pooling {
        Pooling::Uniform => return Ok(vec![1.0 / n as f64; n]),
        Pooling::LinearDecay { alpha } => (0..n)
            .map(|i| (1.0 - alpha * i as f64 / n as f64).max(0.0))
            .collect(),
        Pooling::ExpDecay { lambda } => (0..n).map(|i| (-lambda * i as f64).exp()).collect(),
        Pooling::Exposure { profile } => (0..n).map(|i| profile.get(i).copied().unwrap_or(0.0)).collect(),
        Pooling::AlibiAttention { .. } => {
            return Err(Error::InvalidInput(
                "attention pooling weights depend on content; use toy_embed".into(),
            ))
        }
    };
    let total: f64 = raw.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::ZeroWeights { n });
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

pub fn toy_embed(text: &str, cfg: &ToyConfig) -> Result<EmbeddingVector> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(Error::InvalidInput("toy encoder needs at least one token".into()));
    }
    let mut vocab: HashMap<String, Vec<f64>> = HashMap::new();
    let lowered: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    for t in &lowered {
        vocab.entry(t.clone()).or_insert_with(|| token_vector(t, cfg));
    }

    let positioned = |i: usize| -> Result<Vec<f64>> {
        let base = &vocab[&lowered[i]];
        match cfg.positional {
            Positional::None => Ok(base.clone()),
            Positional::ApeSinusoidal => {
                let scale = (2.0 / cfg.dim as f64).sqrt();
                Ok(base
                    .iter()
                    .zip(ape_vector(i, cfg))
                    .map(|(x, p)| x + scale * p)
                    .collect())
            }
            Positional::Rope => rope_rotate(base, i, cfg),
        }
    };

    let n = tokens.len();
    let weights = match &cfg.pooling {
        Pooling::AlibiAttention { slope } => {
            let query = unit_random_vector(fnv1a64(QUERY_KEY.as_bytes()) ^ mix64(cfg.seed), cfg.dim);
            let scale = (cfg.dim as f64).sqrt();
            let mut scores = Vec::with_capacity(n);
            for i in 0..n {
                scores.push(dot(&query, &positioned(i)?) / scale + alibi_bias(0, i, AlibiSlope(*slope)));
            }
            softmax(&scores)
        }
        _ => pooling_weights(n, cfg)?,
    };

    let mut pooled = vec![0.0; cfg.dim];
    if cfg.positional == Positional::None {
        // Summing per distinct token in key order makes the result
        // independent of token order whenever the weights are.
        let mut per_token: BTreeMap<&str, f64> = BTreeMap::new();
        for (t, w) in lowered.iter().zip(&weights) {
            *per_token.entry(t.as_str()).or_insert(0.0) += w;
        }
        for (t, w) in per_token {
            for (p, x) in pooled.iter_mut().zip(&vocab[t]) {
                *p += w * x;
            }
        }
    } else {
        for (i, w) in weights.iter().enumerate() {
            for (p, x) in pooled.iter_mut().zip(positioned(i)?) {
                *p += w * x;
            }
        }
    }

    let values = l2_normalize(&pooled)?;
    Ok(EmbeddingVector {
        model_id: "toy".into(),
        dim: cfg.dim,
        values,
        normalized: true,
    })
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}
