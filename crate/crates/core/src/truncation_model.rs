//! Expected per-position token exposure during training and the importance
//! profile it induces.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total probability mass.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthDistribution {
    /// `(length, probability)`, lengths strictly increasing.
    support: Vec<(usize, f64)>,
}

impl LengthDistribution {
    pub fn new(mut support: Vec<(usize, f64)>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidInput("length distribution has empty support".into()));
        }
        support.sort_by_key(|&(len, _)| len);
        for w in support.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidInput(format!("length {} listed twice", w[0].0)));
            }
        }
        for &(len, p) in &support {
            if len == 0 {
                return Err(Error::InvalidInput("lengths must be at least 1".into()));
            }
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidInput(format!("probability {p} for length {len}")));
            }
        }
        let mass: f64 = support.iter().map(|&(_, p)| p).sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidInput(format!("probabilities sum to {mass}")));
        }
        Ok(Self { support })
    }

    pub fn support(&self) -> &[(usize, f64)] {
        &self.support
    }

    pub fn max_length(&self) -> usize {
        self.support.last().map_or(0, |&(len, _)| len)
    }

    /// Uniform on `1..=n`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("uniform distribution needs n >= 1".into()));
        }
        Self::new((1..=n).map(|len| (len, 1.0 / n as f64)).collect())
    }

    pub fn point_mass(length: usize) -> Result<Self> {
        Self::new(vec![(length, 1.0)])
    }

    /// `P(L = k) = p (1 - p)^(k - 1)` for `k < n`; the tail mass beyond `n`
    /// is placed on `n`.
    pub fn geometric(p: f64, n: usize) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) || n == 0 {
            return Err(Error::InvalidInput(format!("geometric({p}) on 1..={n}")));
        }
        let mut support = Vec::with_capacity(n);
        let mut survive = 1.0;
        for k in 1..n {
            support.push((k, survive * p));
            survive *= 1.0 - p;
        }
        support.push((n, survive));
        support.retain(|&(_, q)| q > 0.0);
        Self::new(support)
    }

    /// Parses `length,probability` rows. A header row and blank lines are
    /// skipped.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut support = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',').map(str::trim);
            let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(Error::InvalidInput(format!("line {}: expected two fields", i + 1)));
            };
            match (a.parse::<usize>(), b.parse::<f64>()) {
                (Ok(len), Ok(p)) => support.push((len, p)),
                _ if i == 0 => continue,
                _ => return Err(Error::InvalidInput(format!("line {}: cannot parse {line:?}", i + 1))),
            }
        }
        Self::new(support)
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }

    /// `P(L > i)` for `i = 0..n`, relative to the total mass so that
    /// `P(L > 0)` is exactly 1.
    fn survival(&self, n: usize) -> Vec<f64> {
        let mass: f64 = self.support.iter().rev().map(|&(_, p)| p).sum();
        let mut out = vec![0.0; n];
        let mut tail = 0.0;
        let mut idx = self.support.len();
        for i in (0..n).rev() {
            while idx > 0 && self.support[idx - 1].0 > i {
                idx -= 1;
                tail += self.support[idx].1;
            }
            out[i] = (tail / mass).min(1.0);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruncationPolicy {
    /// Keep the head, drop what does not fit at the end.
    TruncateTail,
    /// Keep the tail, right-aligned in the context.
    TruncateHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureProfile {
    #[serde(rename = "N")]
    pub n: usize,
    pub t: Vec<f64>,
    pub samples: u64,
}

impl ExposureProfile {
    /// Profile rescaled so its maximum is 1, for use as a pooling profile.
    pub fn relative(&self) -> Vec<f64> {
        let max = self.t.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            self.t.iter().map(|x| x / max).collect()
        } else {
            self.t.clone()
        }
    }
}

pub fn exposure_profile(
    dist: &LengthDistribution,
    n: usize,
    samples: u64,
    policy: TruncationPolicy,
) -> Result<ExposureProfile> {
    if n == 0 || samples == 0 {
        return Err(Error::InvalidInput(format!("exposure needs N >= 1 and samples >= 1 (got {n}, {samples})")));
    }
    if dist.max_length() > n {
        return Err(Error::InvalidInput(format!(
            "distribution reaches length {} beyond N = {n}",
            dist.max_length()
        )));
    }
    let scale = samples as f64;
    let mut t: Vec<f64> = dist.survival(n).into_iter().map(|s| scale * s).collect();
    if policy == TruncationPolicy::TruncateHead {
        t.reverse();
    }
    Ok(ExposureProfile { n, t, samples })
}

/// Monotone non-decreasing map with `u(0) = 0`.
#[derive(Clone)]
pub enum UpdateMap {
    Identity,
    Log1p,
    /// `t / (t + c)`.
    Saturating(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for UpdateMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => f.write_str("Identity"),
            Self::Log1p => f.write_str("Log1p"),
            Self::Saturating(c) => write!(f, "Saturating({c})"),
            Self::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl UpdateMap {
    pub fn apply(&self, t: f64) -> f64 {
        match self {
            Self::Identity => t,
            Self::Log1p => t.ln_1p(),
            Self::Saturating(c) => t / (t + c),
            Self::Custom(f) => f(t),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Identity => "identity".into(),
            Self::Log1p => "log1p".into(),
            Self::Saturating(c) => format!("saturating({c})"),
            Self::Custom(_) => "custom".into(),
        }
    }

    /// Parses `identity`, `log1p` or `saturating(c)`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "identity" => return Ok(Self::Identity),
            "log1p" => return Ok(Self::Log1p),
            _ => {}
        }
        if let Some(c) = s.strip_prefix("saturating(").and_then(|r| r.strip_suffix(')')) {
            let c: f64 = c
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad saturating constant in {s:?}")))?;
            if c > 0.0 && c.is_finite() {
                return Ok(Self::Saturating(c));
            }
        }
        Err(Error::InvalidInput(format!("unknown update map {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Monotonicity {
    NonIncreasing,
    NonDecreasing,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceProfile {
    pub importance: Vec<f64>,
    pub verdict: Monotonicity,
}

const PROBES: usize = 257;

fn check_update_map(u: &UpdateMap, max_t: f64) -> Result<()> {
    let zero = u.apply(0.0);
    if zero != 0.0 {
        return Err(Error::InvalidInput(format!("update map {} has u(0) = {zero}", u.label())));
    }
    let mut prev = zero;
    for k in 1..=PROBES {
        let t = max_t * k as f64 / PROBES as f64;
        let v = u.apply(t);
        if !v.is_finite() {
            return Err(Error::NonFinite("update map value"));
        }
        if v < prev {
            return Err(Error::NonMonotoneUpdate { at: t });
        }
        prev = v;
    }
    Ok(())
}

fn verdict(v: &[f64]) -> Monotonicity {
    if v.windows(2).all(|w| w[0] >= w[1]) {
        Monotonicity::NonIncreasing
    } else if v.windows(2).all(|w| w[0] <= w[1]) {
        Monotonicity::NonDecreasing
    } else {
        Monotonicity::Neither
    }
}

pub fn importance_profile(exposure: &ExposureProfile, u: &UpdateMap) -> Result<ImportanceProfile> {
    let max_t = exposure.t.iter().copied().fold(0.0, f64::max);
    check_update_map(u, max_t)?;
    // The probes only sample u; the actual exposure values are checked too.
    let mut sorted = exposure.t.clone();
    sorted.sort_by(f64::total_cmp);
    let probe: Vec<f64> = sorted.iter().map(|&t| u.apply(t)).collect();
    if let Some(w) = probe.windows(2).position(|w| w[0] > w[1]) {
        return Err(Error::NonMonotoneUpdate { at: sorted[w + 1] });
    }
    let importance: Vec<f64> = exposure.t.iter().map(|&t| u.apply(t)).collect();
    Ok(ImportanceProfile {
        verdict: verdict(&importance),
        importance,
    })
}
