use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ablation::{AblationKind, AblationSpec, DEFAULT_INSERT_FRACTIONS, DEFAULT_REMOVE_FRACTIONS};
use crate::corpus::{DatasetManifest, SyntheticSpec};
use crate::decomposition::{Grouping, PoolingOptions};
use crate::error::{Error, Result};
use crate::providers::ProviderConfig;
use crate::truncation_model::{LengthDistribution, TruncationPolicy, UpdateMap};

/// A provider given either by preset name or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProviderEntry {
    Preset(String),
    Config(ProviderConfig),
}

impl ProviderEntry {
    pub fn resolve(&self) -> Result<ProviderConfig> {
        match self {
            ProviderEntry::Preset(name) => ProviderConfig::preset(name).ok_or_else(|| {
                Error::Config(format!(
                    "unknown provider preset {name:?}; known presets: {}",
                    ProviderConfig::preset_names().join(", ")
                ))
            }),
            ProviderEntry::Config(c) => {
                let mut c = c.clone();
                if c.name.is_empty() {
                    c.name = c.model.clone();
                }
                Ok(c)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSettings {
    #[serde(default = "default_insert")]
    pub insert_fractions: Vec<f64>,
    #[serde(default = "default_remove")]
    pub remove_fractions: Vec<f64>,
}

fn default_insert() -> Vec<f64> {
    DEFAULT_INSERT_FRACTIONS.to_vec()
}

fn default_remove() -> Vec<f64> {
    DEFAULT_REMOVE_FRACTIONS.to_vec()
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            insert_fractions: default_insert(),
            remove_fractions: default_remove(),
        }
    }
}

impl AblationSettings {
    pub fn specs(&self, kind: AblationKind) -> Vec<AblationSpec> {
        match kind {
            AblationKind::Insert => AblationSpec::grid(kind, &self.insert_fractions),
            AblationKind::Remove => AblationSpec::grid(kind, &self.remove_fractions),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSettings {
    #[serde(flatten)]
    pub pooling: PoolingOptions,
    #[serde(default = "default_groupings")]
    pub groupings: Vec<Grouping>,
}

fn default_groupings() -> Vec<Grouping> {
    vec![Grouping::All, Grouping::ByModel, Grouping::ByFamily, Grouping::ByLengthBucket]
}

impl Default for DecompositionSettings {
    fn default() -> Self {
        Self {
            pooling: PoolingOptions::default(),
            groupings: default_groupings(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistributionSpec {
    /// Uniform on `1..=context`.
    Uniform,
    Geometric { p: f64 },
    PointMass { length: usize },
    /// `length,probability` rows.
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureSettings {
    #[serde(default = "default_context")]
    pub context: usize,
    #[serde(default = "default_samples")]
    pub samples: u64,
    #[serde(default = "default_distribution")]
    pub distribution: DistributionSpec,
    #[serde(default = "default_policy")]
    pub policy: TruncationPolicy,
    #[serde(default = "default_update_maps")]
    pub update_maps: Vec<String>,
}

fn default_context() -> usize {
    512
}
fn default_samples() -> u64 {
    1000
}
fn default_distribution() -> DistributionSpec {
    DistributionSpec::Uniform
}
fn default_policy() -> TruncationPolicy {
    TruncationPolicy::TruncateTail
}
fn default_update_maps() -> Vec<String> {
    vec!["identity".into(), "log1p".into(), "saturating(100)".into()]
}

impl Default for ExposureSettings {
    fn default() -> Self {
        Self {
            context: default_context(),
            samples: default_samples(),
            distribution: default_distribution(),
            policy: default_policy(),
            update_maps: default_update_maps(),
        }
    }
}

impl ExposureSettings {
    pub fn distribution(&self) -> Result<LengthDistribution> {
        match &self.distribution {
            DistributionSpec::Uniform => LengthDistribution::uniform(self.context),
            DistributionSpec::Geometric { p } => LengthDistribution::geometric(*p, self.context),
            DistributionSpec::PointMass { length } => LengthDistribution::point_mass(*length),
            DistributionSpec::Csv { path } => LengthDistribution::from_csv(path),
        }
    }

    pub fn update_maps(&self) -> Result<Vec<UpdateMap>> {
        self.update_maps.iter().map(|s| UpdateMap::parse(s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub corpora: Vec<DatasetManifest>,
    #[serde(default)]
    pub synthetic: Vec<SyntheticSpec>,
    pub providers: Vec<ProviderEntry>,
    #[serde(default)]
    pub ablation: AblationSettings,
    #[serde(default)]
    pub decomposition: DecompositionSettings,
    #[serde(default)]
    pub exposure: ExposureSettings,
    /// Filler text for insertions; generated lorem ipsum when absent.
    #[serde(default)]
    pub needle_path: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Caps every provider's concurrency.
    #[serde(default)]
    pub max_concurrency: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("posbias-out")
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub provider: Option<String>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a JSON config; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for c in &mut self.corpora {
            fix(&mut c.path);
        }
        if let Some(p) = &mut self.needle_path {
            fix(p);
        }
        fix(&mut self.output_dir);
        if let Some(p) = &mut self.cache_dir {
            fix(p);
        }
        if let DistributionSpec::Csv { path } = &mut self.exposure.distribution {
            fix(path);
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(out) = &o.output_dir {
            self.output_dir = out.clone();
        }
        if let Some(cache) = &o.cache_dir {
            self.cache_dir = Some(cache.clone());
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(name) = &o.provider {
            let mut kept = Vec::new();
            for entry in &self.providers {
                let c = entry.resolve()?;
                if c.display_name() == name || c.model == *name {
                    kept.push(entry.clone());
                }
            }
            if kept.is_empty() {
                // A preset name not listed in the file is still accepted.
                let entry = ProviderEntry::Preset(name.clone());
                entry.resolve()?;
                kept.push(entry);
            }
            self.providers = kept;
        }
        Ok(())
    }

    /// Provider configurations with the global concurrency cap applied.
    pub fn provider_configs(&self) -> Result<Vec<ProviderConfig>> {
        self.providers
            .iter()
            .map(|e| {
                let mut c = e.resolve()?;
                if let Some(cap) = self.max_concurrency {
                    c.max_concurrency = c.max_concurrency.min(cap.max(1));
                }
                c.validate()?;
                Ok(c)
            })
            .collect()
    }

    /// Static checks: providers present, fractions valid, referenced files
    /// reachable.
    pub fn validate(&self) -> Result<()> {
        if self.providers.is_empty() {
            return Err(Error::Config("at least one provider is required".into()));
        }
        self.provider_configs()?;
        for kind in [AblationKind::Insert, AblationKind::Remove] {
            for spec in self.ablation.specs(kind) {
                spec.validate()?;
            }
        }
        let must_exist = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} {} does not exist", p.display())))
            }
        };
        for c in &self.corpora {
            must_exist(&c.path, &format!("corpus {}", c.name))?;
        }
        if let Some(p) = &self.needle_path {
            must_exist(p, "needle file")?;
        }
        if let DistributionSpec::Csv { path } = &self.exposure.distribution {
            must_exist(path, "length distribution")?;
        }
        self.exposure.update_maps()?;
        Ok(())
    }
}
