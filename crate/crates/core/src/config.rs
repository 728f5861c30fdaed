//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use url::Url;

use crate::dedup::DEFAULT_THRESHOLD;
use crate::harvest::FetchPolicy;
use crate::llmmeta::{DEFAULT_MIN_GROUP, DEFAULT_MIN_LEN};
use crate::plan::{
    build_iso_stage, build_stage1, expand_domains, segment_months, validate_editions, PlanError, PortalEdition,
    QueryPlan, YearMonth,
};
use crate::text;

/// Built-in configuration matching the bundled fixture corpus.
pub const FIXTURE_CONFIG: &str = include_str!("../data/fixture_config.toml");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("edition {0:?} is not of the form lang:REGION")]
    EditionSyntax(String),
    #[error("stage references edition {0:?}, which is not configured")]
    UnknownEdition(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonthsConfig {
    pub start: YearMonth,
    pub end: YearMonth,
    pub editions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsoConfig {
    #[serde(default)]
    pub tokens: Vec<String>,
    /// One token per line; `#` starts a comment.
    pub file: Option<PathBuf>,
    pub editions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainsConfig {
    #[serde(default)]
    pub list: Vec<String>,
    /// One domain per line; `#` starts a comment.
    pub file: Option<PathBuf>,
    pub editions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    pub url: Option<Url>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_llm_timeout")]
    pub timeout_s: u64,
}

fn default_model() -> String {
    "llama3.2".into()
}

fn default_llm_timeout() -> u64 {
    120
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            url: None,
            model: default_model(),
            timeout_s: default_llm_timeout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HallucinationConfig {
    pub min_group: usize,
    pub min_len: usize,
}

impl Default for HallucinationConfig {
    fn default() -> Self {
        HallucinationConfig {
            min_group: DEFAULT_MIN_GROUP,
            min_len: DEFAULT_MIN_LEN,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnrichConfig {
    pub snapshot: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    /// Country treated as national in score distributions.
    pub home_country: Option<String>,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub topic: String,
    /// Extra keyword-filter tokens, off by default.
    #[serde(default)]
    pub alternates: Vec<String>,
    /// Edition ids, `lang:REGION`.
    pub editions: Vec<String>,
    pub expected_edition_count: Option<usize>,
    pub months: Option<MonthsConfig>,
    pub iso: Option<IsoConfig>,
    pub domains: Option<DomainsConfig>,
    #[serde(default)]
    pub politeness: FetchPolicy,
    #[serde(default = "default_threshold")]
    pub dedup_threshold: f64,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub hallucination: HallucinationConfig,
    #[serde(default)]
    pub enrich: EnrichConfig,
    #[serde(default)]
    pub seed: u64,
    /// Directory relative paths resolve against; set on load.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

pub fn parse_edition(id: &str) -> Result<PortalEdition, ConfigError> {
    match id.trim().split_once(':') {
        Some((lang, region)) if !lang.is_empty() && !region.is_empty() => Ok(PortalEdition::new(region, lang)),
        _ => Err(ConfigError::EditionSyntax(id.to_string())),
    }
}

fn read_list(path: &Path) -> Result<Vec<String>, ConfigError> {
    let s = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(s.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let s = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&s)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn fixture() -> Self {
        Self::from_toml_str(FIXTURE_CONFIG).expect("bundled fixture config parses")
    }

    /// sha256 of the canonical TOML serialization (lists from files inlined).
    pub fn digest(&self) -> Result<String, ConfigError> {
        let mut resolved = self.clone();
        if let Some(d) = resolved.domains.as_mut() {
            d.list = self.domain_list()?;
            d.file = None;
        }
        if let Some(i) = resolved.iso.as_mut() {
            i.tokens = self.iso_tokens()?;
            i.file = None;
        }
        let s = toml::to_string(&resolved).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(text::sha256_hex(s))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        self.resolve(p)
    }

    pub fn editions(&self) -> Result<Vec<PortalEdition>, ConfigError> {
        let editions = self
            .editions
            .iter()
            .map(|e| parse_edition(e))
            .collect::<Result<Vec<_>, _>>()?;
        validate_editions(&editions, self.expected_edition_count)?;
        Ok(editions)
    }

    fn pick(&self, ids: &[String], all: &[PortalEdition]) -> Result<Vec<PortalEdition>, ConfigError> {
        ids.iter()
            .map(|id| {
                all.iter()
                    .find(|e| e.edition_id == id.trim())
                    .cloned()
                    .ok_or_else(|| ConfigError::UnknownEdition(id.clone()))
            })
            .collect()
    }

    pub fn domain_list(&self) -> Result<Vec<String>, ConfigError> {
        let Some(d) = &self.domains else {
            return Ok(Vec::new());
        };
        let mut out = d.list.clone();
        if let Some(f) = &d.file {
            out.extend(read_list(&self.resolve(f))?);
        }
        Ok(out)
    }

    pub fn iso_tokens(&self) -> Result<Vec<String>, ConfigError> {
        let Some(i) = &self.iso else {
            return Ok(Vec::new());
        };
        let mut out = i.tokens.clone();
        if let Some(f) = &i.file {
            out.extend(read_list(&self.resolve(f))?);
        }
        Ok(out)
    }

    /// The full staged plan: editions, months, ISO restrictions, domains.
    pub fn build_plan(&self) -> Result<QueryPlan, ConfigError> {
        let all = self.editions()?;
        let mut plan = build_stage1(&all, &self.topic)?;
        if let Some(m) = &self.months {
            for e in self.pick(&m.editions, &all)? {
                plan.extend(segment_months(m.start, m.end, &e, &self.topic)?)?;
            }
        }
        if let Some(i) = &self.iso {
            let editions = self.pick(&i.editions, &all)?;
            plan.extend(build_iso_stage(&editions, &self.iso_tokens()?, &self.topic)?)?;
        }
        if let Some(d) = &self.domains {
            let editions = self.pick(&d.editions, &all)?;
            plan.extend(expand_domains(&self.domain_list()?, &editions, &self.topic))?;
        }
        Ok(plan)
    }
}
