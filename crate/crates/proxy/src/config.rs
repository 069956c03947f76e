//! Proxy configuration file (TOML) with environment overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use sparqlcache_core::cache::{DEFAULT_ALPHA, DEFAULT_MAX_ENTRY_BYTES};
use sparqlcache_core::{CachePolicyConfig, Policy};

use crate::client::{EndpointConfig, DEFAULT_ACCEPT, DEFAULT_MAX_RESULT_BYTES};
use crate::service::ServiceConfig;

pub const ENV_LISTEN: &str = "SPARQLCACHE_LISTEN";
pub const ENV_UPSTREAM: &str = "SPARQLCACHE_UPSTREAM";

#[derive(Debug, thiserror::Error)]
pub enum ProxyConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration file: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProxyConfig {
    pub listen: String,
    pub upstream: UpstreamSection,
    pub cache: CacheSection,
    pub suggestion: SuggestionSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpstreamSection {
    pub url: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub accept: String,
    pub max_result_bytes: usize,
    pub connections: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheSection {
    #[serde(deserialize_with = "policy_from_str")]
    pub policy: Policy,
    pub alpha: f64,
    pub capacity: usize,
    /// Defaults to four times `capacity`.
    pub ledger_capacity: Option<usize>,
    pub max_entry_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuggestionSection {
    pub enabled: bool,
    pub model_path: Option<PathBuf>,
    /// Template file the model was trained against; the bundled set if absent.
    pub templates_path: Option<PathBuf>,
    pub k_neighbors: usize,
    pub prefetch_concurrency: usize,
    pub prefetch_queue_depth: usize,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            upstream: UpstreamSection::default(),
            cache: CacheSection::default(),
            suggestion: SuggestionSection::default(),
        }
    }
}

impl Default for UpstreamSection {
    fn default() -> Self {
        Self {
            url: "https://dbpedia.org/sparql".into(),
            timeout_ms: 30_000,
            max_retries: 2,
            accept: DEFAULT_ACCEPT.into(),
            max_result_bytes: DEFAULT_MAX_RESULT_BYTES,
            connections: 8,
        }
    }
}

impl Default for CacheSection {
    fn default() -> Self {
        Self {
            policy: Policy::Mses,
            alpha: DEFAULT_ALPHA,
            capacity: 1000,
            ledger_capacity: None,
            max_entry_bytes: DEFAULT_MAX_ENTRY_BYTES,
        }
    }
}

impl Default for SuggestionSection {
    fn default() -> Self {
        Self {
            enabled: true,
            model_path: None,
            templates_path: None,
            k_neighbors: 10,
            prefetch_concurrency: 2,
            prefetch_queue_depth: 128,
        }
    }
}

fn policy_from_str<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Policy, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

impl ProxyConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ProxyConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProxyConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ProxyConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Applies overrides from `lookup`, normally `std::env::var`.
    pub fn apply_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(v) = lookup(ENV_LISTEN) {
            self.listen = v;
        }
        if let Some(v) = lookup(ENV_UPSTREAM) {
            self.upstream.url = v;
        }
    }

    pub fn apply_env(&mut self) {
        self.apply_overrides(|k| std::env::var(k).ok());
    }

    pub fn endpoint(&self) -> EndpointConfig {
        EndpointConfig {
            url: self.upstream.url.clone(),
            timeout: Duration::from_millis(self.upstream.timeout_ms),
            max_retries: self.upstream.max_retries,
            accept: self.upstream.accept.clone(),
            max_result_bytes: self.upstream.max_result_bytes,
        }
    }

    pub fn cache_policy(&self) -> CachePolicyConfig {
        let mut c = CachePolicyConfig::new(self.cache.capacity)
            .with_alpha(self.cache.alpha)
            .with_policy(self.cache.policy)
            .with_max_entry_bytes(self.cache.max_entry_bytes);
        if let Some(r) = self.cache.ledger_capacity {
            c = c.with_ledger_capacity(r);
        }
        c
    }

    pub fn service(&self) -> ServiceConfig {
        ServiceConfig {
            suggestion_enabled: self.suggestion.enabled,
            k_neighbors: self.suggestion.k_neighbors,
            prefetch_concurrency: self.suggestion.prefetch_concurrency,
            prefetch_queue_depth: self.suggestion.prefetch_queue_depth,
            upstream_connections: self.upstream.connections,
            ..ServiceConfig::new(self.cache_policy())
        }
    }

    pub fn validate(&self) -> Result<(), ProxyConfigError> {
        self.listen
            .parse::<std::net::SocketAddr>()
            .map_err(|e| ProxyConfigError::Invalid(format!("listen address `{}`: {e}", self.listen)))?;
        self.endpoint()
            .validate()
            .map_err(|e| ProxyConfigError::Invalid(e.to_string()))?;
        self.service().validate().map_err(ProxyConfigError::Invalid)
    }
}
