//! Run configuration file and backend construction.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    AgentBackend, DefaultTokenizer, HttpChatBackend, ProverEnv, RetryPolicy, Script, ScriptedBackend, TrajectoryBudget,
    DEFAULT_SUMMARY_CAP,
};
use crate::tools::embed::{Embedder, HashEmbedder, HttpEmbedder};
use crate::tools::exec::{ExecLimits, ScriptExecutor};
use crate::tools::index::SearchIndex;
use crate::tools::ToolHub;
use crate::verifier::VerifierConfig;
use crate::workflow::{AgentRoles, WorkflowConfig};

/// Prefix of the environment variables that override endpoints and keys.
pub const ENV_PREFIX: &str = "LEANFLOW";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("no backend configured for role '{0}'")]
    MissingBackend(&'static str),
    #[error("cannot load scripted backend {path}: {message}")]
    Script { path: PathBuf, message: String },
    #[error("cannot load index: {0}")]
    Index(#[from] crate::tools::index::IndexError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Http(HttpChatBackend),
    /// Rule fixture, from a file or inline.
    Scripted {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        script: Option<Script>,
    },
}

impl BackendSpec {
    pub fn build(&self) -> Result<Arc<dyn AgentBackend>, ConfigError> {
        match self {
            BackendSpec::Http(h) => Ok(Arc::new(h.clone())),
            BackendSpec::Scripted { script: Some(s), .. } => Ok(Arc::new(ScriptedBackend::new(s.clone()))),
            BackendSpec::Scripted { path: Some(p), .. } => ScriptedBackend::from_file(p)
                .map(|b| Arc::new(b) as Arc<dyn AgentBackend>)
                .map_err(|e| ConfigError::Script {
                    path: p.clone(),
                    message: e.to_string(),
                }),
            BackendSpec::Scripted { .. } => Err(ConfigError::Invalid("scripted backend needs path or script".into())),
        }
    }

    fn override_http(&mut self, endpoint: Option<String>, key: Option<String>) {
        if let BackendSpec::Http(h) = self {
            if let Some(e) = endpoint {
                h.endpoint = e;
            }
            if key.is_some() {
                h.api_key = key;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendsConfig {
    /// Used for every role without its own entry.
    pub default: Option<BackendSpec>,
    pub nl_prover: Option<BackendSpec>,
    pub sketcher: Option<BackendSpec>,
    pub lean_prover: Option<BackendSpec>,
    pub judge: Option<BackendSpec>,
    pub verifier: VerifierConfig,
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetsConfig {
    pub trajectory: TrajectoryBudget,
    /// Pass@N×M for agent-only runs and curation.
    pub light_inference: (usize, usize),
    pub summary_cap: usize,
    /// Problems run concurrently.
    pub workers: usize,
}

impl Default for BudgetsConfig {
    fn default() -> Self {
        BudgetsConfig {
            trajectory: TrajectoryBudget::default(),
            light_inference: (4, 8),
            summary_cap: DEFAULT_SUMMARY_CAP,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    pub enabled: bool,
    pub python: String,
    pub limits: ExecLimits,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        let exec = ScriptExecutor::default();
        SandboxConfig {
            enabled: true,
            python: exec.python,
            limits: exec.limits,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSpec {
    Hash {
        dimension: usize,
    },
    Http {
        endpoint: String,
        model: String,
        dimension: usize,
        #[serde(default)]
        api_key: Option<String>,
        #[serde(default = "default_embed_timeout")]
        timeout_s: f64,
    },
}

fn default_embed_timeout() -> f64 {
    60.0
}

impl EmbedderSpec {
    pub fn build(&self) -> Arc<dyn Embedder> {
        match self {
            EmbedderSpec::Hash { dimension } => Arc::new(HashEmbedder::new(*dimension)),
            EmbedderSpec::Http {
                endpoint,
                model,
                dimension,
                api_key,
                timeout_s,
            } => Arc::new(HttpEmbedder {
                endpoint: endpoint.clone(),
                model: model.clone(),
                api_key: api_key.clone(),
                dimension: *dimension,
                timeout: Duration::from_secs_f64(*timeout_s),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub path: PathBuf,
    /// Expected library commit; loading fails on mismatch.
    #[serde(default)]
    pub commit_pin: Option<String>,
    /// Defaults to the hash embedder at the index dimension.
    #[serde(default)]
    pub embedder: Option<EmbedderSpec>,
}

impl IndexConfig {
    pub fn load(&self) -> Result<(SearchIndex, Arc<dyn Embedder>), ConfigError> {
        let index = match &self.commit_pin {
            Some(pin) => SearchIndex::load_pinned(&self.path, pin)?,
            None => SearchIndex::load(&self.path)?,
        };
        let embedder = self
            .embedder
            .clone()
            .unwrap_or(EmbedderSpec::Hash {
                dimension: index.dimension,
            })
            .build();
        if embedder.dimension() != index.dimension {
            return Err(ConfigError::Invalid(format!(
                "embedder dimension {} does not match index dimension {}",
                embedder.dimension(),
                index.dimension
            )));
        }
        Ok((index, embedder))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub backends: BackendsConfig,
    pub budgets: BudgetsConfig,
    pub workflow: WorkflowConfig,
    pub sandbox: SandboxConfig,
    pub index: Option<IndexConfig>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    /// Reads a config file; relative paths inside it are taken relative to
    /// the file. Environment overrides are applied.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: Config = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for spec in cfg.role_specs_mut() {
            if let BackendSpec::Scripted { path: Some(p), .. } = spec {
                resolve(base, p);
            }
        }
        if let Some(ix) = cfg.index.as_mut() {
            resolve(base, &mut ix.path);
        }
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    fn role_specs_mut(&mut self) -> impl Iterator<Item = &mut BackendSpec> {
        let b = &mut self.backends;
        [&mut b.default, &mut b.nl_prover, &mut b.sketcher, &mut b.lean_prover, &mut b.judge]
            .into_iter()
            .filter_map(Option::as_mut)
    }

    /// Overrides endpoints and credentials from variables such as
    /// `LEANFLOW_ENDPOINT`, `LEANFLOW_JUDGE_API_KEY` or
    /// `LEANFLOW_EMBED_ENDPOINT`. Role-specific variables win.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        let var = |role: &str, what: &str| {
            let specific = if role.is_empty() {
                None
            } else {
                lookup(&format!("{ENV_PREFIX}_{role}_{what}"))
            };
            specific.or_else(|| lookup(&format!("{ENV_PREFIX}_{what}")))
        };
        let b = &mut self.backends;
        for (role, spec) in [
            ("DEFAULT", &mut b.default),
            ("NL_PROVER", &mut b.nl_prover),
            ("SKETCHER", &mut b.sketcher),
            ("LEAN_PROVER", &mut b.lean_prover),
            ("JUDGE", &mut b.judge),
        ] {
            if let Some(s) = spec.as_mut() {
                s.override_http(var(role, "ENDPOINT"), var(role, "API_KEY"));
            }
        }
        if let Some(EmbedderSpec::Http { endpoint, api_key, .. }) =
            self.index.as_mut().and_then(|i| i.embedder.as_mut())
        {
            if let Some(e) = lookup(&format!("{ENV_PREFIX}_EMBED_ENDPOINT")) {
                *endpoint = e;
            }
            if let Some(k) = lookup(&format!("{ENV_PREFIX}_EMBED_API_KEY")) {
                *api_key = Some(k);
            }
        }
    }

    fn role(&self, spec: &Option<BackendSpec>, name: &'static str) -> Result<Arc<dyn AgentBackend>, ConfigError> {
        spec.as_ref()
            .or(self.backends.default.as_ref())
            .ok_or(ConfigError::MissingBackend(name))?
            .build()
    }

    pub fn roles(&self) -> Result<AgentRoles, ConfigError> {
        let b = &self.backends;
        Ok(AgentRoles {
            nl_prover: self.role(&b.nl_prover, "nl_prover")?,
            sketcher: self.role(&b.sketcher, "sketcher")?,
            lean_prover: self.role(&b.lean_prover, "lean_prover")?,
            judge: self.role(&b.judge, "judge")?,
        })
    }

    pub fn prover(&self) -> Result<Arc<dyn AgentBackend>, ConfigError> {
        self.role(&self.backends.lean_prover, "lean_prover")
    }

    /// Tool hub with the configured index and sandbox.
    pub fn hub(&self) -> Result<ToolHub, ConfigError> {
        let mut hub = ToolHub::default();
        hub.executor = self.sandbox.enabled.then(|| ScriptExecutor {
            python: self.sandbox.python.clone(),
            limits: self.sandbox.limits,
        });
        if let Some(ix) = &self.index {
            let (index, embedder) = ix.load()?;
            hub = hub.with_index(index, embedder);
        }
        Ok(hub)
    }

    pub fn prover_env(&self) -> Result<ProverEnv, ConfigError> {
        Ok(ProverEnv {
            verifier: self.backends.verifier.clone(),
            hub: self.hub()?,
            tokenizer: Arc::new(DefaultTokenizer),
            budget: self.budgets.trajectory,
            retry: self.backends.retry,
            summary_cap: self.budgets.summary_cap,
            preload: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_overrides_endpoints_only() {
        let mut cfg: Config = serde_json::from_str(
            r#"{"backends": {
                 "default": {"kind": "http", "endpoint": "http://a", "model": "m"},
                 "judge": {"kind": "http", "endpoint": "http://j", "model": "m"}},
               "budgets": {"light_inference": [2, 3]}}"#,
        )
        .unwrap();
        cfg.apply_env(|k| match k {
            "LEANFLOW_ENDPOINT" => Some("http://all".into()),
            "LEANFLOW_JUDGE_ENDPOINT" => Some("http://judge".into()),
            "LEANFLOW_API_KEY" => Some("secret".into()),
            _ => None,
        });
        let endpoint = |s: &Option<BackendSpec>| match s {
            Some(BackendSpec::Http(h)) => (h.endpoint.clone(), h.api_key.clone()),
            _ => panic!("http backend expected"),
        };
        assert_eq!(endpoint(&cfg.backends.default), ("http://all".into(), Some("secret".into())));
        assert_eq!(endpoint(&cfg.backends.judge).0, "http://judge");
        assert_eq!(cfg.budgets.light_inference, (2, 3));
        assert_eq!(cfg.budgets.trajectory.max_tool_calls, 28);
    }

    #[test]
    fn missing_backend_is_reported() {
        assert!(matches!(
            Config::default().roles(),
            Err(ConfigError::MissingBackend("nl_prover"))
        ));
    }
}
