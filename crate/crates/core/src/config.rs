//! One configuration file for every subcommand.
//!
//! Values come from the built-in defaults, then the TOML file, then
//! environment variables named `PROMPTALIGN_<SECTION>__<KEY>` (nested keys
//! joined by `__`, e.g. `PROMPTALIGN_GRPO__KL_COEF=0.01` or
//! `PROMPTALIGN_BACKENDS__JUDGE__MODEL=judge-large`). Override values are
//! read as TOML literals when they parse as one and as strings otherwise.
//!
//! Secrets are never stored here: endpoint sections name the environment
//! variable holding the token (`auth_env`).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curation::{FilterRules, MockTeacher, SimulateConfig, Teacher};
use crate::evaluator::{Judge, OracleJudge, RemoteJudge};
use crate::grpo::GrpoConfig;
use crate::orchestrator::{
    BackendSet, ChatClient, ChatPolicy, ClientError, EndpointConfig, HttpImage, MockT2i, PolicySource, RunConfig,
    T2iBackend,
};

pub const ENV_PREFIX: &str = "PROMPTALIGN_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: {message}")]
    Syntax { origin: String, message: String },
    #[error("{origin}: `{field}`: {message}")]
    Invalid {
        origin: String,
        field: String,
        message: String,
    },
    #[error("environment override {var}: {message}")]
    Override { var: String, message: String },
    #[error(transparent)]
    Endpoint(#[from] ClientError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub work_dir: PathBuf,
    pub cache_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            work_dir: PathBuf::from("work"),
            cache_dir: PathBuf::from(".cache/promptalign"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoggingConfig {
    /// error, warn, info, debug or trace.
    pub level: String,
}

impl Default for LoggingConfig {
    fn default() -> Self {
        Self { level: "info".into() }
    }
}

/// Model endpoints. An absent section means the local mock is used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendsConfig {
    pub policy: Option<EndpointConfig>,
    pub t2i: Option<EndpointConfig>,
    pub judge: Option<EndpointConfig>,
    pub teacher: Option<EndpointConfig>,
}

impl BackendsConfig {
    fn client(cfg: &EndpointConfig) -> Result<Arc<ChatClient>, ConfigError> {
        Ok(Arc::new(ChatClient::new(cfg.clone())?))
    }

    /// Backends for an alignment run. `hermetic` ignores every endpoint.
    pub fn backend_set(&self, hermetic: bool, greedy: bool) -> Result<BackendSet, ConfigError> {
        let mut set = BackendSet::hermetic();
        if let PolicySource::Toy { greedy: g, .. } = &mut set.policy {
            *g = greedy;
        }
        if hermetic {
            return Ok(set);
        }
        if let Some(p) = &self.policy {
            set.policy = PolicySource::Remote(Arc::new(ChatPolicy::new(Self::client(p)?)));
        }
        set.t2i = self.t2i_backend()?;
        set.judge = self.judge_backend()?;
        Ok(set)
    }

    pub fn t2i_backend(&self) -> Result<Arc<dyn T2iBackend>, ConfigError> {
        Ok(match &self.t2i {
            Some(c) => Arc::new(HttpImage::new(Self::client(c)?)),
            None => Arc::new(MockT2i),
        })
    }

    pub fn judge_backend(&self) -> Result<Arc<dyn Judge>, ConfigError> {
        Ok(match &self.judge {
            Some(c) => Arc::new(RemoteJudge::new(ChatClient::new(c.clone())?)),
            None => Arc::new(OracleJudge),
        })
    }

    pub fn teacher(&self) -> Result<Arc<dyn Teacher>, ConfigError> {
        Ok(match &self.teacher {
            Some(c) => Arc::new(ChatClient::new(c.clone())?),
            None => Arc::new(MockTeacher),
        })
    }

    pub fn policy_is_remote(&self) -> bool {
        self.policy.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurationConfig {
    /// Candidates requested from the teacher per prompt.
    pub candidates_per_prompt: usize,
    /// Re-requests after an unparseable teacher reply.
    pub parse_retries: u32,
    /// Directory overriding the shipped prompt templates.
    pub templates_dir: Option<PathBuf>,
    /// Selection task store shared with the annotation server.
    pub task_dir: PathBuf,
    pub simulate: SimulateConfig,
    pub filter: FilterRules,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            candidates_per_prompt: 3,
            parse_retries: 2,
            templates_dir: None,
            task_dir: PathBuf::from("work/tasks"),
            simulate: SimulateConfig::default(),
            filter: FilterRules::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
    /// How long a fetched task stays reserved for its annotator.
    pub lease_ms: i64,
    /// Built annotation UI, served at `/` when present.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            lease_ms: crate::curation::store::DEFAULT_LEASE_MS,
            static_dir: None,
        }
    }
}

/// Settings for the in-process softmax policy used by hermetic runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    /// Replaces `grpo.learning_rate`, which is sized for LLM fine-tuning.
    pub learning_rate: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            learning_rate: GrpoConfig::toy().learning_rate,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    pub paths: PathsConfig,
    pub logging: LoggingConfig,
    #[serde(alias = "endpoints")]
    pub backends: BackendsConfig,
    pub grpo: GrpoConfig,
    pub toy: ToyConfig,
    pub curation: CurationConfig,
    pub server: ServerConfig,
    pub run: RunConfig,
}

fn deserialize(table: toml::Table, origin: &str) -> Result<GlobalConfig, ConfigError> {
    let value = toml::Value::Table(table);
    serde_path_to_error::deserialize(value).map_err(|e| ConfigError::Invalid {
        origin: origin.to_string(),
        field: e.path().to_string(),
        message: e.into_inner().to_string(),
    })
}

fn literal(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `PROMPTALIGN_*` variables to `table`. Returns the names applied.
fn apply_overrides(
    table: &mut toml::Table,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<Vec<String>, ConfigError> {
    let mut applied = Vec::new();
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (var, raw) in vars {
        let path: Vec<String> = var[ENV_PREFIX.len()..].split("__").map(str::to_lowercase).collect();
        if path.iter().any(String::is_empty) {
            return Err(ConfigError::Override {
                var,
                message: "expected PROMPTALIGN_<SECTION>__<KEY>".into(),
            });
        }
        let (leaf, parents) = path.split_last().expect("non-empty path");
        let mut cursor = &mut *table;
        for key in parents {
            let next = cursor
                .entry(key.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cursor = match next {
                toml::Value::Table(t) => t,
                _ => {
                    return Err(ConfigError::Override {
                        var,
                        message: format!("`{key}` is not a section"),
                    })
                }
            };
        }
        cursor.insert(leaf.clone(), literal(&raw));
        applied.push(var);
    }
    Ok(applied)
}

impl GlobalConfig {
    /// Defaults, then the file if given, then overrides from `vars`.
    pub fn load_with(
        path: Option<&Path>,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let (mut table, origin) = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                let table = toml::from_str::<toml::Table>(&text).map_err(|e| ConfigError::Syntax {
                    origin: p.display().to_string(),
                    message: e.to_string(),
                })?;
                (table, p.display().to_string())
            }
            None => (toml::Table::new(), "defaults".to_string()),
        };
        let applied = apply_overrides(&mut table, vars)?;
        let origin = if applied.is_empty() {
            origin
        } else {
            format!("{origin} with {}", applied.join(", "))
        };
        let cfg = deserialize(table, &origin)?;
        cfg.validate().map_err(|(field, message)| ConfigError::Invalid {
            origin,
            field,
            message,
        })?;
        Ok(cfg)
    }

    /// [`GlobalConfig::load_with`] over the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        Self::load_with(path, std::env::vars())
    }

    pub fn validate(&self) -> Result<(), (String, String)> {
        self.grpo.validate().map_err(|e| ("grpo".to_string(), e.to_string()))?;
        let endpoints = [
            ("backends.policy", &self.backends.policy),
            ("backends.t2i", &self.backends.t2i),
            ("backends.judge", &self.backends.judge),
            ("backends.teacher", &self.backends.teacher),
        ];
        for (name, ep) in endpoints {
            if let Some(ep) = ep {
                ep.validate().map_err(|e| (name.to_string(), e.to_string()))?;
            }
        }
        if self.curation.candidates_per_prompt < 2 {
            return Err(("curation.candidates_per_prompt".into(), "must be at least 2".into()));
        }
        if !["error", "warn", "info", "debug", "trace", "off"].contains(&self.logging.level.to_lowercase().as_str()) {
            return Err(("logging.level".into(), format!("unknown level `{}`", self.logging.level)));
        }
        if self.server.lease_ms <= 0 {
            return Err(("server.lease_ms".into(), "must be positive".into()));
        }
        Ok(())
    }

    /// GRPO settings for a toy-policy run.
    pub fn toy_grpo(&self) -> GrpoConfig {
        GrpoConfig {
            learning_rate: self.toy.learning_rate,
            ..self.grpo.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// The defaults as a commented TOML document.
    pub fn defaults_document() -> String {
        let mut out = String::from(
            "# Defaults for every setting. Any key may be overridden with an\n\
             # environment variable PROMPTALIGN_<SECTION>__<KEY>.\n\
             # Endpoint sections ([backends.policy], [backends.t2i], [backends.judge],\n\
             # [backends.teacher]) are absent by default, which selects the local mocks.\n\
             # They take base_url, model, auth_env (the NAME of the variable holding\n\
             # the token), timeout_secs, max_retries, backoff_initial_ms,\n\
             # backoff_multiplier and max_in_flight.\n\n",
        );
        out.push_str(&Self::default().to_toml());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let text = GlobalConfig::defaults_document();
        let parsed: GlobalConfig = toml::from_str(&text).unwrap();
        assert_eq!(parsed, GlobalConfig::default());
    }

    #[test]
    fn overrides_create_sections_and_parse_literals() {
        let cfg = GlobalConfig::load_with(
            None,
            vars(&[
                ("PROMPTALIGN_GRPO__KL_COEF", "0.01"),
                ("PROMPTALIGN_BACKENDS__JUDGE__BASE_URL", "http://judge:9000/v1"),
                ("PROMPTALIGN_BACKENDS__JUDGE__MODEL", "vlm"),
                ("PROMPTALIGN_RUN__GREEDY", "true"),
                ("UNRELATED", "x"),
            ]),
        )
        .unwrap();
        assert_eq!(cfg.grpo.kl_coef, 0.01);
        assert!(cfg.run.greedy);
        assert_eq!(cfg.backends.judge.unwrap().base_url, "http://judge:9000/v1");
    }

    #[test]
    fn unknown_override_key_names_the_path() {
        let err = GlobalConfig::load_with(None, vars(&[("PROMPTALIGN_GRPO__KL", "1")])).unwrap_err();
        assert!(err.to_string().contains("PROMPTALIGN_GRPO__KL"), "{err}");
        assert!(err.to_string().contains("unknown field `kl`"), "{err}");
    }
}
