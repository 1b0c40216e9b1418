//! Run configuration: a TOML file overridable field by field, plus the
//! construction of backends from it. API keys are read from the environment
//! variable named in the config, never from the file itself.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::de::value::StrDeserializer;
use serde::de::IntoDeserializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    ChatBackend, ChatClient, ChatScript, HttpNli, NliBackend, NliClient, NliEndpoint, NliScript,
    OpenAiChat, OpenAiEndpoint, ResponseCache, RetryPolicy, ScriptedChat, ScriptedNli,
};
use crate::baselines::default_dimensions;
use crate::fact_detection::DEFAULT_DEMO_COUNT;
use crate::judge::Judge;
use crate::rank_metrics::DEFAULT_RBO_P;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Minoseval,
    Pointwise,
    Pairwise,
    Listwise,
    Bleu,
    RougeL,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassificationMode {
    #[default]
    Llm,
    Manual,
    ForcedFactoid,
    ForcedNonfactoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChatKind {
    #[default]
    Openai,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NliKind {
    #[default]
    Http,
    Mock,
}

fn parse_kebab<'a, T: Deserialize<'a>>(s: &'a str) -> Result<T, String> {
    let de: StrDeserializer<'a, serde::de::value::Error> = s.into_deserializer();
    T::deserialize(de).map_err(|e| e.to_string())
}

fn kebab_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

macro_rules! kebab_enum_text {
    ($($t:ty),*) => {$(
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                parse_kebab(s)
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&kebab_name(self))
            }
        }
    )*};
}

kebab_enum_text!(Method, ClassificationMode, ChatKind, NliKind);

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Minoseval,
        Method::Pointwise,
        Method::Pairwise,
        Method::Listwise,
        Method::Bleu,
        Method::RougeL,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatConfig {
    pub kind: ChatKind,
    pub base_url: String,
    pub path: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub retry_base_ms: u64,
    /// JSON chat script for the mock backend. Without one the mock simulates.
    pub script: Option<PathBuf>,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            kind: ChatKind::Openai,
            base_url: "http://localhost:8000/v1".into(),
            path: "/chat/completions".into(),
            model: String::new(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            max_tokens: crate::backends::DEFAULT_MAX_TOKENS,
            timeout_secs: 120,
            max_retries: 2,
            retry_base_ms: 1000,
            script: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NliConfig {
    pub kind: NliKind,
    pub base_url: String,
    pub path: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub retry_base_ms: u64,
    pub script: Option<PathBuf>,
}

impl Default for NliConfig {
    fn default() -> Self {
        Self {
            kind: NliKind::Http,
            base_url: "http://localhost:8001".into(),
            path: "/nli".into(),
            model: String::new(),
            api_key_env: None,
            timeout_secs: 60,
            max_retries: 2,
            retry_base_ms: 1000,
            script: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub chat: ChatConfig,
    pub nli: NliConfig,
    /// JSONL demonstrations for classification; built-ins when absent.
    pub demos: Option<PathBuf>,
    pub demo_count: usize,
    pub key_point_cap: usize,
    pub rbo_p: Vec<f64>,
    pub seed: u64,
    pub concurrency: usize,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub method: Method,
    pub classification: ClassificationMode,
    pub dimensions: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            chat: ChatConfig::default(),
            nli: NliConfig::default(),
            demos: None,
            demo_count: DEFAULT_DEMO_COUNT,
            key_point_cap: crate::akps::DEFAULT_KEY_POINT_CAP,
            rbo_p: DEFAULT_RBO_P.to_vec(),
            seed: crate::backends::DEFAULT_SEED,
            concurrency: 4,
            cache_dir: None,
            output_dir: PathBuf::from("minoseval-out"),
            method: Method::Minoseval,
            classification: ClassificationMode::Llm,
            dimensions: default_dimensions(),
        }
    }
}

fn check_file(label: &str, path: &Path) -> Result<(), ConfigError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{label} {} does not exist", path.display())))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_relative_to(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative paths in a loaded file relative to the file itself.
    fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            self.dataset.as_mut(),
            self.demos.as_mut(),
            self.cache_dir.as_mut(),
            self.chat.script.as_mut(),
            self.nli.script.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    pub fn dataset_path(&self) -> Result<&Path, ConfigError> {
        self.dataset
            .as_deref()
            .ok_or_else(|| ConfigError::Invalid("no dataset given".into()))
    }

    /// Whether a run under this config needs the NLI backend.
    pub fn needs_nli(&self) -> bool {
        self.method == Method::Minoseval && self.classification != ClassificationMode::ForcedNonfactoid
    }

    /// Checks values and that every referenced input file exists.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_for(self.needs_nli())
    }

    pub fn validate_for(&self, with_nli: bool) -> Result<(), ConfigError> {
        if let Some(p) = self.rbo_p.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(ConfigError::Invalid(format!("rbo p-value {p} outside (0, 1)")));
        }
        if self.concurrency == 0 {
            return Err(ConfigError::Invalid("concurrency must be at least 1".into()));
        }
        if self.key_point_cap == 0 {
            return Err(ConfigError::Invalid("key_point_cap must be at least 1".into()));
        }
        check_file("dataset", self.dataset_path()?)?;
        if let Some(p) = &self.demos {
            check_file("demonstration file", p)?;
        }
        if let Some(p) = &self.chat.script {
            check_file("chat script", p)?;
        }
        if let Some(p) = &self.nli.script {
            check_file("nli script", p)?;
        }
        if self.chat.kind == ChatKind::Openai && self.chat.model.is_empty() {
            return Err(ConfigError::Invalid("chat.model is required for the openai backend".into()));
        }
        if with_nli && self.nli.kind == NliKind::Http && self.nli.model.is_empty() {
            return Err(ConfigError::Invalid("nli.model is required for the http backend".into()));
        }
        Ok(())
    }
}

fn read_env_key(var: &Option<String>) -> Option<String> {
    var.as_ref()
        .and_then(|name| std::env::var(name).ok())
        .filter(|k| !k.is_empty())
}

fn read_script<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| ConfigError::Invalid(format!("script {}: {e}", path.display())))
}

/// The chat judge and NLI client a run talks to.
pub struct Backends {
    pub judge: Judge,
    pub nli: Option<NliClient>,
}

impl Backends {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, ConfigError> {
        Self::build(cfg, cfg.needs_nli())
    }

    pub fn build(cfg: &RunConfig, with_nli: bool) -> Result<Self, ConfigError> {
        let cache = Arc::new(match &cfg.cache_dir {
            Some(dir) => ResponseCache::on_disk(dir),
            None => ResponseCache::in_memory(),
        });

        let chat: Arc<dyn ChatBackend> = match cfg.chat.kind {
            ChatKind::Openai => Arc::new(OpenAiChat::new(OpenAiEndpoint {
                base_url: cfg.chat.base_url.clone(),
                path: cfg.chat.path.clone(),
                api_key: read_env_key(&cfg.chat.api_key_env),
                timeout: Duration::from_secs(cfg.chat.timeout_secs),
            })),
            ChatKind::Mock => Arc::new(ScriptedChat::new(match &cfg.chat.script {
                Some(p) => read_script::<ChatScript>(p)?,
                None => ChatScript::simulate(),
            })),
        };
        let chat_retry = RetryPolicy::new(cfg.chat.max_retries, Duration::from_millis(cfg.chat.retry_base_ms));
        let model = if cfg.chat.model.is_empty() {
            "mock".to_string()
        } else {
            cfg.chat.model.clone()
        };
        let mut judge = Judge::new(Arc::new(ChatClient::new(chat, cache.clone(), chat_retry)), model);
        judge.seed = cfg.seed;
        judge.max_tokens = cfg.chat.max_tokens;

        let nli = if with_nli {
            let backend: Arc<dyn NliBackend> = match cfg.nli.kind {
                NliKind::Http => Arc::new(HttpNli::new(NliEndpoint {
                    base_url: cfg.nli.base_url.clone(),
                    path: cfg.nli.path.clone(),
                    model_id: cfg.nli.model.clone(),
                    api_key: read_env_key(&cfg.nli.api_key_env),
                    timeout: Duration::from_secs(cfg.nli.timeout_secs),
                })),
                NliKind::Mock => Arc::new(ScriptedNli::new(match &cfg.nli.script {
                    Some(p) => read_script::<NliScript>(p)?,
                    None => NliScript::simulate(),
                })),
            };
            let retry = RetryPolicy::new(cfg.nli.max_retries, Duration::from_millis(cfg.nli.retry_base_ms));
            Some(NliClient::new(backend, cache, retry))
        } else {
            None
        };
        Ok(Self { judge, nli })
    }
}
