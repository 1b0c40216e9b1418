//! OpenAI-compatible chat client and JSON NLI client over blocking HTTP.

use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, NliBackend, RawNli, TokenUsage};

#[derive(Debug, Clone)]
pub struct OpenAiEndpoint {
    pub base_url: String,
    pub path: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl OpenAiEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            path: "/chat/completions".into(),
            api_key: None,
            timeout: Duration::from_secs(120),
        }
    }

    fn url(&self) -> String {
        join_url(&self.base_url, &self.path)
    }
}

fn join_url(base: &str, path: &str) -> String {
    format!(
        "{}/{}",
        base.trim_end_matches('/'),
        path.trim_start_matches('/')
    )
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

fn map_transport(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => BackendError::Timeout,
        other => BackendError::Transport {
            status: None,
            message: other.to_string(),
        },
    }
}

/// POSTs `body` and returns the parsed JSON of a 2xx response.
fn post_json(
    agent: &ureq::Agent,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
) -> Result<Value, BackendError> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(key) = api_key {
        req = req.header("Authorization", format!("Bearer {key}"));
    }
    let mut resp = req.send_json(body).map_err(map_transport)?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(map_transport)?;
    match status {
        200..=299 => serde_json::from_str(&text).map_err(|e| {
            BackendError::MalformedBackendOutput(format!("response is not JSON: {e}"))
        }),
        429 => Err(BackendError::RateLimited),
        _ => Err(BackendError::Transport {
            status: Some(status),
            message: text.chars().take(200).collect(),
        }),
    }
}

pub struct OpenAiChat {
    endpoint: OpenAiEndpoint,
    agent: ureq::Agent,
}

impl OpenAiChat {
    pub fn new(endpoint: OpenAiEndpoint) -> Self {
        let agent = agent(endpoint.timeout);
        Self { endpoint, agent }
    }

    pub fn request_body(req: &ChatRequest) -> Value {
        json!({
            "model": req.model_id,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "seed": req.seed,
            "max_tokens": req.max_tokens,
        })
    }
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl ChatBackend for OpenAiChat {
    fn kind(&self) -> &str {
        "openai"
    }

    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let started = Instant::now();
        let value = post_json(
            &self.agent,
            &self.endpoint.url(),
            self.endpoint.api_key.as_deref(),
            &Self::request_body(req),
        )?;
        let completion: Completion = serde_json::from_value(value)
            .map_err(|e| BackendError::MalformedBackendOutput(e.to_string()))?;
        let text = completion
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::MalformedBackendOutput("no choices".into()))?;
        let token_usage = completion
            .usage
            .map(|u| TokenUsage {
                prompt: u.prompt_tokens,
                completion: u.completion_tokens,
            })
            .unwrap_or_default();
        Ok(ChatResponse {
            text,
            token_usage,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

#[derive(Debug, Clone)]
pub struct NliEndpoint {
    pub base_url: String,
    pub path: String,
    pub model_id: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl NliEndpoint {
    pub fn new(base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            path: "/nli".into(),
            model_id: model_id.into(),
            api_key: None,
            timeout: Duration::from_secs(60),
        }
    }
}

pub struct HttpNli {
    endpoint: NliEndpoint,
    agent: ureq::Agent,
}

impl HttpNli {
    pub fn new(endpoint: NliEndpoint) -> Self {
        let agent = agent(endpoint.timeout);
        Self { endpoint, agent }
    }
}

fn probability(value: &Value, field: &str) -> Result<f64, BackendError> {
    value
        .get(field)
        .and_then(Value::as_f64)
        .ok_or_else(|| BackendError::MalformedBackendOutput(format!("missing `{field}`")))
}

impl NliBackend for HttpNli {
    fn kind(&self) -> &str {
        "nli-http"
    }

    fn model_id(&self) -> &str {
        &self.endpoint.model_id
    }

    fn classify(&self, premise: &str, hypothesis: &str) -> Result<RawNli, BackendError> {
        let value = post_json(
            &self.agent,
            &join_url(&self.endpoint.base_url, &self.endpoint.path),
            self.endpoint.api_key.as_deref(),
            &json!({"premise": premise, "hypothesis": hypothesis}),
        )?;
        Ok(RawNli {
            entailment: probability(&value, "entailment")?,
            neutral: probability(&value, "neutral")?,
            contradiction: probability(&value, "contradiction")?,
        })
    }
}
