//! Chat-completions client with retry, backoff, rate-limit handling and an
//! in-flight bound.

use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token. The token
    /// itself never appears in configuration.
    pub auth_env: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_initial_ms: u64,
    pub backoff_multiplier: f64,
    pub max_in_flight: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: String::new(),
            auth_env: None,
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_initial_ms: 500,
            backoff_multiplier: 2.0,
            max_in_flight: 4,
        }
    }
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |m: &str| Err(ClientError::Config(m.to_string()));
        if !(self.timeout_secs > 0.0) {
            return bad("timeout_secs must be > 0");
        }
        if self.max_in_flight < 1 {
            return bad("max_in_flight must be >= 1");
        }
        if !(self.backoff_multiplier >= 1.0) {
            return bad("backoff_multiplier must be >= 1");
        }
        if self.base_url.is_empty() {
            return bad("base_url must be set");
        }
        Ok(())
    }

    /// Delay before retry number `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.backoff_initial_ms as f64 * self.backoff_multiplier.powi(attempt as i32);
        Duration::from_millis(ms.min(60_000.0) as u64)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ClientError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("rate limited; retry after {retry_after_ms} ms")]
    RateLimited { retry_after_ms: u64 },
    #[error("http {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid endpoint config: {0}")]
    Config(String),
    #[error("auth token variable `{0}` is not set")]
    MissingSecret(String),
}

impl ClientError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ClientError::Transport { .. } | ClientError::RateLimited { .. })
    }
}

#[derive(Debug, Clone)]
pub struct HttpRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
    pub timeout: Duration,
}

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl HttpResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// One HTTP POST. `Err` means the request never produced a response.
pub trait Transport: Send + Sync {
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new() -> Self {
        let config = ureq::Agent::config_builder().http_status_as_error(false).build();
        Self {
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for UreqTransport {
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, String> {
        let mut builder = self
            .agent
            .post(&request.url)
            .config()
            .timeout_global(Some(request.timeout))
            .build();
        for (k, v) in &request.headers {
            builder = builder.header(k, v);
        }
        let mut response = builder.send(request.body.as_bytes()).map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let headers = response
            .headers()
            .iter()
            .filter_map(|(k, v)| v.to_str().ok().map(|v| (k.as_str().to_string(), v.to_string())))
            .collect();
        let body = response.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, headers, body })
    }
}

/// Counting semaphore bounding concurrent requests.
pub struct InFlightLimiter {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.current.lock().expect("limiter poisoned");
        while *n >= self.max {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        Permit { limiter: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.current.lock().expect("limiter poisoned");
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: Option<f64>,
    pub logprobs: bool,
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    /// Per-token log-probabilities, when the server returns them.
    pub logprobs: Option<Vec<f64>>,
}

impl ChatResponse {
    pub fn total_logprob(&self) -> Option<f64> {
        self.logprobs.as_ref().map(|v| v.iter().sum())
    }
}

/// One attempt as recorded in the exchange log, secrets redacted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub attempt: u32,
    pub url: String,
    pub status: Option<u16>,
    pub request: String,
    pub response: String,
}

const REDACTED: &str = "[redacted]";

pub struct ChatClient {
    cfg: EndpointConfig,
    transport: Arc<dyn Transport>,
    limiter: InFlightLimiter,
    log: Mutex<Vec<Exchange>>,
}

impl ChatClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self, ClientError> {
        Self::with_transport(cfg, Arc::new(UreqTransport::new()))
    }

    pub fn with_transport(cfg: EndpointConfig, transport: Arc<dyn Transport>) -> Result<Self, ClientError> {
        cfg.validate()?;
        Ok(Self {
            limiter: InFlightLimiter::new(cfg.max_in_flight),
            cfg,
            transport,
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    pub fn exchanges(&self) -> Vec<Exchange> {
        self.log.lock().expect("log poisoned").clone()
    }

    fn url(&self, path: &str) -> String {
        let base = self.cfg.base_url.trim_end_matches('/');
        if base.ends_with(path) {
            base.to_string()
        } else {
            format!("{base}/{path}")
        }
    }

    fn token(&self) -> Result<Option<String>, ClientError> {
        match &self.cfg.auth_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ClientError::MissingSecret(var.clone())),
        }
    }

    fn body(&self, request: &ChatRequest) -> String {
        let mut body = json!({
            "model": self.cfg.model,
            "messages": request.messages,
        });
        if let Some(t) = request.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(s) = request.seed {
            body["seed"] = json!(s);
        }
        if request.logprobs {
            body["logprobs"] = json!(true);
        }
        body.to_string()
    }

    fn record(&self, url: &str, attempt: u32, status: Option<u16>, request: &str, response: &str, secret: Option<&str>) {
        let redact = |s: &str| match secret {
            Some(t) if !t.is_empty() => s.replace(t, REDACTED),
            _ => s.to_string(),
        };
        log::debug!("chat attempt {attempt} -> {status:?}");
        self.log.lock().expect("log poisoned").push(Exchange {
            attempt,
            url: redact(url),
            status,
            request: redact(request),
            response: redact(response),
        });
    }

    /// Sends one chat-completions request.
    pub fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError> {
        let body = self.post_json("chat/completions", self.body(request))?;
        parse_chat_response(&body)
    }

    /// POSTs a JSON body to `path` under the base URL, retrying connection
    /// failures, 5xx and 429 responses with exponential backoff. Returns the
    /// body of the first 2xx response.
    pub fn post_json(&self, path: &str, body: String) -> Result<String, ClientError> {
        let token = self.token()?;
        let mut headers = vec![("Content-Type".to_string(), "application/json".to_string())];
        if let Some(t) = &token {
            headers.push(("Authorization".to_string(), format!("Bearer {t}")));
        }
        let http = HttpRequest {
            url: self.url(path),
            headers,
            body,
            timeout: Duration::from_secs_f64(self.cfg.timeout_secs),
        };
        let secret = token.as_deref();
        let mut last_error = String::new();
        for attempt in 0..=self.cfg.max_retries {
            let attempt_no = attempt + 1;
            let result = {
                let _permit = self.limiter.acquire();
                self.transport.post(&http)
            };
            let has_more = attempt < self.cfg.max_retries;
            let wait = match result {
                Err(e) => {
                    self.record(&http.url, attempt_no, None, &http.body, &e, secret);
                    last_error = e;
                    self.cfg.backoff(attempt)
                }
                Ok(resp) => {
                    self.record(&http.url, attempt_no, Some(resp.status), &http.body, &resp.body, secret);
                    match resp.status {
                        200..=299 => return Ok(resp.body),
                        429 => {
                            let retry_after = resp
                                .header("retry-after")
                                .and_then(|v| v.trim().parse::<f64>().ok())
                                .map(|s| Duration::from_secs_f64(s.max(0.0)));
                            let wait = retry_after.unwrap_or_else(|| self.cfg.backoff(attempt));
                            if !has_more {
                                return Err(ClientError::RateLimited {
                                    retry_after_ms: wait.as_millis() as u64,
                                });
                            }
                            wait
                        }
                        500..=599 => {
                            last_error = format!("server returned {}", resp.status);
                            self.cfg.backoff(attempt)
                        }
                        status => {
                            return Err(ClientError::Http {
                                status,
                                body: resp.body.chars().take(500).collect(),
                            })
                        }
                    }
                }
            };
            if has_more {
                thread::sleep(wait);
            }
        }
        Err(ClientError::Transport {
            attempts: self.cfg.max_retries + 1,
            message: last_error,
        })
    }
}

pub fn parse_chat_response(body: &str) -> Result<ChatResponse, ClientError> {
    let v: Value = serde_json::from_str(body).map_err(|e| ClientError::Malformed(e.to_string()))?;
    let choice = &v["choices"][0];
    let text = choice["message"]["content"]
        .as_str()
        .or_else(|| choice["text"].as_str())
        .ok_or_else(|| ClientError::Malformed("missing choices[0].message.content".into()))?
        .to_string();
    let logprobs = choice["logprobs"]["content"].as_array().map(|tokens| {
        tokens
            .iter()
            .filter_map(|t| t["logprob"].as_f64())
            .collect::<Vec<_>>()
    });
    Ok(ChatResponse { text, logprobs })
}

/// Canonical success body, shared by stubs and tests.
pub fn chat_response_body(text: &str) -> String {
    json!({
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]
    })
    .to_string()
}
