//! Hosted multimodal chat endpoint.
//!
//! Requests use the common chat-completions JSON shape: a system message and a
//! user message whose content is an array of `image_url` parts (base64 PNG data
//! URLs) and `text` parts. Transient failures (timeouts, connection errors,
//! 429 and 5xx) are retried with exponential backoff.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, ChatRequest, ContentPart, GatewayError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model_id: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub timeout_s: f64,
    /// Retries after the first attempt.
    pub retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    /// Ceiling on HTTP requests sent, retries included.
    pub request_budget: Option<u64>,
    pub requests_per_minute: Option<u32>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model_id: String::new(),
            token_env: "TCD_API_TOKEN".into(),
            timeout_s: 60.0,
            retries: 3,
            backoff_ms: 500,
            max_in_flight: 4,
            request_budget: None,
            requests_per_minute: None,
        }
    }
}

impl RemoteConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::Config(m.into()));
        if self.endpoint.is_empty() {
            return bad("endpoint is empty");
        }
        if self.model_id.is_empty() {
            return bad("model_id is empty");
        }
        if !(self.timeout_s > 0.0) {
            return bad("timeout must be positive");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1");
        }
        if self.requests_per_minute == Some(0) {
            return bad("requests_per_minute must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    Timeout,
    /// Connection-level failure; retried.
    Connect(String),
}

/// One HTTP POST. Swappable so retry and limiting logic can be tested offline.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
        timeout: Duration,
    ) -> Result<TransportResponse, TransportError>;
}

pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
        timeout: Duration,
    ) -> Result<TransportResponse, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        for (k, v) in headers {
            req = req.header(k, v);
        }
        match req.send(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let body = resp.body_mut().read_to_string().map_err(|e| match e {
                    ureq::Error::Timeout(_) => TransportError::Timeout,
                    other => TransportError::Connect(other.to_string()),
                })?;
                Ok(TransportResponse { status, body })
            }
            Err(ureq::Error::Timeout(_)) => Err(TransportError::Timeout),
            Err(e) => Err(TransportError::Connect(e.to_string())),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    used: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct GatePass<'a>(&'a Gate);

impl Gate {
    fn new(limit: usize) -> Self {
        Gate { used: Mutex::new(0), freed: Condvar::new(), limit }
    }

    fn enter(&self) -> GatePass<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        GatePass(self)
    }
}

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Sliding-window limit on request starts.
struct RateLimiter {
    window: Duration,
    limit: usize,
    starts: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    fn acquire(&self) {
        loop {
            let wait = {
                let mut starts = self.starts.lock().unwrap();
                let now = Instant::now();
                while starts.front().is_some_and(|t| now.duration_since(*t) >= self.window) {
                    starts.pop_front();
                }
                if starts.len() < self.limit {
                    starts.push_back(now);
                    return;
                }
                self.window - now.duration_since(starts[0])
            };
            std::thread::sleep(wait);
        }
    }
}

pub struct RemoteBackend {
    id: String,
    config: RemoteConfig,
    token: Option<String>,
    transport: Box<dyn Transport>,
    gate: Gate,
    limiter: Option<RateLimiter>,
    sent: AtomicU64,
}

impl RemoteBackend {
    /// Backend over real HTTP, reading the token from `config.token_env`.
    pub fn new(config: RemoteConfig) -> Result<Self, GatewayError> {
        let token = std::env::var(&config.token_env).ok();
        Self::with_transport(config, token, Box::new(UreqTransport))
    }

    pub fn with_transport(
        config: RemoteConfig,
        token: Option<String>,
        transport: Box<dyn Transport>,
    ) -> Result<Self, GatewayError> {
        config.validate()?;
        let limiter = config.requests_per_minute.map(|n| RateLimiter {
            window: Duration::from_secs(60),
            limit: n as usize,
            starts: Mutex::new(VecDeque::new()),
        });
        Ok(RemoteBackend {
            id: format!("remote:{}", config.model_id),
            gate: Gate::new(config.max_in_flight),
            config,
            token,
            transport,
            limiter,
            sent: AtomicU64::new(0),
        })
    }

    #[cfg(test)]
    fn with_window(mut self, window: Duration) -> Self {
        if let Some(l) = &mut self.limiter {
            l.window = window;
        }
        self
    }

    /// HTTP requests sent so far, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.sent.load(Ordering::SeqCst)
    }

    fn reserve(&self) -> Result<(), GatewayError> {
        if let Some(budget) = self.config.request_budget {
            let granted = self
                .sent
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| (n < budget).then_some(n + 1));
            granted.map_err(|_| GatewayError::BudgetExceeded { budget })?;
        } else {
            self.sent.fetch_add(1, Ordering::SeqCst);
        }
        Ok(())
    }

    fn headers(&self) -> Vec<(String, String)> {
        self.token
            .iter()
            .map(|t| ("Authorization".to_string(), format!("Bearer {t}")))
            .collect()
    }
}

/// Chat-completions request body.
pub fn wire_body(req: &ChatRequest) -> Value {
    let content: Vec<Value> = req
        .user_parts
        .iter()
        .map(|p| match p {
            ContentPart::Text(t) => json!({"type": "text", "text": t}),
            ContentPart::Image(url) => json!({"type": "image_url", "image_url": {"url": url}}),
        })
        .collect();
    json!({
        "model": req.model_id,
        "temperature": req.params.temperature,
        "max_tokens": req.params.max_answer_tokens,
        "messages": [
            {"role": "system", "content": req.system},
            {"role": "user", "content": content},
        ],
    })
}

/// Assistant text of a chat-completions response.
pub fn response_text(body: &str) -> Option<String> {
    let v: Value = serde_json::from_str(body).ok()?;
    let content = &v["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => {
            let text: Vec<&str> = parts.iter().filter_map(|p| p["text"].as_str()).collect();
            (!text.is_empty()).then(|| text.concat())
        }
        _ => None,
    }
}

fn transient(status: u16) -> bool {
    status == 408 || status == 429 || status >= 500
}

impl Backend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight
    }

    fn invoke(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let body = wire_body(req).to_string();
        let headers = self.headers();
        let timeout = Duration::from_secs_f64(self.config.timeout_s);
        let mut last = GatewayError::Timeout { attempts: 0 };
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                let factor = 1u64 << (attempt - 1).min(16);
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms.saturating_mul(factor)));
            }
            self.reserve()?;
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            let result = {
                let _pass = self.gate.enter();
                self.transport.post_json(&self.config.endpoint, &headers, &body, timeout)
            };
            let attempts = attempt + 1;
            match result {
                Ok(r) if (200..300).contains(&r.status) => {
                    return response_text(&r.body).ok_or(GatewayError::RemoteError {
                        status: r.status,
                        attempts,
                        body: "response has no assistant text".into(),
                    });
                }
                Ok(r) if transient(r.status) => {
                    last = GatewayError::RemoteError { status: r.status, attempts, body: r.body };
                }
                Ok(r) => return Err(GatewayError::RemoteError { status: r.status, attempts, body: r.body }),
                Err(TransportError::Timeout) => last = GatewayError::Timeout { attempts },
                Err(TransportError::Connect(msg)) => {
                    last = GatewayError::RemoteError { status: 0, attempts, body: msg };
                }
            }
        }
        Err(last)
    }
}
