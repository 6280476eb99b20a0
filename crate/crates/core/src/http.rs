//! Blocking JSON-over-HTTP client shared by every remote backend.
//!
//! Retries transport errors, 429 and 5xx with exponential backoff, and caps the
//! number of requests in flight per backend.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

#[derive(Debug, Error, Clone)]
pub enum HttpError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("could not decode response: {0}")]
    Decode(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<HttpError> },
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
}

impl HttpError {
    pub fn is_retryable(&self) -> bool {
        match self {
            HttpError::Transport(_) => true,
            HttpError::Status { status, .. } => *status == 429 || *status >= 500,
            HttpError::Exhausted { .. } => true,
            HttpError::Decode(_) | HttpError::MissingApiKey(_) => false,
        }
    }
}

/// Connection settings for one remote backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default)]
    pub model: Option<String>,
    /// Name of the environment variable holding a bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout_secs() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_max_in_flight() -> usize {
    8
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into(),
            model: None,
            api_key_env: None,
            timeout_secs: default_timeout_secs(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            max_in_flight: default_max_in_flight(),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
pub struct InFlightLimit {
    available: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limit: &'a InFlightLimit,
}

impl InFlightLimit {
    pub fn new(cap: usize) -> Self {
        InFlightLimit {
            available: Mutex::new(cap.max(1)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit { limit: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limit.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.limit.freed.notify_one();
    }
}

#[derive(Clone)]
pub struct JsonClient {
    client: reqwest::blocking::Client,
    config: EndpointConfig,
    api_key: Option<String>,
    limit: Arc<InFlightLimit>,
}

impl std::fmt::Debug for JsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonClient")
            .field("url", &self.config.url)
            .field("model", &self.config.model)
            .finish()
    }
}

impl JsonClient {
    pub fn new(config: EndpointConfig) -> Result<Self, HttpError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| HttpError::MissingApiKey(var.clone()))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs.max(0.001)))
            .build()
            .map_err(|e| HttpError::Transport(e.to_string()))?;
        let limit = Arc::new(InFlightLimit::new(config.max_in_flight));
        Ok(JsonClient {
            client,
            config,
            api_key,
            limit,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    pub fn model(&self) -> &str {
        self.config.model.as_deref().unwrap_or("")
    }

    /// POSTs `body` and decodes the reply, retrying transient failures.
    pub fn post<Req: Serialize + ?Sized, Res: DeserializeOwned>(
        &self,
        body: &Req,
    ) -> Result<Res, HttpError> {
        let attempts = self.config.retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(10));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.post_once(body) {
                Ok(res) => return Ok(res),
                Err(e) if e.is_retryable() => {
                    warn!(url = %self.config.url, attempt, error = %e, "retrying request");
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(HttpError::Exhausted {
            attempts,
            last: Box::new(last.unwrap_or_else(|| HttpError::Transport("no attempt made".into()))),
        })
    }

    fn post_once<Req: Serialize + ?Sized, Res: DeserializeOwned>(
        &self,
        body: &Req,
    ) -> Result<Res, HttpError> {
        let _permit = self.limit.acquire();
        let mut request = self.client.post(&self.config.url).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| HttpError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| HttpError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(HttpError::Status {
                status: status.as_u16(),
                body: text.chars().take(512).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| HttpError::Decode(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn fast(url: String) -> EndpointConfig {
        EndpointConfig {
            retries: 2,
            backoff_ms: 1,
            ..EndpointConfig::new(url)
        }
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let mut server = mockito::Server::new();
        // mocks with outstanding expected hits are served first, in creation order
        let fail = server.mock("POST", "/").with_status(503).expect(1).create();
        let ok = server.mock("POST", "/").with_body("[1.0]").expect(1).create();
        let client = JsonClient::new(fast(server.url())).unwrap();
        let out = client.post::<_, Vec<f64>>(&serde_json::json!({})).unwrap();
        assert_eq!(out, vec![1.0]);
        fail.assert();
        ok.assert();
    }

    #[test]
    fn client_errors_are_not_retried() {
        let mut server = mockito::Server::new();
        let m = server.mock("POST", "/").with_status(400).expect(1).create();
        let client = JsonClient::new(fast(server.url())).unwrap();
        let err = client.post::<_, Vec<f64>>(&serde_json::json!({})).unwrap_err();
        assert!(matches!(err, HttpError::Status { status: 400, .. }));
        m.assert();
    }

    #[test]
    fn exhausts_bounded_retries() {
        let mut server = mockito::Server::new();
        let m = server.mock("POST", "/").with_status(500).expect(3).create();
        let client = JsonClient::new(fast(server.url())).unwrap();
        let err = client.post::<_, Vec<f64>>(&serde_json::json!({})).unwrap_err();
        assert!(matches!(err, HttpError::Exhausted { attempts: 3, .. }));
        m.assert();
    }

    #[test]
    fn missing_api_key_env() {
        let mut cfg = EndpointConfig::new("http://127.0.0.1:1");
        cfg.api_key_env = Some("SPIRAL_TEST_SURELY_UNSET_KEY".into());
        assert!(matches!(JsonClient::new(cfg), Err(HttpError::MissingApiKey(_))));
    }

    #[test]
    fn limit_caps_concurrency() {
        let limit = Arc::new(InFlightLimit::new(2));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (limit, active, peak) = (limit.clone(), active.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _p = limit.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
