//! Completion gateway: sends rendered prompts to chat-completion backends.
//!
//! Every call is a fresh single-turn exchange; no conversation history is
//! ever attached. Transient failures (network, 5xx, timeout) are retried
//! with exponential backoff up to the backend's retry budget. Each backend
//! is either an HTTP endpoint or a scripted mock, behind one [`Transport`]
//! trait, so pipelines are byte-deterministic offline.

mod http;
mod mock;

pub use http::HttpTransport;
pub use mock::{CallRecord, MatchKey, MockRule, MockTransport};

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::RenderedPrompt;

/// One named backend in the run configuration.
#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub name: String,
    pub kind: BackendKind,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
    pub max_retries: u32,
    /// Initial backoff delay, doubled per retry. No jitter: reruns with the
    /// same scripts must be reproducible.
    pub retry_backoff: Duration,
}

#[derive(Debug, Clone)]
pub enum BackendKind {
    Http {
        base_url: String,
        path: String,
        model: String,
        /// Name of the environment variable holding the API key. The key
        /// itself never appears in configuration.
        api_key_env: Option<String>,
        /// When set, a leading "You are ..." identity line is sent as a
        /// system message instead of prepended to the user message.
        split_system_line: bool,
    },
    Mock {
        script: PathBuf,
    },
}

impl BackendConfig {
    pub fn mock(name: &str, script: PathBuf) -> Self {
        Self {
            name: name.to_string(),
            kind: BackendKind::Mock { script },
            temperature: 0.0,
            max_tokens: 1024,
            timeout: Duration::from_secs(30),
            max_retries: 2,
            retry_backoff: Duration::from_millis(1),
        }
    }
}

/// A single completion call to make.
#[derive(Debug, Clone)]
pub struct CompletionRequest {
    /// Unique within a run; used for logs and provenance.
    pub request_id: String,
    pub backend: String,
    pub prompt: RenderedPrompt,
    pub seed: Option<u64>,
    /// Role-level temperature override (extraction and evaluator calls pin 0).
    pub temperature_override: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status")]
pub enum CompletionOutcome {
    Ok { raw_text: String },
    Failed { error: String },
}

/// Result of one completion call, after retries.
#[derive(Debug, Clone)]
pub struct CompletionResult {
    pub request_id: String,
    pub backend: String,
    pub outcome: CompletionOutcome,
    pub latency: Duration,
    pub attempt_count: u32,
}

impl CompletionResult {
    pub fn raw_text(&self) -> Option<&str> {
        match &self.outcome {
            CompletionOutcome::Ok { raw_text } => Some(raw_text),
            CompletionOutcome::Failed { .. } => None,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self.outcome, CompletionOutcome::Ok { .. })
    }

    pub fn error(&self) -> Option<&str> {
        match &self.outcome {
            CompletionOutcome::Ok { .. } => None,
            CompletionOutcome::Failed { error } => Some(error),
        }
    }
}

/// Transport-level failure. Retryable errors consume retry budget; fatal
/// ones surface immediately.
#[derive(Debug, Error)]
pub enum TransportError {
    #[error("{message}")]
    Retryable { message: String },
    #[error("{message}")]
    Fatal { message: String },
}

#[async_trait::async_trait]
pub trait Transport: Send + Sync {
    async fn send(
        &self,
        config: &BackendConfig,
        request: &CompletionRequest,
    ) -> Result<String, TransportError>;

    /// Cheap reachability probe used by `validate`.
    async fn health_check(&self, config: &BackendConfig) -> Result<(), TransportError>;
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("duplicate backend name `{0}`")]
    DuplicateBackend(String),
    #[error("max_in_flight must be at least 1")]
    InvalidMaxInFlight,
    #[error("failed to load mock script for backend `{name}`: {message}")]
    MockScript { name: String, message: String },
}

struct BackendEntry {
    config: BackendConfig,
    transport: Arc<dyn Transport>,
}

/// Routes completion requests to named backends.
pub struct Gateway {
    backends: HashMap<String, BackendEntry>,
}

impl Gateway {
    pub fn new() -> Self {
        Self {
            backends: HashMap::new(),
        }
    }

    /// Builds transports from configs: HTTP backends share a client, mock
    /// backends load their script files.
    pub fn from_configs(configs: Vec<BackendConfig>) -> Result<Self, GatewayError> {
        let mut gateway = Self::new();
        let http = Arc::new(HttpTransport::new());
        for config in configs {
            let transport: Arc<dyn Transport> = match &config.kind {
                BackendKind::Http { .. } => http.clone(),
                BackendKind::Mock { script } => Arc::new(
                    MockTransport::from_script_file(script).map_err(|message| {
                        GatewayError::MockScript {
                            name: config.name.clone(),
                            message,
                        }
                    })?,
                ),
            };
            gateway.register(config, transport)?;
        }
        Ok(gateway)
    }

    pub fn register(
        &mut self,
        config: BackendConfig,
        transport: Arc<dyn Transport>,
    ) -> Result<(), GatewayError> {
        let name = config.name.clone();
        if self
            .backends
            .insert(name.clone(), BackendEntry { config, transport })
            .is_some()
        {
            return Err(GatewayError::DuplicateBackend(name));
        }
        Ok(())
    }

    pub fn backend_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.backends.keys().cloned().collect();
        names.sort();
        names
    }

    pub fn has_backend(&self, name: &str) -> bool {
        self.backends.contains_key(name)
    }

    pub async fn health_check(&self, name: &str) -> Result<(), GatewayError> {
        let entry = self
            .backends
            .get(name)
            .ok_or_else(|| GatewayError::UnknownBackend(name.to_string()))?;
        entry
            .transport
            .health_check(&entry.config)
            .await
            .map_err(|e| GatewayError::MockScript {
                name: name.to_string(),
                message: e.to_string(),
            })
    }

    /// Runs one request to completion, retrying transient failures with
    /// exponential backoff. `attempt_count` never exceeds `1 + max_retries`.
    pub async fn complete(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResult, GatewayError> {
        let entry = self
            .backends
            .get(&request.backend)
            .ok_or_else(|| GatewayError::UnknownBackend(request.backend.clone()))?;
        let start = Instant::now();
        let mut attempt: u32 = 0;
        let outcome = loop {
            attempt += 1;
            match entry.transport.send(&entry.config, request).await {
                Ok(raw_text) => break CompletionOutcome::Ok { raw_text },
                Err(TransportError::Fatal { message }) => {
                    break CompletionOutcome::Failed { error: message }
                }
                Err(TransportError::Retryable { message }) => {
                    if attempt > entry.config.max_retries {
                        break CompletionOutcome::Failed {
                            error: format!("retry budget exhausted: {message}"),
                        };
                    }
                    let backoff = entry.config.retry_backoff * 2u32.saturating_pow(attempt - 1);
                    tokio::time::sleep(backoff).await;
                }
            }
        };
        Ok(CompletionResult {
            request_id: request.request_id.clone(),
            backend: request.backend.clone(),
            outcome,
            latency: start.elapsed(),
            attempt_count: attempt,
        })
    }

    /// Runs a batch with at most `max_in_flight` requests outstanding per
    /// backend. Results come back in request order regardless of completion
    /// order; per-request failures are embedded, the batch never aborts.
    pub async fn complete_batch(
        &self,
        requests: &[CompletionRequest],
        max_in_flight: usize,
    ) -> Result<Vec<CompletionResult>, GatewayError> {
        if max_in_flight == 0 {
            return Err(GatewayError::InvalidMaxInFlight);
        }
        // Resolve every backend up front so the batch cannot abort midway.
        let mut semaphores: HashMap<&str, Arc<tokio::sync::Semaphore>> = HashMap::new();
        for request in requests {
            if !self.backends.contains_key(&request.backend) {
                return Err(GatewayError::UnknownBackend(request.backend.clone()));
            }
            semaphores
                .entry(request.backend.as_str())
                .or_insert_with(|| Arc::new(tokio::sync::Semaphore::new(max_in_flight)));
        }

        let futures = requests.iter().map(|request| {
            let semaphore = semaphores[request.backend.as_str()].clone();
            async move {
                let _permit = semaphore.acquire().await.expect("semaphore never closed");
                self.complete(request)
                    .await
                    .expect("backend resolved before batch start")
            }
        });
        Ok(futures::future::join_all(futures).await)
    }
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::TemplateId;

    fn prompt(text: &str) -> RenderedPrompt {
        RenderedPrompt {
            text: text.to_string(),
            template_id: TemplateId::Evaluator,
            template_version: "v1".to_string(),
        }
    }

    fn request(id: &str, backend: &str, text: &str) -> CompletionRequest {
        CompletionRequest {
            request_id: id.to_string(),
            backend: backend.to_string(),
            prompt: prompt(text),
            seed: None,
            temperature_override: None,
        }
    }

    fn mock_gateway(rules: Vec<MockRule>) -> (Gateway, Arc<MockTransport>) {
        let transport = Arc::new(MockTransport::from_rules(rules));
        let mut gateway = Gateway::new();
        let mut config = BackendConfig::mock("judge", PathBuf::new());
        config.max_retries = 3;
        gateway.register(config, transport.clone()).unwrap();
        (gateway, transport)
    }

    fn any_rule(response: &str) -> MockRule {
        MockRule::new(MatchKey::parse("any").unwrap(), response)
    }

    #[tokio::test]
    async fn mock_passthrough() {
        let (gateway, _) = mock_gateway(vec![any_rule("The score is [7]")]);
        let result = gateway.complete(&request("r1", "judge", "anything")).await.unwrap();
        assert_eq!(result.raw_text(), Some("The score is [7]"));
        assert_eq!(result.attempt_count, 1);
    }

    #[tokio::test]
    async fn retries_until_success() {
        let mut rule = any_rule("ok now");
        rule.fail_count = 2;
        let (gateway, _) = mock_gateway(vec![rule]);
        let result = gateway.complete(&request("r1", "judge", "x")).await.unwrap();
        assert!(result.is_ok());
        assert_eq!(result.attempt_count, 3);
    }

    #[tokio::test]
    async fn retry_budget_exhausted() {
        let mut rule = any_rule("never seen");
        rule.fail_count = u32::MAX;
        let transport = Arc::new(MockTransport::from_rules(vec![rule]));
        let mut gateway = Gateway::new();
        let mut config = BackendConfig::mock("judge", PathBuf::new());
        config.max_retries = 2;
        gateway.register(config, transport.clone()).unwrap();

        let result = gateway.complete(&request("r1", "judge", "x")).await.unwrap();
        assert!(!result.is_ok());
        assert_eq!(result.attempt_count, 3);
        assert_eq!(transport.call_log().len(), 3);
    }

    #[tokio::test]
    async fn unknown_backend_is_an_error() {
        let (gateway, _) = mock_gateway(vec![any_rule("x")]);
        let err = gateway.complete(&request("r1", "nope", "x")).await.unwrap_err();
        assert!(matches!(err, GatewayError::UnknownBackend(name) if name == "nope"));
    }

    #[tokio::test]
    async fn no_matching_rule_fails_fatally() {
        let rule = MockRule::new(MatchKey::parse("contains:very specific").unwrap(), "hit");
        let (gateway, _) = mock_gateway(vec![rule]);
        let result = gateway.complete(&request("r1", "judge", "unrelated")).await.unwrap();
        assert!(!result.is_ok());
        assert_eq!(result.attempt_count, 1);
        assert!(result.error().unwrap().contains("no scripted response"));
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn batch_preserves_order_with_mixed_outcomes() {
        let rules = vec![
            MockRule::new(MatchKey::parse("contains:fail-me").unwrap(), "x").with_fail_count(u32::MAX),
            any_rule("fine"),
        ];
        let transport = Arc::new(MockTransport::from_rules(rules));
        let mut gateway = Gateway::new();
        let mut config = BackendConfig::mock("judge", PathBuf::new());
        config.max_retries = 0;
        gateway.register(config, transport.clone()).unwrap();

        let requests: Vec<CompletionRequest> = (0..10)
            .map(|i| {
                let text = if i % 3 == 0 { format!("fail-me {i}") } else { format!("ok {i}") };
                request(&format!("r{i}"), "judge", &text)
            })
            .collect();
        let results = gateway.complete_batch(&requests, 4).await.unwrap();
        assert_eq!(results.len(), 10);
        for (i, result) in results.iter().enumerate() {
            assert_eq!(result.request_id, format!("r{i}"));
            assert_eq!(result.is_ok(), i % 3 != 0);
        }
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn batch_sequential_when_max_in_flight_is_one() {
        let mut rule = any_rule("ok");
        rule.delay_ms = 2;
        let transport = Arc::new(MockTransport::from_rules(vec![rule]));
        let mut gateway = Gateway::new();
        gateway
            .register(BackendConfig::mock("judge", PathBuf::new()), transport.clone())
            .unwrap();

        let requests: Vec<CompletionRequest> =
            (0..10).map(|i| request(&format!("r{i}"), "judge", "x")).collect();
        gateway.complete_batch(&requests, 1).await.unwrap();
        assert_eq!(transport.high_water(), 1);
        assert_eq!(transport.call_log().len(), 10);
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 8)]
    async fn batch_respects_in_flight_cap() {
        let mut rule = any_rule("ok");
        rule.delay_ms = 5;
        let transport = Arc::new(MockTransport::from_rules(vec![rule]));
        let mut gateway = Gateway::new();
        gateway
            .register(BackendConfig::mock("judge", PathBuf::new()), transport.clone())
            .unwrap();

        let requests: Vec<CompletionRequest> =
            (0..12).map(|i| request(&format!("r{i}"), "judge", "x")).collect();
        gateway.complete_batch(&requests, 4).await.unwrap();
        assert!(transport.high_water() <= 4, "high water {}", transport.high_water());
    }

    #[tokio::test]
    async fn zero_max_in_flight_rejected() {
        let (gateway, _) = mock_gateway(vec![any_rule("x")]);
        assert!(matches!(
            gateway.complete_batch(&[], 0).await,
            Err(GatewayError::InvalidMaxInFlight)
        ));
    }
}
