//! Chat-completions HTTP transport.
//!
//! Speaks the de-facto chat shape: POST `{base_url}{path}` with a JSON body
//! carrying `model`, `messages`, `temperature`, `max_tokens` and an optional
//! `seed`. The rendered prompt travels as one user message; when the backend
//! is configured with `split_system_line`, a leading "You are ..." identity
//! line moves into a system message instead.

use serde::{Deserialize, Serialize};

use super::{BackendConfig, BackendKind, CompletionRequest, Transport, TransportError};

#[derive(Debug, Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct WireChoiceMessage {
    content: String,
}

pub struct HttpTransport {
    client: reqwest::Client,
}

impl HttpTransport {
    pub fn new() -> Self {
        Self {
            client: reqwest::Client::new(),
        }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

fn retryable(message: String) -> TransportError {
    TransportError::Retryable { message }
}

fn fatal(message: String) -> TransportError {
    TransportError::Fatal { message }
}

/// Splits a leading "You are ..." line off as the system message.
fn split_messages(text: &str, split_system_line: bool) -> Vec<WireMessage<'_>> {
    if split_system_line {
        if let Some((first, rest)) = text.split_once('\n') {
            if first.starts_with("You are ") {
                return vec![
                    WireMessage {
                        role: "system",
                        content: first,
                    },
                    WireMessage {
                        role: "user",
                        content: rest.trim_start_matches('\n'),
                    },
                ];
            }
        }
    }
    vec![WireMessage {
        role: "user",
        content: text,
    }]
}

#[async_trait::async_trait]
impl Transport for HttpTransport {
    async fn send(
        &self,
        config: &BackendConfig,
        request: &CompletionRequest,
    ) -> Result<String, TransportError> {
        let BackendKind::Http {
            base_url,
            path,
            model,
            api_key_env,
            split_system_line,
        } = &config.kind
        else {
            return Err(fatal(format!(
                "backend `{}` is not an HTTP backend",
                config.name
            )));
        };

        let url = format!("{}{}", base_url.trim_end_matches('/'), path);
        let body = WireRequest {
            model,
            messages: split_messages(&request.prompt.text, *split_system_line),
            temperature: request.temperature_override.unwrap_or(config.temperature),
            max_tokens: config.max_tokens,
            seed: request.seed,
        };

        let mut builder = self
            .client
            .post(&url)
            .timeout(config.timeout)
            .header("Content-Type", "application/json");
        if let Some(var) = api_key_env {
            let key = std::env::var(var).map_err(|_| {
                fatal(format!(
                    "environment variable `{var}` for backend `{}` is not set",
                    config.name
                ))
            })?;
            builder = builder.header("Authorization", format!("Bearer {key}"));
        }

        let response = builder.json(&body).send().await.map_err(|e| {
            retryable(format!("request to {url} failed: {e}"))
        })?;

        let status = response.status();
        if !status.is_success() {
            let message = format!("{url} returned {status}");
            // 408/429 and server errors are worth retrying; other client
            // errors will not get better.
            return if status.is_server_error()
                || status == reqwest::StatusCode::REQUEST_TIMEOUT
                || status == reqwest::StatusCode::TOO_MANY_REQUESTS
            {
                Err(retryable(message))
            } else {
                Err(fatal(message))
            };
        }

        let parsed: WireResponse = response
            .json()
            .await
            .map_err(|e| fatal(format!("malformed completion response from {url}: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|choice| choice.message.content)
            .ok_or_else(|| fatal(format!("completion response from {url} has no choices")))
    }

    async fn health_check(&self, config: &BackendConfig) -> Result<(), TransportError> {
        let BackendKind::Http { base_url, .. } = &config.kind else {
            return Ok(());
        };
        // Any HTTP answer counts as reachable; only connection-level
        // failures are reported.
        self.client
            .get(base_url)
            .timeout(std::time::Duration::from_secs(5))
            .send()
            .await
            .map(|_| ())
            .map_err(|e| retryable(format!("health check for `{}` failed: {e}", config.name)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_line_splits_into_system_message() {
        let text = "You are a psychiatrist.\n\nDo the task.";
        let messages = split_messages(text, true);
        assert_eq!(messages.len(), 2);
        assert_eq!(messages[0].role, "system");
        assert_eq!(messages[0].content, "You are a psychiatrist.");
        assert_eq!(messages[1].role, "user");
        assert_eq!(messages[1].content, "Do the task.");
    }

    #[test]
    fn no_split_without_flag_or_identity_line() {
        let text = "You are a psychiatrist.\n\nDo the task.";
        assert_eq!(split_messages(text, false).len(), 1);
        let plain = "Just instructions.\nMore.";
        assert_eq!(split_messages(plain, true).len(), 1);
    }
}
