//! Deterministic scripted backend for offline runs and tests.
//!
//! A script is a list of rules checked in order; the first match answers
//! the call. Rules match on the prompt's template id, substrings of the
//! prompt text, a sha-256 prefix of the prompt text, or the request seed.
//! The transport records a call log and a concurrency high-water mark so
//! tests can check scheduling behavior.

use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendConfig, CompletionRequest, Transport, TransportError};
use crate::prompt::TemplateId;

#[derive(Debug, Clone, PartialEq)]
enum Condition {
    Any,
    Template(TemplateId),
    Contains(String),
    HashPrefix(String),
    Seed(u64),
}

/// Conjunction of match conditions, parsed from forms like
/// `template:extraction&contains:u007&seed:3`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchKey {
    conditions: Vec<Condition>,
}

impl MatchKey {
    pub fn parse(spec: &str) -> Result<Self, String> {
        let mut conditions = Vec::new();
        for part in spec.split('&') {
            let part = part.trim();
            if part.is_empty() {
                return Err("empty condition in match key".to_string());
            }
            if part == "any" {
                conditions.push(Condition::Any);
                continue;
            }
            let (kind, value) = part
                .split_once(':')
                .ok_or_else(|| format!("condition `{part}` is not `kind:value`"))?;
            let condition = match kind {
                "template" => Condition::Template(match value {
                    "extraction" => TemplateId::Extraction,
                    "summarization" => TemplateId::Summarization,
                    "evaluator" => TemplateId::Evaluator,
                    other => return Err(format!("unknown template id `{other}`")),
                }),
                "contains" => Condition::Contains(value.to_string()),
                "hash" => Condition::HashPrefix(value.to_lowercase()),
                "seed" => Condition::Seed(
                    value
                        .parse()
                        .map_err(|_| format!("seed `{value}` is not an integer"))?,
                ),
                other => return Err(format!("unknown condition kind `{other}`")),
            };
            conditions.push(condition);
        }
        Ok(Self { conditions })
    }

    fn matches(&self, request: &CompletionRequest, prompt_hash: &str) -> bool {
        self.conditions.iter().all(|condition| match condition {
            Condition::Any => true,
            Condition::Template(id) => request.prompt.template_id == *id,
            Condition::Contains(needle) => request.prompt.text.contains(needle),
            Condition::HashPrefix(prefix) => prompt_hash.starts_with(prefix),
            Condition::Seed(seed) => request.seed == Some(*seed),
        })
    }
}

/// One scripted response.
#[derive(Debug, Clone)]
pub struct MockRule {
    pub matcher: MatchKey,
    pub response: String,
    /// The first `fail_count` calls matching this rule fail retryably.
    pub fail_count: u32,
    /// Artificial in-flight latency, for scheduling tests.
    pub delay_ms: u64,
}

impl MockRule {
    pub fn new(matcher: MatchKey, response: &str) -> Self {
        Self {
            matcher,
            response: response.to_string(),
            fail_count: 0,
            delay_ms: 0,
        }
    }

    pub fn with_fail_count(mut self, fail_count: u32) -> Self {
        self.fail_count = fail_count;
        self
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ScriptRecord {
    #[serde(rename = "match")]
    match_key: String,
    response: String,
    #[serde(default)]
    fail_count: u32,
    #[serde(default)]
    delay_ms: u64,
}

/// One observed call, in completion order.
#[derive(Debug, Clone)]
pub struct CallRecord {
    pub request_id: String,
    pub template_id: TemplateId,
    pub prompt_sha256: String,
    pub seed: Option<u64>,
    pub matched_rule: Option<usize>,
    pub failed: bool,
}

struct RuleState {
    rule: MockRule,
    remaining_failures: AtomicU32,
}

pub struct MockTransport {
    rules: Vec<RuleState>,
    log: Mutex<Vec<CallRecord>>,
    in_flight: AtomicUsize,
    high_water: AtomicUsize,
}

impl MockTransport {
    pub fn from_rules(rules: Vec<MockRule>) -> Self {
        let rules = rules
            .into_iter()
            .map(|rule| RuleState {
                remaining_failures: AtomicU32::new(rule.fail_count),
                rule,
            })
            .collect();
        Self {
            rules,
            log: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            high_water: AtomicUsize::new(0),
        }
    }

    /// Loads a line-delimited script: one JSON record per line with fields
    /// `match`, `response` and optional `fail_count` / `delay_ms`.
    pub fn from_script_file(path: &Path) -> Result<Self, String> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_script_str(&content)
    }

    pub fn from_script_str(content: &str) -> Result<Self, String> {
        let mut rules = Vec::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ScriptRecord = serde_json::from_str(line)
                .map_err(|e| format!("script line {}: {e}", idx + 1))?;
            let matcher = MatchKey::parse(&record.match_key)
                .map_err(|e| format!("script line {}: {e}", idx + 1))?;
            rules.push(MockRule {
                matcher,
                response: record.response,
                fail_count: record.fail_count,
                delay_ms: record.delay_ms,
            });
        }
        if rules.is_empty() {
            return Err("mock script has no rules".to_string());
        }
        Ok(Self::from_rules(rules))
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().expect("mock log lock").clone()
    }

    /// Maximum number of calls ever simultaneously in flight.
    pub fn high_water(&self) -> usize {
        self.high_water.load(Ordering::SeqCst)
    }
}

pub fn prompt_sha256(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct InFlightGuard<'a> {
    transport: &'a MockTransport,
}

impl<'a> InFlightGuard<'a> {
    fn enter(transport: &'a MockTransport) -> Self {
        let now = transport.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        transport.high_water.fetch_max(now, Ordering::SeqCst);
        Self { transport }
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        self.transport.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

#[async_trait::async_trait]
impl Transport for MockTransport {
    async fn send(
        &self,
        _config: &BackendConfig,
        request: &CompletionRequest,
    ) -> Result<String, TransportError> {
        let guard = InFlightGuard::enter(self);
        let hash = prompt_sha256(&request.prompt.text);
        let matched = self
            .rules
            .iter()
            .position(|state| state.rule.matcher.matches(request, &hash));

        let mut record = CallRecord {
            request_id: request.request_id.clone(),
            template_id: request.prompt.template_id,
            prompt_sha256: hash,
            seed: request.seed,
            matched_rule: matched,
            failed: false,
        };

        let outcome = match matched {
            None => {
                record.failed = true;
                Err(TransportError::Fatal {
                    message: format!(
                        "no scripted response for request `{}` ({})",
                        request.request_id, request.prompt.template_id
                    ),
                })
            }
            Some(idx) => {
                let state = &self.rules[idx];
                if state.rule.delay_ms > 0 {
                    tokio::time::sleep(std::time::Duration::from_millis(state.rule.delay_ms)).await;
                }
                let should_fail = state
                    .remaining_failures
                    .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                    .is_ok();
                if should_fail {
                    record.failed = true;
                    Err(TransportError::Retryable {
                        message: format!("scripted failure from rule {idx}"),
                    })
                } else {
                    Ok(state.rule.response.clone())
                }
            }
        };

        self.log.lock().expect("mock log lock").push(record);
        drop(guard);
        outcome
    }

    async fn health_check(&self, _config: &BackendConfig) -> Result<(), TransportError> {
        Ok(())
    }
}
