//! Offline evaluation: token-similarity P/R/F1 for highlights and
//! NLI-based sentence consistency for summaries.
//!
//! Both metrics delegate their model to a pluggable scorer: an HTTP endpoint
//! in real runs, deterministic stubs offline. The P/R/F1 computation mirrors
//! the greedy max-similarity token alignment of embedding-based scoring;
//! consistency is `1 - max contradiction` per predicted sentence, averaged.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("scorer endpoint error: {0}")]
    Endpoint(String),
    #[error("{0}")]
    EmptyInput(&'static str),
}

/// Produces a pairwise token similarity matrix in [0,1].
#[async_trait::async_trait]
pub trait TokenSimilarityScorer: Send + Sync {
    async fn similarity_matrix(
        &self,
        left: &[String],
        right: &[String],
    ) -> Result<Vec<Vec<f64>>, MetricsError>;

    async fn health_check(&self) -> Result<(), MetricsError> {
        Ok(())
    }

    fn describe(&self) -> String;
}

/// Gives the probability that `hypothesis` contradicts `premise`.
#[async_trait::async_trait]
pub trait NliScorer: Send + Sync {
    async fn contradiction_probability(
        &self,
        premise: &str,
        hypothesis: &str,
    ) -> Result<f64, MetricsError>;

    async fn health_check(&self) -> Result<(), MetricsError> {
        Ok(())
    }

    fn describe(&self) -> String;
}

/// Offline stub: tokens are similar iff equal.
pub struct ExactMatchScorer;

#[async_trait::async_trait]
impl TokenSimilarityScorer for ExactMatchScorer {
    async fn similarity_matrix(
        &self,
        left: &[String],
        right: &[String],
    ) -> Result<Vec<Vec<f64>>, MetricsError> {
        Ok(left
            .iter()
            .map(|a| right.iter().map(|b| f64::from(a == b)).collect())
            .collect())
    }

    fn describe(&self) -> String {
        "exact-match stub".to_string()
    }
}

/// Offline stub: fixed contradiction probability for every pair.
pub struct ConstantNli(pub f64);

#[async_trait::async_trait]
impl NliScorer for ConstantNli {
    async fn contradiction_probability(&self, _: &str, _: &str) -> Result<f64, MetricsError> {
        Ok(self.0)
    }

    fn describe(&self) -> String {
        format!("constant stub ({})", self.0)
    }
}

/// Offline stub with per-(premise, hypothesis) probabilities.
pub struct TableNli {
    table: HashMap<(String, String), f64>,
    pub default: f64,
}

impl TableNli {
    pub fn new(entries: impl IntoIterator<Item = ((String, String), f64)>, default: f64) -> Self {
        Self {
            table: entries.into_iter().collect(),
            default,
        }
    }
}

#[async_trait::async_trait]
impl NliScorer for TableNli {
    async fn contradiction_probability(
        &self,
        premise: &str,
        hypothesis: &str,
    ) -> Result<f64, MetricsError> {
        Ok(*self
            .table
            .get(&(premise.to_string(), hypothesis.to_string()))
            .unwrap_or(&self.default))
    }

    fn describe(&self) -> String {
        format!("table stub ({} pairs)", self.table.len())
    }
}

/// Embedding-similarity endpoint:
/// `POST {base}/similarity {"model","tokens_a","tokens_b"} -> {"matrix":[[..]]}`.
pub struct HttpEmbeddingScorer {
    client: reqwest::Client,
    base_url: String,
    model: String,
    api_key_env: Option<String>,
}

/// NLI endpoint:
/// `POST {base}/nli {"model","premise","hypothesis"} ->
///  {"entailment":..,"neutral":..,"contradiction":..}`.
pub struct HttpNliScorer {
    client: reqwest::Client,
    base_url: String,
    model: String,
    api_key_env: Option<String>,
}

fn bearer(
    builder: reqwest::RequestBuilder,
    api_key_env: &Option<String>,
) -> Result<reqwest::RequestBuilder, MetricsError> {
    match api_key_env {
        None => Ok(builder),
        Some(var) => {
            let key = std::env::var(var)
                .map_err(|_| MetricsError::Endpoint(format!("env var `{var}` not set")))?;
            Ok(builder.header("Authorization", format!("Bearer {key}")))
        }
    }
}

async fn probe(client: &reqwest::Client, base_url: &str) -> Result<(), MetricsError> {
    client
        .get(format!("{}/health", base_url.trim_end_matches('/')))
        .timeout(std::time::Duration::from_secs(5))
        .send()
        .await
        .map(|_| ())
        .map_err(|e| MetricsError::Endpoint(format!("health check failed: {e}")))
}

impl HttpEmbeddingScorer {
    pub fn new(base_url: &str, model: &str, api_key_env: Option<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key_env,
        }
    }
}

#[derive(Serialize)]
struct SimilarityRequest<'a> {
    model: &'a str,
    tokens_a: &'a [String],
    tokens_b: &'a [String],
}

#[derive(Deserialize)]
struct SimilarityResponse {
    matrix: Vec<Vec<f64>>,
}

#[async_trait::async_trait]
impl TokenSimilarityScorer for HttpEmbeddingScorer {
    async fn similarity_matrix(
        &self,
        left: &[String],
        right: &[String],
    ) -> Result<Vec<Vec<f64>>, MetricsError> {
        let builder = self.client.post(format!("{}/similarity", self.base_url));
        let response = bearer(builder, &self.api_key_env)?
            .json(&SimilarityRequest {
                model: &self.model,
                tokens_a: left,
                tokens_b: right,
            })
            .send()
            .await
            .map_err(|e| MetricsError::Endpoint(e.to_string()))?
            .error_for_status()
            .map_err(|e| MetricsError::Endpoint(e.to_string()))?;
        let parsed: SimilarityResponse = response
            .json()
            .await
            .map_err(|e| MetricsError::Endpoint(format!("malformed similarity response: {e}")))?;
        if parsed.matrix.len() != left.len()
            || parsed.matrix.iter().any(|row| row.len() != right.len())
        {
            return Err(MetricsError::Endpoint(
                "similarity matrix has wrong dimensions".to_string(),
            ));
        }
        Ok(parsed.matrix)
    }

    async fn health_check(&self) -> Result<(), MetricsError> {
        probe(&self.client, &self.base_url).await
    }

    fn describe(&self) -> String {
        format!("embedding endpoint {} ({})", self.base_url, self.model)
    }
}

impl HttpNliScorer {
    pub fn new(base_url: &str, model: &str, api_key_env: Option<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key_env,
        }
    }
}

#[derive(Serialize)]
struct NliRequest<'a> {
    model: &'a str,
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Deserialize)]
struct NliResponse {
    contradiction: f64,
}

#[async_trait::async_trait]
impl NliScorer for HttpNliScorer {
    async fn contradiction_probability(
        &self,
        premise: &str,
        hypothesis: &str,
    ) -> Result<f64, MetricsError> {
        let builder = self.client.post(format!("{}/nli", self.base_url));
        let response = bearer(builder, &self.api_key_env)?
            .json(&NliRequest {
                model: &self.model,
                premise,
                hypothesis,
            })
            .send()
            .await
            .map_err(|e| MetricsError::Endpoint(e.to_string()))?
            .error_for_status()
            .map_err(|e| MetricsError::Endpoint(e.to_string()))?;
        let parsed: NliResponse = response
            .json()
            .await
            .map_err(|e| MetricsError::Endpoint(format!("malformed NLI response: {e}")))?;
        if !(0.0..=1.0).contains(&parsed.contradiction) {
            return Err(MetricsError::Endpoint(format!(
                "contradiction probability {} outside [0,1]",
                parsed.contradiction
            )));
        }
        Ok(parsed.contradiction)
    }

    async fn health_check(&self) -> Result<(), MetricsError> {
        probe(&self.client, &self.base_url).await
    }

    fn describe(&self) -> String {
        format!("NLI endpoint {} ({})", self.base_url, self.model)
    }
}

/// Precision / recall / F1 triple, each in [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Whitespace tokens of the concatenated phrases.
pub fn tokenize(phrases: &[String]) -> Vec<String> {
    phrases
        .iter()
        .flat_map(|p| p.split_whitespace())
        .map(str::to_string)
        .collect()
}

/// Token-level similarity P/R/F1 via greedy max-similarity alignment.
///
/// Precision averages, over predicted tokens, the best similarity to any
/// gold token; recall is symmetric. When one side is empty the scores
/// degenerate: both empty is a perfect match, otherwise the empty side's
/// opposite score is 0. F1 is the harmonic mean, 0 when P+R = 0.
pub async fn highlight_prf(
    pred: &[String],
    gold: &[String],
    scorer: &dyn TokenSimilarityScorer,
) -> Result<Prf, MetricsError> {
    let pred_tokens = tokenize(pred);
    let gold_tokens = tokenize(gold);

    let (precision, recall) = match (pred_tokens.is_empty(), gold_tokens.is_empty()) {
        (true, true) => (1.0, 1.0),
        (true, false) => (0.0, 0.0),
        (false, true) => (0.0, 0.0),
        (false, false) => {
            let matrix = scorer.similarity_matrix(&pred_tokens, &gold_tokens).await?;
            let row_max_sum: f64 = matrix
                .iter()
                .map(|row| row.iter().copied().fold(0.0f64, f64::max))
                .sum();
            let col_max_sum: f64 = (0..gold_tokens.len())
                .map(|j| matrix.iter().map(|row| row[j]).fold(0.0f64, f64::max))
                .sum();
            (
                row_max_sum / pred_tokens.len() as f64,
                col_max_sum / gold_tokens.len() as f64,
            )
        }
    };

    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Prf {
        precision,
        recall,
        f1,
    })
}

/// Deterministic sentence splitter: a sentence ends at `.`, `?` or `!`
/// followed by whitespace or end of text. Abbreviations are not special-
/// cased; inputs here are model summaries, not legal prose.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        let terminal = matches!(chars[i], '.' | '?' | '!');
        let at_break = i + 1 == chars.len() || chars[i + 1].is_whitespace();
        if terminal && at_break {
            let sentence: String = chars[start..=i].iter().collect();
            let sentence = sentence.trim();
            if !sentence.is_empty() {
                sentences.push(sentence.to_string());
            }
            start = i + 1;
        }
    }
    let tail: String = chars[start..].iter().collect();
    let tail = tail.trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

/// Per-user sentence consistency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyEntry {
    pub sentence_scores: Vec<f64>,
    pub mean: f64,
}

/// Scores a summary against gold sentences.
///
/// Each predicted sentence is checked against every gold sentence (gold as
/// premise, prediction as hypothesis); its score is `1 - max contradiction`,
/// the most pessimistic reduction. The user score is the arithmetic mean
/// over predicted sentences.
pub async fn sentence_consistency(
    summary: &str,
    gold_sentences: &[String],
    nli: &dyn NliScorer,
) -> Result<ConsistencyEntry, MetricsError> {
    let predicted = split_sentences(summary);
    if predicted.is_empty() {
        return Err(MetricsError::EmptyInput("summary has no sentences"));
    }
    if gold_sentences.is_empty() {
        return Err(MetricsError::EmptyInput("gold summary has no sentences"));
    }

    let mut sentence_scores = Vec::with_capacity(predicted.len());
    for hypothesis in &predicted {
        let mut worst = 0.0f64;
        for premise in gold_sentences {
            let p = nli.contradiction_probability(premise, hypothesis).await?;
            worst = worst.max(p);
        }
        sentence_scores.push(1.0 - worst);
    }
    let mean = sentence_scores.iter().sum::<f64>() / sentence_scores.len() as f64;
    Ok(ConsistencyEntry {
        sentence_scores,
        mean,
    })
}
