//! Candidate summary generation, consistency scoring and selection.
//!
//! Each user's posts plus their grounded highlights feed the summarization
//! prompt; every configured summarizer backend produces `k` candidates with
//! distinct derived seeds. An evaluator backend scores each candidate 1-10
//! and the highest score wins, with a deterministic tie-break.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{RiskLabel, UserTimeline};
use crate::extract::HighlightSet;
use crate::gateway::{CompletionRequest, Gateway, GatewayError};
use crate::prompt::{
    EvaluatorContext, PostWithHighlights, PromptError, SummarizationContext, TemplateSet,
};

/// Appended when a candidate exceeds the letter limit.
pub const SHORTEN_REMINDER_PREFIX: &str = "\n\nYour previous summary was too long. Rewrite the summarized evidence so it is less than ";
/// Appended when the evaluator's answer carries no readable score.
pub const SCORE_FORMAT_REMINDER: &str = "\n\nYour previous answer did not contain a readable score. Answer again and keep the format: The score is [N]\n\nScores:\n";

/// One generated summary candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCandidate {
    pub candidate_id: String,
    pub user_id: String,
    pub text: String,
    pub summarizer: String,
    pub seed: u64,
    /// Unicode character count of `text`, spaces included.
    pub letter_count: usize,
    /// Still at or over the limit after the one shortening re-prompt.
    pub over_length: bool,
    pub shorten_reprompted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Parsed,
    /// The evaluator answer was unusable twice; the score fell back to 1.
    Defaulted,
}

/// A candidate with its evaluator verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSummary {
    pub candidate: SummaryCandidate,
    pub score: u8,
    pub parse_status: ParseStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluator_raw: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluator_error: Option<String>,
}

/// The per-user selection outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarySelection {
    pub user_id: String,
    pub winner: ScoredSummary,
    pub all_scored: Vec<ScoredSummary>,
    pub tie_break_applied: bool,
}

/// A candidate slot that produced no text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFailure {
    pub user_id: String,
    pub summarizer: String,
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SummarizeConfig {
    pub summarizers: Vec<String>,
    pub evaluator: String,
    /// Candidates per summarizer backend.
    pub candidates_per_backend: usize,
    pub letter_limit: usize,
    pub master_seed: u64,
}

#[derive(Debug, Error)]
pub enum SummarizeError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("cannot select from an empty candidate pool")]
    EmptyPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ScoreParseError {
    #[error("no score pattern found")]
    NoMatch,
    #[error("score {0} outside [1,10]")]
    OutOfRange(u64),
}

/// Derives a per-candidate seed from the run seed. Values stay in u32 range
/// so they survive JSON round trips unmangled.
pub fn derive_seed(master_seed: u64, user_id: &str, backend: &str, index: usize) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(user_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(backend.as_bytes());
    hasher.update([0x1f]);
    hasher.update((index as u64).to_le_bytes());
    let digest = hasher.finalize();
    u64::from(u32::from_le_bytes([digest[0], digest[1], digest[2], digest[3]]))
}

/// Parses the first `The score is [N]` occurrence (case-insensitive,
/// brackets optional). A first match outside [1,10] is a failure, not a
/// reason to scan further.
pub fn parse_score(raw: &str) -> Result<u8, ScoreParseError> {
    static PATTERN: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    let re = PATTERN.get_or_init(|| {
        regex::Regex::new(r"(?i)the\s+score\s+is\s+\[?(\d+)\]?").expect("valid regex")
    });
    let captures = re.captures(raw).ok_or(ScoreParseError::NoMatch)?;
    let n: u64 = captures[1].parse().map_err(|_| ScoreParseError::NoMatch)?;
    if (1..=10).contains(&n) {
        Ok(n as u8)
    } else {
        Err(ScoreParseError::OutOfRange(n))
    }
}

fn make_candidate(
    user_id: &str,
    summarizer: &str,
    index: usize,
    seed: u64,
    text: String,
    limit: usize,
    shorten_reprompted: bool,
) -> SummaryCandidate {
    let letter_count = text.chars().count();
    SummaryCandidate {
        candidate_id: format!("{user_id}/{summarizer}/{index}"),
        user_id: user_id.to_string(),
        text,
        summarizer: summarizer.to_string(),
        seed,
        letter_count,
        over_length: letter_count >= limit,
        shorten_reprompted,
    }
}

/// Builds the prompt post list: timeline order, grounded highlights only.
pub fn posts_with_highlights(
    timeline: &UserTimeline,
    highlight_sets: &[HighlightSet],
) -> Vec<PostWithHighlights> {
    timeline
        .posts
        .iter()
        .map(|post| {
            let highlights = highlight_sets
                .iter()
                .find(|set| set.post_id == post.post_id)
                .map(|set| set.grounded_phrases())
                .unwrap_or_default();
            PostWithHighlights {
                text: post.text.clone(),
                highlights,
            }
        })
        .collect()
}

/// Generates `k` candidates per summarizer backend for one user.
///
/// A candidate at or over the letter limit is re-prompted once with a
/// shortening instruction; if the rewrite is still too long the original
/// text is kept and flagged `over_length`. Failed candidate slots are
/// returned separately so accounting stays intact.
pub async fn generate_candidates(
    gateway: &Gateway,
    templates: &TemplateSet,
    timeline: &UserTimeline,
    highlight_sets: &[HighlightSet],
    cfg: &SummarizeConfig,
) -> Result<(Vec<SummaryCandidate>, Vec<CandidateFailure>), SummarizeError> {
    let ctx = SummarizationContext {
        label: timeline.label,
        posts_and_highlights: posts_with_highlights(timeline, highlight_sets),
        length_limit_letters: cfg.letter_limit,
    };
    let prompt = templates.render_summarization(&ctx)?;

    let mut candidates = Vec::new();
    let mut failures = Vec::new();
    for summarizer in &cfg.summarizers {
        for index in 0..cfg.candidates_per_backend {
            let seed = derive_seed(cfg.master_seed, &timeline.user_id, summarizer, index);
            let request = CompletionRequest {
                request_id: format!("sum:{}:{summarizer}:{index}", timeline.user_id),
                backend: summarizer.clone(),
                prompt: prompt.clone(),
                seed: Some(seed),
                temperature_override: None,
            };
            let result = gateway.complete(&request).await?;
            let Some(text) = result.raw_text() else {
                failures.push(CandidateFailure {
                    user_id: timeline.user_id.clone(),
                    summarizer: summarizer.clone(),
                    index,
                    error: result.error().unwrap_or("unknown failure").to_string(),
                });
                continue;
            };
            let mut candidate = make_candidate(
                &timeline.user_id,
                summarizer,
                index,
                seed,
                text.to_string(),
                cfg.letter_limit,
                false,
            );

            if candidate.over_length {
                let mut shorten_prompt = prompt.clone();
                shorten_prompt.text.push_str(&format!(
                    "{SHORTEN_REMINDER_PREFIX}{} letters.\n\nSummarized evidence explain:\n",
                    cfg.letter_limit
                ));
                let retry = CompletionRequest {
                    request_id: format!("sum-short:{}:{summarizer}:{index}", timeline.user_id),
                    backend: summarizer.clone(),
                    prompt: shorten_prompt,
                    seed: Some(seed),
                    temperature_override: None,
                };
                let retry_result = gateway.complete(&retry).await?;
                if let Some(short_text) = retry_result.raw_text() {
                    if short_text.chars().count() < cfg.letter_limit {
                        candidate = make_candidate(
                            &timeline.user_id,
                            summarizer,
                            index,
                            seed,
                            short_text.to_string(),
                            cfg.letter_limit,
                            true,
                        );
                    } else {
                        candidate.shorten_reprompted = true;
                    }
                } else {
                    candidate.shorten_reprompted = true;
                }
            }
            candidates.push(candidate);
        }
    }
    Ok((candidates, failures))
}

/// Scores one candidate with the evaluator backend.
///
/// An unparseable answer triggers one re-ask with a format reminder; a
/// second failure (or a hard backend failure) defaults the score to 1, the
/// most conservative verdict, with `parse_status` marking it as such.
pub async fn score_candidate(
    gateway: &Gateway,
    templates: &TemplateSet,
    candidate: &SummaryCandidate,
    posts: &[String],
    label: RiskLabel,
    cfg: &SummarizeConfig,
) -> Result<ScoredSummary, SummarizeError> {
    let ctx = EvaluatorContext {
        label,
        posts: posts.to_vec(),
        summary: candidate.text.clone(),
    };
    let prompt = templates.render_evaluator(&ctx)?;
    let request = CompletionRequest {
        request_id: format!("score:{}", candidate.candidate_id),
        backend: cfg.evaluator.clone(),
        prompt: prompt.clone(),
        seed: None,
        temperature_override: Some(0.0),
    };
    let result = gateway.complete(&request).await?;

    let mut evaluator_error = None;
    let mut raw = match result.raw_text() {
        Some(text) => Some(text.to_string()),
        None => {
            evaluator_error = result.error().map(str::to_string);
            None
        }
    };

    if let Some(text) = &raw {
        if let Ok(score) = parse_score(text) {
            return Ok(ScoredSummary {
                candidate: candidate.clone(),
                score,
                parse_status: ParseStatus::Parsed,
                evaluator_raw: raw,
                evaluator_error: None,
            });
        }
    }

    if evaluator_error.is_none() {
        // Parse failed on real output: one re-ask with the format reminder.
        let mut retry_prompt = prompt;
        retry_prompt.text.push_str(SCORE_FORMAT_REMINDER);
        let retry = CompletionRequest {
            request_id: format!("score-retry:{}", candidate.candidate_id),
            backend: cfg.evaluator.clone(),
            prompt: retry_prompt,
            seed: None,
            temperature_override: Some(0.0),
        };
        let retry_result = gateway.complete(&retry).await?;
        match retry_result.raw_text() {
            Some(text) => {
                if let Ok(score) = parse_score(text) {
                    return Ok(ScoredSummary {
                        candidate: candidate.clone(),
                        score,
                        parse_status: ParseStatus::Parsed,
                        evaluator_raw: Some(text.to_string()),
                        evaluator_error: None,
                    });
                }
                raw = Some(text.to_string());
            }
            None => evaluator_error = retry_result.error().map(str::to_string),
        }
    }

    Ok(ScoredSummary {
        candidate: candidate.clone(),
        score: 1,
        parse_status: ParseStatus::Defaulted,
        evaluator_raw: raw,
        evaluator_error,
    })
}

/// Picks the highest-scoring candidate; ties break by summarizer name then
/// seed, both ascending.
pub fn select_best(
    user_id: &str,
    scored: Vec<ScoredSummary>,
) -> Result<SummarySelection, SummarizeError> {
    if scored.is_empty() {
        return Err(SummarizeError::EmptyPool);
    }
    let max_score = scored.iter().map(|s| s.score).max().expect("non-empty");
    let tied: Vec<&ScoredSummary> = scored.iter().filter(|s| s.score == max_score).collect();
    let winner = tied
        .iter()
        .min_by(|a, b| {
            a.candidate
                .summarizer
                .cmp(&b.candidate.summarizer)
                .then(a.candidate.seed.cmp(&b.candidate.seed))
        })
        .expect("non-empty")
        .to_owned()
        .clone();
    Ok(SummarySelection {
        user_id: user_id.to_string(),
        tie_break_applied: tied.len() >= 2,
        winner,
        all_scored: scored,
    })
}

/// Winner tally per summarizer backend across the run.
pub fn winner_counts(selections: &[SummarySelection]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for selection in selections {
        *counts
            .entry(selection.winner.candidate.summarizer.clone())
            .or_insert(0) += 1;
    }
    counts
}
