//! Highlight extraction: prompt a backend per post, parse the numbered
//! answer, and ground every phrase against the source text.
//!
//! Ungrounded phrases are kept and flagged rather than dropped; grounding
//! failures are a finding the evaluation cares about, not noise.

mod grounding;

pub use grounding::{
    edit_similarity, fuzzy_window_bounds, ground_phrase, normalize_ws, slice_chars, Grounding,
    GroundingStatus,
};

use serde::{Deserialize, Serialize};

use crate::corpus::Post;
use crate::gateway::{CompletionRequest, Gateway, GatewayError};
use crate::lexicon::{match_terms, terms_for_prompt, Lexicon, PromptTerm};
use crate::prompt::{ExtractionContext, FewShotExample, PromptError, TemplateSet};

/// Appended to the prompt when the first completion yields no parseable
/// numbered list.
pub const FORMAT_REMINDER: &str = "\n\nYour previous answer could not be parsed. Answer again using only a numbered list, one phrase per line, like:\n1. first phrase\n2. second phrase\n\nHighlights:\n";

/// One extracted phrase with its grounding against the post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    pub phrase: String,
    pub grounding: GroundingStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionStatus {
    Ok,
    ParseFailed,
    BackendFailed,
}

/// Where a highlight set came from, enough to re-render its exact prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionProvenance {
    pub template_version: String,
    pub backend: String,
    pub expert_identity: String,
    pub few_shot: bool,
    pub suicide_words: Vec<PromptTerm>,
    pub attempt_count: u32,
    pub reprompted: bool,
}

/// Extraction outcome for one post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightSet {
    pub post_id: String,
    pub status: ExtractionStatus,
    pub highlights: Vec<Highlight>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_completion: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub provenance: ExtractionProvenance,
}

impl HighlightSet {
    /// Phrases whose grounding succeeded, in model order.
    pub fn grounded_phrases(&self) -> Vec<String> {
        self.highlights
            .iter()
            .filter(|h| h.grounding != GroundingStatus::Ungrounded)
            .map(|h| h.phrase.clone())
            .collect()
    }
}

/// Pipeline-level extraction settings.
#[derive(Debug, Clone)]
pub struct ExtractConfig {
    pub backend: String,
    pub expert_identity: String,
    pub examples: Vec<FewShotExample>,
    pub fuzzy_threshold: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Pulls phrases out of numbered lines like `1. phrase` or `2) phrase`.
///
/// Surrounding quote and bracket pairs are stripped (repeatedly, while both
/// ends still pair up); preamble and epilogue lines are ignored; order is
/// line order. An empty result is valid.
pub fn parse_highlight_list(raw: &str) -> Vec<String> {
    let mut phrases = Vec::new();
    for line in raw.lines() {
        let trimmed = line.trim_start();
        let Some(rest) = strip_list_number(trimmed) else {
            continue;
        };
        let phrase = strip_wrapping_pairs(rest.trim());
        if !phrase.is_empty() {
            phrases.push(phrase.to_string());
        }
    }
    phrases
}

/// Strips a leading `<digits>.` or `<digits>)` marker, returning the rest.
fn strip_list_number(line: &str) -> Option<&str> {
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    Some(rest)
}

const WRAPPING_PAIRS: [(char, char); 5] = [
    ('"', '"'),
    ('\'', '\''),
    ('[', ']'),
    ('\u{201c}', '\u{201d}'),
    ('\u{2018}', '\u{2019}'),
];

fn strip_wrapping_pairs(mut s: &str) -> &str {
    loop {
        s = s.trim();
        let mut stripped = false;
        for (open, close) in WRAPPING_PAIRS {
            if s.len() >= open.len_utf8() + close.len_utf8()
                && s.starts_with(open)
                && s.ends_with(close)
            {
                s = &s[open.len_utf8()..s.len() - close.len_utf8()];
                stripped = true;
                break;
            }
        }
        if !stripped {
            return s;
        }
    }
}

/// Extracts and grounds highlights for one post.
///
/// The backend is asked once; if the completion parses to zero phrases it is
/// asked once more with a format reminder before the set is returned as
/// `parse_failed`. A backend failure is recorded in the set and the pipeline
/// moves on to other posts.
pub async fn extract_highlights(
    gateway: &Gateway,
    templates: &TemplateSet,
    post: &Post,
    lexicon: &Lexicon,
    cfg: &ExtractConfig,
) -> Result<HighlightSet, ExtractError> {
    let matches = match_terms(lexicon, &post.text);
    let suicide_words = terms_for_prompt(&matches);
    let ctx = ExtractionContext {
        expert_identity: cfg.expert_identity.clone(),
        examples: cfg.examples.clone(),
        label: post.label,
        post_text: post.text.clone(),
        suicide_words: suicide_words.clone(),
    };
    let prompt = templates.render_extraction(&ctx)?;

    let mut provenance = ExtractionProvenance {
        template_version: prompt.template_version.clone(),
        backend: cfg.backend.clone(),
        expert_identity: cfg.expert_identity.clone(),
        few_shot: !cfg.examples.is_empty(),
        suicide_words,
        attempt_count: 0,
        reprompted: false,
    };

    let request = CompletionRequest {
        request_id: format!("extract:{}", post.post_id),
        backend: cfg.backend.clone(),
        prompt: prompt.clone(),
        seed: None,
        temperature_override: Some(0.0),
    };
    let result = gateway.complete(&request).await?;
    provenance.attempt_count = result.attempt_count;

    let Some(raw) = result.raw_text() else {
        return Ok(HighlightSet {
            post_id: post.post_id.clone(),
            status: ExtractionStatus::BackendFailed,
            highlights: Vec::new(),
            raw_completion: None,
            error: result.error().map(str::to_string),
            provenance,
        });
    };
    let mut raw = raw.to_string();
    let mut phrases = parse_highlight_list(&raw);

    if phrases.is_empty() {
        provenance.reprompted = true;
        let mut retry_prompt = prompt.clone();
        retry_prompt.text.push_str(FORMAT_REMINDER);
        let retry = CompletionRequest {
            request_id: format!("extract-retry:{}", post.post_id),
            backend: cfg.backend.clone(),
            prompt: retry_prompt,
            seed: None,
            temperature_override: Some(0.0),
        };
        let retry_result = gateway.complete(&retry).await?;
        provenance.attempt_count += retry_result.attempt_count;
        if let Some(retry_raw) = retry_result.raw_text() {
            let retry_phrases = parse_highlight_list(retry_raw);
            if !retry_phrases.is_empty() {
                raw = retry_raw.to_string();
                phrases = retry_phrases;
            }
        }
    }

    let status = if phrases.is_empty() {
        ExtractionStatus::ParseFailed
    } else {
        ExtractionStatus::Ok
    };
    let highlights = phrases
        .into_iter()
        .map(|phrase| {
            let grounding = ground_phrase(&phrase, &post.text, cfg.fuzzy_threshold);
            Highlight {
                phrase,
                grounding: grounding.status,
                span: grounding.span,
                similarity: grounding.similarity,
            }
        })
        .collect();

    Ok(HighlightSet {
        post_id: post.post_id.clone(),
        status,
        highlights,
        raw_completion: Some(raw),
        error: None,
        provenance,
    })
}
