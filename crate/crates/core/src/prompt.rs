//! Prompt template assets and slot rendering.
//!
//! The three templates (extraction, summarization, evaluator) live as text
//! assets with `{{slot}}` markers. Rendering is single-pass: a slot value
//! that itself contains marker syntax is emitted literally, never
//! re-substituted. The v1 assets are embedded in the binary; a run can point
//! at an alternative template directory instead.
//!
//! The template texts intentionally preserve their source's typographical
//! quirks (e.g. "that haves the suicide-related words"); fixing them would
//! silently change every rendered prompt, so any such edit must go through
//! a template version bump and fresh golden files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::RiskLabel;
use crate::lexicon::PromptTerm;

/// Marker rendered into the extraction prompt when no dictionary terms hit.
pub const NO_TERMS_MARKER: &str = "(none found)";
/// Marker rendered for a post that contributed no grounded highlights.
pub const NO_EVIDENCE_MARKER: &str = "(no extracted evidence)";
/// Version label of the embedded template assets.
pub const BUILTIN_TEMPLATE_VERSION: &str = "v1";

/// Which of the three templates a rendered prompt came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateId {
    Extraction,
    Summarization,
    Evaluator,
}

impl TemplateId {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Extraction => "extraction",
            Self::Summarization => "summarization",
            Self::Evaluator => "evaluator",
        }
    }

    fn file_name(&self) -> &'static str {
        match self {
            Self::Extraction => "extraction.txt",
            Self::Summarization => "summarization.txt",
            Self::Evaluator => "evaluator.txt",
        }
    }

    /// Slot names the template must declare, and no others.
    pub fn expected_slots(&self) -> BTreeSet<&'static str> {
        match self {
            Self::Extraction => ["expert_identity", "examples_block", "label", "post", "suicide_words"]
                .into_iter()
                .collect(),
            Self::Summarization => ["label", "posts_and_highlights", "letter_limit"]
                .into_iter()
                .collect(),
            Self::Evaluator => ["label", "posts", "summary"].into_iter().collect(),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {template_id} has an unresolved slot `{name}`")]
    UnresolvedSlot { template_id: TemplateId, name: String },
    #[error("template {template_id} is malformed: {detail}")]
    MalformedTemplate {
        template_id: TemplateId,
        detail: String,
    },
    #[error("invalid prompt context: {0}")]
    InvalidContext(String),
    #[error("failed to read template file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// A demonstration triple embedded in the extraction prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub label: RiskLabel,
    pub post_text: String,
    pub highlights: Vec<String>,
}

/// Everything the extraction template needs.
#[derive(Debug, Clone)]
pub struct ExtractionContext {
    pub expert_identity: String,
    /// Empty means zero-shot: the examples block is omitted entirely.
    pub examples: Vec<FewShotExample>,
    pub label: RiskLabel,
    pub post_text: String,
    pub suicide_words: Vec<PromptTerm>,
}

/// One post plus the grounded highlights feeding the summarization prompt.
#[derive(Debug, Clone)]
pub struct PostWithHighlights {
    pub text: String,
    pub highlights: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SummarizationContext {
    pub label: RiskLabel,
    pub posts_and_highlights: Vec<PostWithHighlights>,
    pub length_limit_letters: usize,
}

#[derive(Debug, Clone)]
pub struct EvaluatorContext {
    pub label: RiskLabel,
    pub posts: Vec<String>,
    pub summary: String,
}

/// The exact text sent to a backend, with template provenance attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub template_id: TemplateId,
    pub template_version: String,
}

/// The three template texts under one version label.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    version: String,
    extraction: String,
    summarization: String,
    evaluator: String,
}

impl TemplateSet {
    /// The embedded v1 assets.
    pub fn builtin() -> Self {
        Self {
            version: BUILTIN_TEMPLATE_VERSION.to_string(),
            extraction: include_str!("../templates/v1/extraction.txt").to_string(),
            summarization: include_str!("../templates/v1/summarization.txt").to_string(),
            evaluator: include_str!("../templates/v1/evaluator.txt").to_string(),
        }
    }

    /// Loads `extraction.txt`, `summarization.txt` and `evaluator.txt` from a
    /// directory. The version label is the directory's final path component.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |id: TemplateId| -> Result<String, PromptError> {
            let path = dir.join(id.file_name());
            std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        let version = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".to_string());
        Ok(Self {
            version,
            extraction: read(TemplateId::Extraction)?,
            summarization: read(TemplateId::Summarization)?,
            evaluator: read(TemplateId::Evaluator)?,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn text(&self, id: TemplateId) -> &str {
        match id {
            TemplateId::Extraction => &self.extraction,
            TemplateId::Summarization => &self.summarization,
            TemplateId::Evaluator => &self.evaluator,
        }
    }

    /// Checks that each template declares exactly its expected slots.
    pub fn check_slots(&self) -> Result<(), PromptError> {
        for id in [
            TemplateId::Extraction,
            TemplateId::Summarization,
            TemplateId::Evaluator,
        ] {
            let found = slot_names(self.text(id), id)?;
            let expected: BTreeSet<String> = id
                .expected_slots()
                .into_iter()
                .map(str::to_string)
                .collect();
            if found != expected {
                return Err(PromptError::MalformedTemplate {
                    template_id: id,
                    detail: format!("slots {found:?} do not match expected {expected:?}"),
                });
            }
        }
        Ok(())
    }

    pub fn render_extraction(&self, ctx: &ExtractionContext) -> Result<RenderedPrompt, PromptError> {
        if ctx.expert_identity.trim().is_empty() {
            return Err(PromptError::InvalidContext(
                "expert_identity must be non-empty".to_string(),
            ));
        }
        for example in &ctx.examples {
            if example.highlights.is_empty()
                || example.highlights.iter().any(|h| h.trim().is_empty())
            {
                return Err(PromptError::InvalidContext(
                    "few-shot example highlights must be non-empty".to_string(),
                ));
            }
        }
        let mut slots = BTreeMap::new();
        slots.insert("expert_identity", ctx.expert_identity.clone());
        slots.insert("examples_block", examples_block(&ctx.examples));
        slots.insert("label", ctx.label.display_name().to_string());
        slots.insert("post", ctx.post_text.clone());
        slots.insert("suicide_words", suicide_words_list(&ctx.suicide_words));
        self.render(TemplateId::Extraction, &slots)
    }

    pub fn render_summarization(
        &self,
        ctx: &SummarizationContext,
    ) -> Result<RenderedPrompt, PromptError> {
        if ctx.posts_and_highlights.is_empty() {
            return Err(PromptError::InvalidContext(
                "summarization requires at least one post".to_string(),
            ));
        }
        if ctx.length_limit_letters == 0 {
            return Err(PromptError::InvalidContext(
                "length_limit_letters must be positive".to_string(),
            ));
        }
        let mut slots = BTreeMap::new();
        slots.insert("label", ctx.label.display_name().to_string());
        slots.insert(
            "posts_and_highlights",
            posts_and_highlights_block(&ctx.posts_and_highlights),
        );
        slots.insert("letter_limit", ctx.length_limit_letters.to_string());
        self.render(TemplateId::Summarization, &slots)
    }

    pub fn render_evaluator(&self, ctx: &EvaluatorContext) -> Result<RenderedPrompt, PromptError> {
        if ctx.summary.trim().is_empty() {
            return Err(PromptError::InvalidContext(
                "evaluator summary must be non-empty".to_string(),
            ));
        }
        if ctx.posts.is_empty() {
            return Err(PromptError::InvalidContext(
                "evaluator requires at least one post".to_string(),
            ));
        }
        let mut slots = BTreeMap::new();
        slots.insert("label", ctx.label.display_name().to_string());
        slots.insert("posts", posts_block(&ctx.posts));
        slots.insert("summary", ctx.summary.clone());
        self.render(TemplateId::Evaluator, &slots)
    }

    fn render(
        &self,
        id: TemplateId,
        slots: &BTreeMap<&str, String>,
    ) -> Result<RenderedPrompt, PromptError> {
        let text = render_slots(self.text(id), id, slots)?;
        Ok(RenderedPrompt {
            text,
            template_id: id,
            template_version: self.version.clone(),
        })
    }
}

/// Single-pass `{{slot}}` substitution. Values are emitted verbatim and
/// never rescanned, so marker syntax inside a value cannot trigger a second
/// substitution.
fn render_slots(
    template: &str,
    id: TemplateId,
    slots: &BTreeMap<&str, String>,
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or_else(|| PromptError::MalformedTemplate {
            template_id: id,
            detail: "unterminated `{{` marker".to_string(),
        })?;
        let name = &after[..end];
        let value = slots
            .get(name)
            .ok_or_else(|| PromptError::UnresolvedSlot {
                template_id: id,
                name: name.to_string(),
            })?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Slot names declared by a template.
pub fn slot_names(template: &str, id: TemplateId) -> Result<BTreeSet<String>, PromptError> {
    let mut names = BTreeSet::new();
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or_else(|| PromptError::MalformedTemplate {
            template_id: id,
            detail: "unterminated `{{` marker".to_string(),
        })?;
        names.insert(after[..end].to_string());
        rest = &after[end + 2..];
    }
    Ok(names)
}

/// Comma-separated, level-annotated word list, e.g.
/// `cutting (severe), pain (moderate)`.
fn suicide_words_list(terms: &[PromptTerm]) -> String {
    if terms.is_empty() {
        return NO_TERMS_MARKER.to_string();
    }
    terms
        .iter()
        .map(|t| format!("{} ({})", t.term, t.level.as_str()))
        .collect::<Vec<_>>()
        .join(", ")
}

fn examples_block(examples: &[FewShotExample]) -> String {
    if examples.is_empty() {
        return String::new();
    }
    let stanzas: Vec<String> = examples
        .iter()
        .map(|ex| {
            let mut s = format!(
                "Suicide Risk Level: {}\n\nPost: {}\n\nHighlights:",
                ex.label.display_name(),
                ex.post_text
            );
            for (i, highlight) in ex.highlights.iter().enumerate() {
                s.push_str(&format!("\n{}. {}", i + 1, highlight));
            }
            s
        })
        .collect();
    format!("<Examples>\n\n{}\n\n", stanzas.join("\n\n"))
}

fn posts_and_highlights_block(posts: &[PostWithHighlights]) -> String {
    let stanzas: Vec<String> = posts
        .iter()
        .enumerate()
        .map(|(i, post)| {
            let mut s = format!("Post {}: {}\nExtracted evidence:", i + 1, post.text);
            if post.highlights.is_empty() {
                s.push(' ');
                s.push_str(NO_EVIDENCE_MARKER);
            } else {
                for (j, highlight) in post.highlights.iter().enumerate() {
                    s.push_str(&format!("\n{}. {}", j + 1, highlight));
                }
            }
            s
        })
        .collect();
    stanzas.join("\n\n")
}

fn posts_block(posts: &[String]) -> String {
    posts
        .iter()
        .enumerate()
        .map(|(i, text)| format!("Post {}: {}", i + 1, text))
        .collect::<Vec<_>>()
        .join("\n\n")
}
