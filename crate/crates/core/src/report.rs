//! Aggregate run reports: extraction quality, summarization accounting and
//! the gold-data metrics when gold files are provided.
//!
//! The report is emitted twice from one structure: a machine-readable JSON
//! record and a plain-text table. Sections whose gold data is missing are
//! omitted with an explicit notice instead of silently disappearing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::extract::{GroundingStatus, HighlightSet};
use crate::metrics::{
    highlight_prf, sentence_consistency, split_sentences, MetricsError, NliScorer, Prf,
    TokenSimilarityScorer,
};
use crate::summarize::{ParseStatus, SummarySelection};

/// Whether a run used few-shot examples in the extraction prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    ZeroShot,
    FewShot,
}

impl RunMode {
    pub fn label(&self) -> &'static str {
        match self {
            Self::ZeroShot => "zero-shot",
            Self::FewShot => "few-shot",
        }
    }
}

/// Gold annotations, keyed by post and user ids.
#[derive(Debug, Clone, Default)]
pub struct GoldData {
    pub highlights: BTreeMap<String, Vec<String>>,
    pub summaries: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
struct GoldHighlightRecord {
    post_id: String,
    phrases: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct GoldSummaryRecord {
    user_id: String,
    summary: String,
}

impl GoldData {
    /// Reads `gold_highlights.jsonl` / `gold_summaries.jsonl` from a
    /// directory; either file may be absent.
    pub fn from_dir(dir: &std::path::Path) -> Result<Self, String> {
        let mut gold = GoldData::default();
        let highlight_path = dir.join("gold_highlights.jsonl");
        if highlight_path.exists() {
            let content = std::fs::read_to_string(&highlight_path)
                .map_err(|e| format!("cannot read {}: {e}", highlight_path.display()))?;
            for (idx, line) in content.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let record: GoldHighlightRecord = serde_json::from_str(line)
                    .map_err(|e| format!("gold highlights line {}: {e}", idx + 1))?;
                gold.highlights.insert(record.post_id, record.phrases);
            }
        }
        let summary_path = dir.join("gold_summaries.jsonl");
        if summary_path.exists() {
            let content = std::fs::read_to_string(&summary_path)
                .map_err(|e| format!("cannot read {}: {e}", summary_path.display()))?;
            for (idx, line) in content.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let record: GoldSummaryRecord = serde_json::from_str(line)
                    .map_err(|e| format!("gold summaries line {}: {e}", idx + 1))?;
                gold.summaries.insert(record.user_id, record.summary);
            }
        }
        Ok(gold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfRow {
    pub mode: String,
    pub posts_evaluated: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub pool: String,
    pub users_evaluated: usize,
    pub mean_consistency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSection {
    pub mode: String,
    pub posts_processed: usize,
    pub parse_failures: usize,
    pub backend_failures: usize,
    pub highlights_total: usize,
    pub grounded_exact: usize,
    pub grounded_fuzzy: usize,
    pub ungrounded: usize,
    pub grounding_failure_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity: Option<PrfRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarizationSection {
    pub pool: String,
    pub users_selected: usize,
    pub users_failed: usize,
    pub winner_tally: BTreeMap<String, usize>,
    pub tie_breaks: usize,
    pub defaulted_scores: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency: Option<ConsistencyRow>,
}

/// The full run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub extraction: Option<ExtractionSection>,
    pub summarization: Option<SummarizationSection>,
    pub notices: Vec<String>,
}

/// Counts grounding outcomes across highlight sets.
pub fn extraction_section(mode: RunMode, sets: &[HighlightSet]) -> ExtractionSection {
    let mut section = ExtractionSection {
        mode: mode.label().to_string(),
        posts_processed: sets.len(),
        parse_failures: 0,
        backend_failures: 0,
        highlights_total: 0,
        grounded_exact: 0,
        grounded_fuzzy: 0,
        ungrounded: 0,
        grounding_failure_rate: 0.0,
        similarity: None,
    };
    for set in sets {
        match set.status {
            crate::extract::ExtractionStatus::ParseFailed => section.parse_failures += 1,
            crate::extract::ExtractionStatus::BackendFailed => section.backend_failures += 1,
            crate::extract::ExtractionStatus::Ok => {}
        }
        for highlight in &set.highlights {
            section.highlights_total += 1;
            match highlight.grounding {
                GroundingStatus::Exact => section.grounded_exact += 1,
                GroundingStatus::Fuzzy => section.grounded_fuzzy += 1,
                GroundingStatus::Ungrounded => section.ungrounded += 1,
            }
        }
    }
    if section.highlights_total > 0 {
        section.grounding_failure_rate =
            section.ungrounded as f64 / section.highlights_total as f64;
    }
    section
}

/// Summarization accounting over the selections.
pub fn summarization_section(
    pool: &[String],
    selections: &[SummarySelection],
    users_failed: usize,
) -> SummarizationSection {
    let winner_tally = crate::summarize::winner_counts(selections);
    let tie_breaks = selections.iter().filter(|s| s.tie_break_applied).count();
    let defaulted_scores = selections
        .iter()
        .flat_map(|s| &s.all_scored)
        .filter(|s| s.parse_status == ParseStatus::Defaulted)
        .count();
    SummarizationSection {
        pool: pool.join(" & "),
        users_selected: selections.len(),
        users_failed,
        winner_tally,
        tie_breaks,
        defaulted_scores,
        consistency: None,
    }
}

/// Builds the full report, filling gold-backed metrics where gold exists.
///
/// The predicted side of the similarity metric is each post's grounded
/// phrases — the same view the submission file carries.
pub async fn build_report(
    mode: RunMode,
    highlight_sets: Option<&[HighlightSet]>,
    pool: &[String],
    selections: Option<&(Vec<SummarySelection>, usize)>,
    gold: &GoldData,
    similarity_scorer: &dyn TokenSimilarityScorer,
    nli_scorer: &dyn NliScorer,
) -> Result<Report, MetricsError> {
    let mut notices = Vec::new();

    let extraction = match highlight_sets {
        None => {
            notices.push("no highlight outputs found; extraction section omitted".to_string());
            None
        }
        Some(sets) => {
            let mut section = extraction_section(mode, sets);
            if gold.highlights.is_empty() {
                notices.push(
                    "no gold highlights provided; similarity metrics omitted".to_string(),
                );
            } else {
                let mut precision_sum = 0.0;
                let mut recall_sum = 0.0;
                let mut f1_sum = 0.0;
                let mut evaluated = 0usize;
                for set in sets {
                    let Some(gold_phrases) = gold.highlights.get(&set.post_id) else {
                        continue;
                    };
                    let pred = set.grounded_phrases();
                    let prf: Prf = highlight_prf(&pred, gold_phrases, similarity_scorer).await?;
                    precision_sum += prf.precision;
                    recall_sum += prf.recall;
                    f1_sum += prf.f1;
                    evaluated += 1;
                }
                if evaluated == 0 {
                    notices.push(
                        "gold highlights share no post ids with the run; similarity omitted"
                            .to_string(),
                    );
                } else {
                    let n = evaluated as f64;
                    section.similarity = Some(PrfRow {
                        mode: mode.label().to_string(),
                        posts_evaluated: evaluated,
                        precision: precision_sum / n,
                        recall: recall_sum / n,
                        f1: f1_sum / n,
                    });
                }
            }
            Some(section)
        }
    };

    let summarization = match selections {
        None => {
            notices.push("no summarization outputs found; section omitted".to_string());
            None
        }
        Some((selections, users_failed)) => {
            let mut section = summarization_section(pool, selections, *users_failed);
            if gold.summaries.is_empty() {
                notices.push("no gold summaries provided; consistency omitted".to_string());
            } else {
                let mut mean_sum = 0.0;
                let mut evaluated = 0usize;
                for selection in selections {
                    let Some(gold_summary) = gold.summaries.get(&selection.user_id) else {
                        continue;
                    };
                    let gold_sentences = split_sentences(gold_summary);
                    if gold_sentences.is_empty() {
                        continue;
                    }
                    let entry = sentence_consistency(
                        &selection.winner.candidate.text,
                        &gold_sentences,
                        nli_scorer,
                    )
                    .await?;
                    mean_sum += entry.mean;
                    evaluated += 1;
                }
                if evaluated == 0 {
                    notices.push(
                        "gold summaries share no user ids with the run; consistency omitted"
                            .to_string(),
                    );
                } else {
                    section.consistency = Some(ConsistencyRow {
                        pool: pool.join(" & "),
                        users_evaluated: evaluated,
                        mean_consistency: mean_sum / evaluated as f64,
                    });
                }
            }
            Some(section)
        }
    };

    Ok(Report {
        extraction,
        summarization,
        notices,
    })
}

/// Plain-text rendering of the report.
pub fn render_text(report: &Report) -> String {
    let mut out = String::new();
    if let Some(section) = &report.extraction {
        out.push_str("== Extraction (highlights) ==\n");
        out.push_str(&format!("mode:               {}\n", section.mode));
        out.push_str(&format!("posts processed:    {}\n", section.posts_processed));
        out.push_str(&format!("parse failures:     {}\n", section.parse_failures));
        out.push_str(&format!("backend failures:   {}\n", section.backend_failures));
        out.push_str(&format!(
            "highlights:         {} (exact {}, fuzzy {}, ungrounded {})\n",
            section.highlights_total,
            section.grounded_exact,
            section.grounded_fuzzy,
            section.ungrounded
        ));
        out.push_str(&format!(
            "grounding failures: {:.4}\n",
            section.grounding_failure_rate
        ));
        match &section.similarity {
            Some(row) => {
                out.push_str("\nmode        posts  precision  recall  f1\n");
                out.push_str(&format!(
                    "{:<11} {:<6} {:<10.4} {:<7.4} {:.4}\n",
                    row.mode, row.posts_evaluated, row.precision, row.recall, row.f1
                ));
            }
            None => out.push_str("similarity:         (no gold data)\n"),
        }
        out.push('\n');
    }
    if let Some(section) = &report.summarization {
        out.push_str("== Summarization ==\n");
        out.push_str(&format!("pool:               {}\n", section.pool));
        out.push_str(&format!("users selected:     {}\n", section.users_selected));
        out.push_str(&format!("users failed:       {}\n", section.users_failed));
        out.push_str(&format!("tie breaks:         {}\n", section.tie_breaks));
        out.push_str(&format!("defaulted scores:   {}\n", section.defaulted_scores));
        out.push_str("winner tally:\n");
        for (backend, count) in &section.winner_tally {
            out.push_str(&format!("  {backend:<24} {count}\n"));
        }
        match &section.consistency {
            Some(row) => {
                out.push_str("\npool                          users  consistency\n");
                out.push_str(&format!(
                    "{:<29} {:<6} {:.4}\n",
                    row.pool, row.users_evaluated, row.mean_consistency
                ));
            }
            None => out.push_str("consistency:        (no gold data)\n"),
        }
        out.push('\n');
    }
    if !report.notices.is_empty() {
        out.push_str("== Notices ==\n");
        for notice in &report.notices {
            out.push_str(&format!("- {notice}\n"));
        }
    }
    out
}
