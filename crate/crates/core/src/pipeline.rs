//! Run orchestration: wires corpus, lexicon, templates, gateway and metrics
//! into the `highlight`, `summarize` and `report` commands.
//!
//! Per-item failures (one post, one candidate) are recorded and the run
//! continues; only systemic problems (bad config, unknown backend, template
//! mismatch) abort. All concurrency is bounded by `max_in_flight` and every
//! output file is written deterministically: users and posts in sorted
//! order, no timestamps, no absolute paths.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, RunManifest};
use crate::corpus::{self, CorpusError, CorpusStats, UserTimeline};
use crate::extract::{
    extract_highlights, ExtractConfig, ExtractError, ExtractionStatus, HighlightSet,
};
use crate::gateway::{Gateway, GatewayError};
use crate::lexicon::{self, LexiconError};
use crate::metrics::MetricsError;
use crate::prompt::{PromptError, TemplateSet};
use crate::report::{build_report, extraction_section, GoldData, Report};
use crate::summarize::{
    generate_candidates, score_candidate, select_best, winner_counts, CandidateFailure,
    SummarizeConfig, SummarizeError, SummarySelection,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("required outputs missing: {0}")]
    MissingOutputs(String),
    #[error("gold data error: {0}")]
    Gold(String),
}

impl From<ExtractError> for PipelineError {
    fn from(e: ExtractError) -> Self {
        match e {
            ExtractError::Prompt(e) => Self::Prompt(e),
            ExtractError::Gateway(e) => Self::Gateway(e),
        }
    }
}

impl From<SummarizeError> for PipelineError {
    fn from(e: SummarizeError) -> Self {
        match e {
            SummarizeError::Prompt(e) => Self::Prompt(e),
            SummarizeError::Gateway(e) => Self::Gateway(e),
            SummarizeError::EmptyPool => Self::MissingOutputs("empty candidate pool".to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_string(path: &Path, content: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    std::fs::write(path, content).map_err(io_err(path))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable record"));
        out.push('\n');
    }
    write_string(path, &out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut content = serde_json::to_string_pretty(value).expect("serializable value");
    content.push('\n');
    write_string(path, &content)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let content = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut items = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line).map_err(|e| PipelineError::Io {
            path: format!("{} line {}", path.display(), idx + 1),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Results of a `highlight` run.
#[derive(Debug)]
pub struct HighlightOutcome {
    pub sets: Vec<HighlightSet>,
    pub corpus_stats: CorpusStats,
    pub rejected_records: usize,
    /// Fraction of posts whose extraction did not end `ok`.
    pub failure_rate: f64,
}

/// Summary accounting persisted next to the selections.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummarizeStats {
    pub pool: Vec<String>,
    pub users_total: usize,
    pub users_selected: usize,
    pub users_failed: Vec<String>,
    pub winner_tally: BTreeMap<String, usize>,
    pub tie_breaks: usize,
    pub defaulted_scores: usize,
    pub candidate_failures: Vec<CandidateFailure>,
}

/// Results of a `summarize` run.
#[derive(Debug)]
pub struct SummarizeOutcome {
    pub selections: Vec<SummarySelection>,
    pub stats: SummarizeStats,
    /// Fraction of users with no selected summary.
    pub failure_rate: f64,
}

fn sorted_posts(timelines: &[UserTimeline]) -> Vec<&crate::corpus::Post> {
    timelines.iter().flat_map(|t| t.posts.iter()).collect()
}

/// Runs extraction over every post in the configured corpus and writes the
/// highlight outputs into `out_dir`.
pub async fn run_highlight(
    config: &RunConfig,
    out_dir: &Path,
) -> Result<HighlightOutcome, PipelineError> {
    let corpus = corpus::load_corpus(&config.paths.corpus)?;
    let lexicon = lexicon::load_lexicon(&config.paths.lexicon)?;
    let templates = config.load_templates()?;
    let examples = config.load_few_shot()?;
    let gateway = Gateway::from_configs(config.backend_configs())?;

    let extract_cfg = ExtractConfig {
        backend: config.roles.extraction.clone(),
        expert_identity: config.expert_identity.clone(),
        examples,
        fuzzy_threshold: config.fuzzy_threshold,
    };

    let sets = extract_all(
        &gateway,
        &templates,
        &corpus.timelines,
        &lexicon,
        &extract_cfg,
        config.max_in_flight,
    )
    .await?;

    let corpus_stats = corpus::compute_stats(&corpus.timelines);
    let failed = sets
        .iter()
        .filter(|s| s.status != ExtractionStatus::Ok)
        .count();
    let failure_rate = if sets.is_empty() {
        0.0
    } else {
        failed as f64 / sets.len() as f64
    };

    write_json(
        &out_dir.join("manifest_highlight.json"),
        &RunManifest::new(config, "highlight", templates.version()),
    )?;
    write_json(&out_dir.join("corpus_stats.json"), &corpus_stats)?;
    write_string(
        &out_dir.join("rejects.jsonl"),
        &corpus::rejection_records(&corpus.rejected),
    )?;
    write_jsonl(&out_dir.join("highlights.jsonl"), &sets)?;
    write_json(
        &out_dir.join("submission_highlights.json"),
        &submission_highlights(&sets, config.submission_include_ungrounded),
    )?;
    write_json(
        &out_dir.join("highlight_stats.json"),
        &extraction_section(config.run_mode(), &sets),
    )?;

    Ok(HighlightOutcome {
        sets,
        corpus_stats,
        rejected_records: corpus.rejected.len(),
        failure_rate,
    })
}

async fn extract_all(
    gateway: &Gateway,
    templates: &TemplateSet,
    timelines: &[UserTimeline],
    lexicon: &lexicon::Lexicon,
    extract_cfg: &ExtractConfig,
    max_in_flight: usize,
) -> Result<Vec<HighlightSet>, PipelineError> {
    let semaphore = Arc::new(tokio::sync::Semaphore::new(max_in_flight.max(1)));
    let futures = sorted_posts(timelines).into_iter().map(|post| {
        let semaphore = semaphore.clone();
        async move {
            let _permit = semaphore.acquire().await.expect("semaphore never closed");
            extract_highlights(gateway, templates, post, lexicon, extract_cfg).await
        }
    });
    let results = futures::future::join_all(futures).await;
    results
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(PipelineError::from)
}

/// Shared-task-style view: post id to submitted phrases.
pub fn submission_highlights(
    sets: &[HighlightSet],
    include_ungrounded: bool,
) -> BTreeMap<String, Vec<String>> {
    sets.iter()
        .map(|set| {
            let phrases = if include_ungrounded {
                set.highlights.iter().map(|h| h.phrase.clone()).collect()
            } else {
                set.grounded_phrases()
            };
            (set.post_id.clone(), phrases)
        })
        .collect()
}

/// Where `summarize` gets its highlight sets from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HighlightSource {
    /// Read `highlights.jsonl` written by a previous `highlight` run.
    FromFiles,
    /// Run extraction first, writing its outputs as well.
    Inline,
}

/// Runs candidate generation, scoring and selection for every user.
pub async fn run_summarize(
    config: &RunConfig,
    out_dir: &Path,
    source: HighlightSource,
) -> Result<SummarizeOutcome, PipelineError> {
    let highlights_path = out_dir.join("highlights.jsonl");
    let sets: Vec<HighlightSet> = match source {
        HighlightSource::Inline => run_highlight(config, out_dir).await?.sets,
        HighlightSource::FromFiles => {
            if !highlights_path.exists() {
                return Err(PipelineError::MissingOutputs(format!(
                    "{} (run `highlight` first or pass --inline-extraction)",
                    highlights_path.display()
                )));
            }
            read_jsonl(&highlights_path)?
        }
    };

    let corpus = corpus::load_corpus(&config.paths.corpus)?;
    let templates = config.load_templates()?;
    let gateway = Gateway::from_configs(config.backend_configs())?;
    let summarize_cfg = SummarizeConfig {
        summarizers: config.roles.summarizers.clone(),
        evaluator: config.roles.evaluator.clone(),
        candidates_per_backend: config.k_candidates,
        letter_limit: config.letter_limit,
        master_seed: config.seed,
    };

    let semaphore = Arc::new(tokio::sync::Semaphore::new(config.max_in_flight.max(1)));
    let futures = corpus.timelines.iter().map(|timeline| {
        let semaphore = semaphore.clone();
        let gateway = &gateway;
        let templates = &templates;
        let summarize_cfg = &summarize_cfg;
        let sets = &sets;
        async move {
            let _permit = semaphore.acquire().await.expect("semaphore never closed");
            summarize_user(gateway, templates, timeline, sets, summarize_cfg).await
        }
    });
    let results = futures::future::join_all(futures).await;

    let mut selections = Vec::new();
    let mut users_failed = Vec::new();
    let mut candidate_failures = Vec::new();
    for (timeline, result) in corpus.timelines.iter().zip(results) {
        let (selection, mut failures) = result?;
        candidate_failures.append(&mut failures);
        match selection {
            Some(selection) => selections.push(selection),
            None => users_failed.push(timeline.user_id.clone()),
        }
    }

    let stats = SummarizeStats {
        pool: config.roles.summarizers.clone(),
        users_total: corpus.timelines.len(),
        users_selected: selections.len(),
        users_failed: users_failed.clone(),
        winner_tally: winner_counts(&selections),
        tie_breaks: selections.iter().filter(|s| s.tie_break_applied).count(),
        defaulted_scores: selections
            .iter()
            .flat_map(|s| &s.all_scored)
            .filter(|s| s.parse_status == crate::summarize::ParseStatus::Defaulted)
            .count(),
        candidate_failures,
    };
    let failure_rate = if corpus.timelines.is_empty() {
        0.0
    } else {
        users_failed.len() as f64 / corpus.timelines.len() as f64
    };

    write_json(
        &out_dir.join("manifest_summarize.json"),
        &RunManifest::new(config, "summarize", templates.version()),
    )?;
    write_jsonl(&out_dir.join("selections.jsonl"), &selections)?;
    let submission: BTreeMap<String, String> = selections
        .iter()
        .map(|s| (s.user_id.clone(), s.winner.candidate.text.clone()))
        .collect();
    write_json(&out_dir.join("submission_summaries.json"), &submission)?;
    write_json(&out_dir.join("summarize_stats.json"), &stats)?;
    write_json(&out_dir.join("winner_tally.json"), &stats.winner_tally)?;
    write_string(&out_dir.join("winner_tally.txt"), &tally_table(&stats))?;

    Ok(SummarizeOutcome {
        selections,
        stats,
        failure_rate,
    })
}

async fn summarize_user(
    gateway: &Gateway,
    templates: &TemplateSet,
    timeline: &UserTimeline,
    sets: &[HighlightSet],
    cfg: &SummarizeConfig,
) -> Result<(Option<SummarySelection>, Vec<CandidateFailure>), PipelineError> {
    let (candidates, failures) =
        generate_candidates(gateway, templates, timeline, sets, cfg).await?;
    if candidates.is_empty() {
        return Ok((None, failures));
    }
    // Scoring starts only once the user's full candidate pool exists.
    let posts: Vec<String> = timeline.posts.iter().map(|p| p.text.clone()).collect();
    let mut scored = Vec::with_capacity(candidates.len());
    for candidate in &candidates {
        scored.push(score_candidate(gateway, templates, candidate, &posts, timeline.label, cfg).await?);
    }
    let selection = select_best(&timeline.user_id, scored)?;
    Ok((Some(selection), failures))
}

fn tally_table(stats: &SummarizeStats) -> String {
    let mut out = String::from("summarizer                winners\n");
    for (backend, count) in &stats.winner_tally {
        out.push_str(&format!("{backend:<25} {count}\n"));
    }
    out.push_str(&format!(
        "total                     {}\n",
        stats.users_selected
    ));
    if !stats.users_failed.is_empty() {
        out.push_str(&format!(
            "failed users              {}\n",
            stats.users_failed.len()
        ));
    }
    out
}

/// Builds the aggregate report from a run directory's outputs.
///
/// Gold data comes from `gold_dir` when given, else from the config's gold
/// path; with no gold at all the report carries notices instead of metrics.
pub async fn run_report(
    config: &RunConfig,
    out_dir: &Path,
    gold_dir: Option<&Path>,
) -> Result<Report, PipelineError> {
    let highlights_path = out_dir.join("highlights.jsonl");
    let selections_path = out_dir.join("selections.jsonl");
    if !highlights_path.exists() && !selections_path.exists() {
        return Err(PipelineError::MissingOutputs(format!(
            "neither {} nor {} exists",
            highlights_path.display(),
            selections_path.display()
        )));
    }

    let sets: Option<Vec<HighlightSet>> = if highlights_path.exists() {
        Some(read_jsonl(&highlights_path)?)
    } else {
        None
    };
    let selections: Option<(Vec<SummarySelection>, usize)> = if selections_path.exists() {
        let selections: Vec<SummarySelection> = read_jsonl(&selections_path)?;
        let stats_path = out_dir.join("summarize_stats.json");
        let users_failed = if stats_path.exists() {
            let content = std::fs::read_to_string(&stats_path).map_err(io_err(&stats_path))?;
            serde_json::from_str::<SummarizeStats>(&content)
                .map(|s| s.users_failed.len())
                .unwrap_or(0)
        } else {
            0
        };
        Some((selections, users_failed))
    } else {
        None
    };

    let gold = match gold_dir.map(PathBuf::from).or_else(|| config.paths.gold.clone()) {
        Some(dir) => GoldData::from_dir(&dir).map_err(PipelineError::Gold)?,
        None => GoldData::default(),
    };

    let embedding = config.build_embedding_scorer();
    let nli = config.build_nli_scorer()?;
    let report = build_report(
        config.run_mode(),
        sets.as_deref(),
        &config.roles.summarizers,
        selections.as_ref(),
        &gold,
        embedding.as_ref(),
        nli.as_ref(),
    )
    .await?;

    let templates = config.load_templates()?;
    write_json(
        &out_dir.join("manifest_report.json"),
        &RunManifest::new(config, "report", templates.version()),
    )?;
    write_json(&out_dir.join("report.json"), &report)?;
    write_string(&out_dir.join("report.txt"), &crate::report::render_text(&report))?;
    Ok(report)
}

/// Health checks for every role backend and both scorers. Returns one
/// failure per unreachable component.
pub async fn check_health(config: &RunConfig) -> Vec<crate::config::CheckFailure> {
    let mut failures = Vec::new();
    match Gateway::from_configs(config.backend_configs()) {
        Err(e) => failures.push(crate::config::CheckFailure {
            code: "BACKEND_UNHEALTHY",
            message: e.to_string(),
        }),
        Ok(gateway) => {
            for name in gateway.backend_names() {
                if let Err(e) = gateway.health_check(&name).await {
                    failures.push(crate::config::CheckFailure {
                        code: "BACKEND_UNHEALTHY",
                        message: format!("backend `{name}`: {e}"),
                    });
                }
            }
        }
    }
    if let Err(e) = config.build_embedding_scorer().health_check().await {
        failures.push(crate::config::CheckFailure {
            code: "SCORER_UNHEALTHY",
            message: format!("embedding scorer: {e}"),
        });
    }
    match config.build_nli_scorer() {
        Err(e) => failures.push(crate::config::CheckFailure {
            code: "SCORER_UNHEALTHY",
            message: format!("NLI scorer: {e}"),
        }),
        Ok(scorer) => {
            if let Err(e) = scorer.health_check().await {
                failures.push(crate::config::CheckFailure {
                    code: "SCORER_UNHEALTHY",
                    message: format!("NLI scorer: {e}"),
                });
            }
        }
    }
    failures
}

/// Reads back a run directory for tests and tooling.
pub fn read_run_outputs(
    out_dir: &Path,
) -> Result<(Vec<HighlightSet>, Vec<SummarySelection>), PipelineError> {
    let sets = read_jsonl(&out_dir.join("highlights.jsonl"))?;
    let selections_path = out_dir.join("selections.jsonl");
    let selections = if selections_path.exists() {
        read_jsonl(&selections_path)?
    } else {
        Vec::new()
    };
    Ok((sets, selections))
}
