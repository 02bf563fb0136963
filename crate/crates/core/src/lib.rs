//! Evidence pipeline for suicide-risk posts: knowledge-aware highlight
//! extraction per post, consistency-judged summarization per user, and an
//! offline evaluation harness.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`corpus`]: load and validate post records, group per-user timelines.
//! - [`lexicon`]: risk-tagged term dictionary and occurrence matching.
//! - [`prompt`]: versioned template assets and slot rendering.
//! - [`gateway`]: chat-completion backends (HTTP or deterministic mock).
//! - [`extract`]: per-post highlight extraction with grounding.
//! - [`summarize`]: candidate generation, judge scoring, selection.
//! - [`metrics`]: similarity P/R/F1 and NLI consistency with pluggable scorers.
//! - [`report`]: aggregate run reports.
//! - [`config`] and [`pipeline`]: run configuration and orchestration.

pub mod config;
pub mod corpus;
pub mod extract;
pub mod gateway;
pub mod lexicon;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod report;
pub mod summarize;
