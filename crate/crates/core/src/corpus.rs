//! Corpus loading: line-delimited post records grouped into per-user timelines.
//!
//! The input format is UTF-8 JSON lines, one record per line with fields
//! `post_id`, `user_id`, `timestamp`, `text` and `label`. Labels attach to
//! users; records carry the user's label redundantly and a mismatch within
//! one user is a hard error. Malformed single records are collected into a
//! rejection report instead of aborting the load.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-user suicide risk severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RiskLabel {
    Low,
    Moderate,
    Severe,
}

impl RiskLabel {
    /// Parses `low|moderate|severe`, case-insensitive.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_lowercase().as_str() {
            "low" => Some(Self::Low),
            "moderate" => Some(Self::Moderate),
            "severe" => Some(Self::Severe),
            _ => None,
        }
    }

    /// Lowercase form used in record files.
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Low => "low",
            Self::Moderate => "moderate",
            Self::Severe => "severe",
        }
    }

    /// Capitalized form used in prompt text.
    pub fn display_name(&self) -> &'static str {
        match self {
            Self::Low => "Low",
            Self::Moderate => "Moderate",
            Self::Severe => "Severe",
        }
    }

    pub fn all() -> [RiskLabel; 3] {
        [Self::Low, Self::Moderate, Self::Severe]
    }
}

impl fmt::Display for RiskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl Serialize for RiskLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RiskLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        RiskLabel::parse(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown risk label `{s}`")))
    }
}

/// One social-media post with its user's risk label denormalized on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub user_id: String,
    pub timestamp: i64,
    pub text: String,
    pub label: RiskLabel,
}

impl Post {
    /// Post length in unicode scalar characters.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// A user's posts in time-ascending order, all sharing one label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserTimeline {
    pub user_id: String,
    pub label: RiskLabel,
    pub posts: Vec<Post>,
}

/// One rejected input line plus the reason it was rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub line_number: usize,
    pub raw: String,
    pub reason: String,
}

/// Outcome of a corpus load: valid timelines plus the rejection report.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub timelines: Vec<UserTimeline>,
    pub rejected: Vec<RejectedRecord>,
    /// Number of non-empty input lines seen, accepted or not.
    pub input_lines: usize,
}

impl LoadedCorpus {
    pub fn accepted_count(&self) -> usize {
        self.timelines.iter().map(|t| t.posts.len()).sum()
    }

    pub fn user_count(&self) -> usize {
        self.timelines.len()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read corpus file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("corpus contains no valid records ({rejected} rejected)")]
    Empty { rejected: usize },
    #[error("duplicate post_id `{post_id}`")]
    DuplicatePostId { post_id: String },
    #[error("user `{user_id}` carries conflicting labels {first} and {second}")]
    LabelConflict {
        user_id: String,
        first: RiskLabel,
        second: RiskLabel,
    },
}

#[derive(Deserialize)]
struct RawRecord {
    post_id: Option<String>,
    user_id: Option<String>,
    timestamp: Option<i64>,
    text: Option<String>,
    label: Option<String>,
}

fn validate_record(line: &str) -> Result<Post, String> {
    let raw: RawRecord =
        serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let post_id = raw
        .post_id
        .filter(|s| !s.trim().is_empty())
        .ok_or("missing field `post_id`")?;
    let user_id = raw
        .user_id
        .filter(|s| !s.trim().is_empty())
        .ok_or("missing field `user_id`")?;
    let timestamp = raw.timestamp.ok_or("missing field `timestamp`")?;
    let text = raw.text.ok_or("missing field `text`")?;
    if text.trim().is_empty() {
        return Err("field `text` is empty".to_string());
    }
    let label_str = raw.label.ok_or("missing field `label`")?;
    let label = RiskLabel::parse(&label_str)
        .ok_or_else(|| format!("unknown label `{label_str}`"))?;
    Ok(Post {
        post_id,
        user_id,
        timestamp,
        text,
        label,
    })
}

/// Loads a corpus file, validating records and grouping them into timelines.
///
/// Malformed records land in the rejection report. Duplicate post ids and
/// per-user label conflicts abort the load: they indicate a broken export
/// rather than a single bad line.
pub fn load_corpus(path: &Path) -> Result<LoadedCorpus, CorpusError> {
    let content = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_corpus_str(&content)
}

/// Same as [`load_corpus`] but over in-memory content.
pub fn load_corpus_str(content: &str) -> Result<LoadedCorpus, CorpusError> {
    let mut posts: Vec<Post> = Vec::new();
    let mut rejected = Vec::new();
    let mut input_lines = 0usize;
    let mut seen_ids = std::collections::HashSet::new();

    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        input_lines += 1;
        match validate_record(line) {
            Ok(post) => {
                if !seen_ids.insert(post.post_id.clone()) {
                    return Err(CorpusError::DuplicatePostId {
                        post_id: post.post_id,
                    });
                }
                posts.push(post);
            }
            Err(reason) => rejected.push(RejectedRecord {
                line_number: idx + 1,
                raw: line.to_string(),
                reason,
            }),
        }
    }

    if posts.is_empty() {
        return Err(CorpusError::Empty {
            rejected: rejected.len(),
        });
    }

    let timelines = group_timelines(posts)?;
    Ok(LoadedCorpus {
        timelines,
        rejected,
        input_lines,
    })
}

fn group_timelines(posts: Vec<Post>) -> Result<Vec<UserTimeline>, CorpusError> {
    let mut by_user: BTreeMap<String, Vec<Post>> = BTreeMap::new();
    for post in posts {
        by_user.entry(post.user_id.clone()).or_default().push(post);
    }

    let mut timelines = Vec::with_capacity(by_user.len());
    for (user_id, mut posts) in by_user {
        let label = posts[0].label;
        for post in &posts {
            if post.label != label {
                return Err(CorpusError::LabelConflict {
                    user_id,
                    first: label,
                    second: post.label,
                });
            }
        }
        // Timestamp ties break by post_id so timelines are deterministic.
        posts.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| a.post_id.cmp(&b.post_id))
        });
        timelines.push(UserTimeline {
            user_id,
            label,
            posts,
        });
    }
    Ok(timelines)
}

/// Serializes timelines back to the line-delimited record format.
///
/// Users are emitted in `user_id` order with each user's posts in timeline
/// order, so loading the result reproduces the same timelines.
pub fn to_records(timelines: &[UserTimeline]) -> String {
    let mut out = String::new();
    for timeline in timelines {
        for post in &timeline.posts {
            out.push_str(&serde_json::to_string(post).expect("post serializes"));
            out.push('\n');
        }
    }
    out
}

/// Rejection report in the corpus record format plus a `reason` field.
pub fn rejection_records(rejected: &[RejectedRecord]) -> String {
    let mut out = String::new();
    for rec in rejected {
        out.push_str(&serde_json::to_string(rec).expect("rejection serializes"));
        out.push('\n');
    }
    out
}

/// Per-label slice of the corpus statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub users: usize,
    pub posts: usize,
    pub mean_post_chars: f64,
    pub mean_posts_per_user: f64,
}

/// Dataset statistics: post/user counts and means, per label and total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_label: BTreeMap<RiskLabel, LabelStats>,
    pub total_posts: usize,
    pub total_users: usize,
    pub mean_post_chars: f64,
    pub mean_posts_per_user: f64,
}

/// Computes post/user counts and character-length means over the timelines.
///
/// Labels with no users are absent from `per_label`, keeping every stored
/// mean backed by a nonzero denominator.
pub fn compute_stats(timelines: &[UserTimeline]) -> CorpusStats {
    assert!(!timelines.is_empty(), "compute_stats requires a non-empty corpus");

    let mut per_label: BTreeMap<RiskLabel, (usize, usize, usize)> = BTreeMap::new();
    let mut total_posts = 0usize;
    let mut total_chars = 0usize;
    for timeline in timelines {
        let entry = per_label.entry(timeline.label).or_insert((0, 0, 0));
        entry.0 += 1;
        entry.1 += timeline.posts.len();
        let chars: usize = timeline.posts.iter().map(Post::char_len).sum();
        entry.2 += chars;
        total_posts += timeline.posts.len();
        total_chars += chars;
    }

    let per_label = per_label
        .into_iter()
        .map(|(label, (users, posts, chars))| {
            (
                label,
                LabelStats {
                    users,
                    posts,
                    mean_post_chars: chars as f64 / posts as f64,
                    mean_posts_per_user: posts as f64 / users as f64,
                },
            )
        })
        .collect();

    CorpusStats {
        per_label,
        total_posts,
        total_users: timelines.len(),
        mean_post_chars: total_chars as f64 / total_posts as f64,
        mean_posts_per_user: total_posts as f64 / timelines.len() as f64,
    }
}
