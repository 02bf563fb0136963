//! Shared fixture builders for the integration and acceptance suites.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use evidex_core::config::RunConfig;

/// Workspace-level `fixtures/` directory shipped with the repo.
pub fn shipped_fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// A corpus shaped exactly like the evaluation split: 125 users and 162
/// posts, with 13 low users (17 posts), 75 moderate (91) and 37 severe (54).
pub fn corpus_162_posts_125_users() -> String {
    let mut lines = Vec::new();
    let mut post_n = 0;
    for u in 0..125usize {
        // Label bands and two-post allocations sized to hit the per-label
        // post counts: low 9x1+4x2=17, moderate 59x1+16x2=91,
        // severe 20x1+17x2=54.
        let (label, two_posts) = match u {
            0..=12 => ("low", u < 4),
            13..=87 => ("moderate", u < 29),
            _ => ("severe", u < 105),
        };
        let posts_for_user = if two_posts { 2 } else { 1 };
        for p in 0..posts_for_user {
            lines.push(format!(
                r#"{{"post_id":"p{post_n:03}","user_id":"u{u:03}","timestamp":{ts},"text":"marker u{u:03} post {p}: feeling empty and alone again today.","label":"{label}"}}"#,
                ts = 1000 + post_n,
            ));
            post_n += 1;
        }
    }
    assert_eq!(post_n, 162);
    lines.join("\n") + "\n"
}

/// Writes a complete offline run setup (corpus, lexicon, mock scripts,
/// config) into `dir` and loads the config. The caller provides the corpus
/// content and the three mock scripts.
pub struct OfflineRun {
    pub dir: tempfile::TempDir,
    pub config_path: PathBuf,
}

impl OfflineRun {
    pub fn config(&self) -> RunConfig {
        RunConfig::load(&self.config_path).expect("fixture config loads")
    }

    pub fn out_dir(&self) -> PathBuf {
        self.dir.path().join("out")
    }
}

pub struct OfflineRunSpec<'a> {
    pub corpus: &'a str,
    pub extraction_script: &'a str,
    pub summarizer_scripts: Vec<(&'a str, &'a str)>,
    pub evaluator_script: &'a str,
    pub k_candidates: usize,
    pub seed: u64,
}

pub fn write_offline_run(spec: &OfflineRunSpec) -> OfflineRun {
    let dir = tempfile::tempdir().expect("tempdir");
    let base = dir.path();
    std::fs::write(base.join("corpus.jsonl"), spec.corpus).unwrap();
    std::fs::write(
        base.join("lexicon.csv"),
        "emptiness,low\noverthink,low\npsychiatric,moderate\npain,moderate\ncutting,severe\ndie,severe\n",
    )
    .unwrap();
    std::fs::create_dir_all(base.join("mocks")).unwrap();
    std::fs::write(base.join("mocks/extraction.jsonl"), spec.extraction_script).unwrap();
    std::fs::write(base.join("mocks/evaluator.jsonl"), spec.evaluator_script).unwrap();

    let mut backend_sections = String::new();
    let mut summarizer_names = Vec::new();
    for (name, script) in &spec.summarizer_scripts {
        let file = format!("mocks/{name}.jsonl");
        std::fs::write(base.join(&file), script).unwrap();
        backend_sections.push_str(&format!(
            "[backends.{name}]\nkind = \"mock\"\nscript = \"{file}\"\n\n"
        ));
        summarizer_names.push(format!("\"{name}\""));
    }

    let config_text = format!(
        r#"seed = {seed}
k_candidates = {k}
fuzzy_threshold = 0.9
letter_limit = 300
expert_identity = "psychiatrist"
max_in_flight = 4

[paths]
corpus = "corpus.jsonl"
lexicon = "lexicon.csv"
output = "out"

[roles]
extraction = "extractor"
summarizers = [{summarizers}]
evaluator = "judge"

[backends.extractor]
kind = "mock"
script = "mocks/extraction.jsonl"

[backends.judge]
kind = "mock"
script = "mocks/evaluator.jsonl"

{backend_sections}
[scorers.embedding]
kind = "exact_stub"

[scorers.nli]
kind = "constant_stub"
contradiction = 0.0
"#,
        seed = spec.seed,
        k = spec.k_candidates,
        summarizers = summarizer_names.join(", "),
        backend_sections = backend_sections,
    );
    let config_path = base.join("run.toml");
    std::fs::write(&config_path, config_text).unwrap();
    OfflineRun { dir, config_path }
}

// ---------------------------------------------------------------------------
// Independent oracles shared by the oracle tests and the acceptance suite.
// These reimplement the checked behavior from first principles: full-matrix
// DP instead of rolling rows, per-offset scanning instead of an automaton.
// ---------------------------------------------------------------------------

use evidex_core::corpus::RiskLabel;
use evidex_core::lexicon::TermMatch;
use rand::seq::SliceRandom as _;
use rand::Rng as _;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn boundary(chars: &[char], pos: usize) -> bool {
    pos == 0
        || pos == chars.len()
        || !chars[pos - 1].is_alphanumeric()
        || !chars[pos].is_alphanumeric()
}

/// Brute-force dictionary matcher: tests every (term, char offset) pair.
pub fn brute_force_matches(entries: &[(String, RiskLabel)], text: &str) -> Vec<TermMatch> {
    let chars: Vec<char> = text.chars().collect();
    let mut by_start: BTreeMap<usize, TermMatch> = BTreeMap::new();
    for (term, level) in entries {
        let term_chars: Vec<char> = term.chars().collect();
        for start in 0..chars.len() {
            let mut folded: Vec<char> = Vec::new();
            let mut end = start;
            while folded.len() < term_chars.len() && end < chars.len() {
                folded.extend(chars[end].to_lowercase());
                end += 1;
            }
            if folded != term_chars {
                continue;
            }
            if !boundary(&chars, start) || !boundary(&chars, end) {
                continue;
            }
            let candidate = TermMatch {
                term: term.clone(),
                level: *level,
                span: (start, end),
                surface: chars[start..end].iter().collect(),
            };
            match by_start.get(&start) {
                Some(existing) if existing.span.1 >= end => {}
                _ => {
                    by_start.insert(start, candidate);
                }
            }
        }
    }
    by_start.into_values().collect()
}

/// 50 synthetic terms: singles, multi-word phrases, and prefix pairs.
pub fn synthetic_entries() -> Vec<(String, RiskLabel)> {
    let singles = [
        "ache", "alone", "bleak", "broke", "burden", "crying", "cut", "cutting", "dark",
        "despair", "die", "dying", "empty", "fail", "fear", "give", "gone", "grim", "hurt",
        "lonely", "lost", "numb", "pain", "panic", "quit", "sad", "scared", "sleep", "tired",
        "trapped", "weary", "worthless",
    ];
    let phrases = [
        "give up",
        "want to die",
        "die alone",
        "no way out",
        "end it all",
        "can not sleep",
        "fear of failing",
        "let me go",
        "fading away",
        "deep despair",
        "quiet panic",
        "hollow ache",
        "last goodbye",
        "never wake",
        "lights out",
        "cold dread",
        "worth nothing",
        "all alone",
    ];
    let levels = RiskLabel::all();
    singles
        .iter()
        .chain(phrases.iter())
        .enumerate()
        .map(|(i, term)| (term.to_string(), levels[i % 3]))
        .collect()
}

/// Random sentence mixing dictionary terms, fillers, messy separators and
/// case flips, plus occasional token gluing for inside-word positions.
pub fn random_sentence(rng: &mut ChaCha8Rng, entries: &[(String, RiskLabel)]) -> String {
    let fillers = [
        "the", "today", "morning", "coffee", "walks", "soldier", "dies", "cutset", "paint",
        "again", "window", "quietly", "maybe", "diesel", "acheron", "failing", "upward",
        "nothing", "stories", "give-and-take",
    ];
    let separators = [" ", " ", " ", "  ", ", ", ". ", "-", "\n", "; "];
    let mut out = String::new();
    let tokens = rng.gen_range(3..18);
    for i in 0..tokens {
        if i > 0 && !rng.gen_bool(0.06) {
            out.push_str(separators.choose(rng).unwrap());
        }
        let mut word = if rng.gen_bool(0.45) {
            entries.choose(rng).unwrap().0.clone()
        } else {
            fillers.choose(rng).unwrap().to_string()
        };
        match rng.gen_range(0..6) {
            0 => word = word.to_uppercase(),
            1 => {
                let mut chars = word.chars();
                if let Some(first) = chars.next() {
                    word = first.to_uppercase().collect::<String>() + chars.as_str();
                }
            }
            _ => {}
        }
        out.push_str(&word);
        if rng.gen_bool(0.08) {
            out.push(*['!', '?', ',', '.'].choose(rng).unwrap());
        }
    }
    out
}

/// Independent normalization: split on whitespace, rejoin with spaces.
pub fn oracle_normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Full-matrix Levenshtein, no rolling rows.
pub fn oracle_edit_distance(a: &[char], b: &[char]) -> usize {
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        dp[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            dp[i][j] = (dp[i - 1][j - 1] + cost)
                .min(dp[i - 1][j] + 1)
                .min(dp[i][j - 1] + 1);
        }
    }
    dp[a.len()][b.len()]
}

/// Best similarity over all windows of length within ±20% of the phrase.
pub fn oracle_best_similarity(phrase: &str, post: &str) -> Option<f64> {
    let phrase: Vec<char> = oracle_normalize(phrase).chars().collect();
    let post: Vec<char> = oracle_normalize(post).chars().collect();
    if phrase.is_empty() || post.is_empty() {
        return None;
    }
    let (lo, hi) = evidex_core::extract::fuzzy_window_bounds(phrase.len(), post.len());
    let mut best: Option<f64> = None;
    for start in 0..post.len() {
        for len in lo..=hi {
            if start + len > post.len() {
                break;
            }
            let window = &post[start..start + len];
            let dist = oracle_edit_distance(&phrase, window);
            let sim = 1.0 - dist as f64 / phrase.len().max(len) as f64;
            if best.map_or(true, |b| sim > b) {
                best = Some(sim);
            }
        }
    }
    best
}

pub const ORACLE_WORDS: &[&str] = &[
    "fear", "of", "failing", "hurting", "alone", "night", "cannot", "sleep", "the", "pain",
    "never", "stops", "quiet", "morning", "walks", "empty", "rooms", "again", "nobody", "calls",
];

pub fn random_post(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(4..14);
    (0..n)
        .map(|_| *ORACLE_WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// A phrase sliced from the post on char boundaries, with messy whitespace.
pub fn slice_phrase(rng: &mut ChaCha8Rng, post: &str) -> String {
    let chars: Vec<char> = post.chars().collect();
    let len = rng.gen_range(4..=16.min(chars.len()));
    let start = rng.gen_range(0..=chars.len() - len);
    let mut phrase: String = chars[start..start + len].iter().collect();
    if rng.gen_bool(0.3) {
        phrase = phrase.replace(' ', "  ");
    }
    if rng.gen_bool(0.3) {
        phrase = format!("  {phrase}\t");
    }
    phrase
}

pub fn mutate_one_char(rng: &mut ChaCha8Rng, phrase: &str) -> String {
    let mut chars: Vec<char> = phrase.chars().collect();
    if chars.is_empty() {
        return phrase.to_string();
    }
    let idx = rng.gen_range(0..chars.len());
    chars[idx] = if chars[idx] == 'q' { 'x' } else { 'q' };
    chars.into_iter().collect()
}
