//! Risk-level-tagged term dictionary and occurrence matching.
//!
//! Matching is case-insensitive and word-boundary anchored: a span matches
//! only if both its start and end positions sit at a boundary, where a
//! position is a boundary when it touches the text edge or a
//! non-alphanumeric character on at least one side. This keeps `die` from
//! matching inside `soldier` while still matching `die!` or `half-die`.
//! Spans are unicode character offsets into the original text.

use std::collections::BTreeMap;
use std::path::Path;

use aho_corasick::AhoCorasick;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::RiskLabel;

/// One dictionary term tagged with its risk level. Terms are stored
/// case-folded and trimmed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub term: String,
    pub level: RiskLabel,
}

/// Immutable term dictionary. A term appears under at most one level.
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
    matcher: AhoCorasick,
}

/// An occurrence of a lexicon term in a post.
///
/// `span` is `(start, end)` in character offsets; slicing the post at the
/// span yields `surface`, whose case-folded form equals `term`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermMatch {
    pub term: String,
    pub level: RiskLabel,
    pub span: (usize, usize),
    pub surface: String,
}

/// A deduplicated term ready for prompt injection, keeping its level tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTerm {
    pub term: String,
    pub level: RiskLabel,
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("failed to read lexicon file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("lexicon line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("term `{term}` appears under both {first} and {second}")]
    ConflictingLevels {
        term: String,
        first: RiskLabel,
        second: RiskLabel,
    },
    #[error("lexicon contains no entries")]
    Empty,
}

impl Lexicon {
    /// Builds a lexicon from entries, case-folding terms and deduplicating
    /// exact `(term, level)` repeats. A term under two different levels is
    /// an error.
    pub fn new(raw: impl IntoIterator<Item = (String, RiskLabel)>) -> Result<Self, LexiconError> {
        let mut by_term: BTreeMap<String, RiskLabel> = BTreeMap::new();
        for (term, level) in raw {
            let term = term.trim().to_lowercase();
            if term.is_empty() {
                continue;
            }
            match by_term.get(&term) {
                Some(existing) if *existing != level => {
                    return Err(LexiconError::ConflictingLevels {
                        term,
                        first: *existing,
                        second: level,
                    });
                }
                _ => {
                    by_term.insert(term, level);
                }
            }
        }
        if by_term.is_empty() {
            return Err(LexiconError::Empty);
        }
        let entries: Vec<LexiconEntry> = by_term
            .into_iter()
            .map(|(term, level)| LexiconEntry { term, level })
            .collect();
        let matcher = AhoCorasick::new(entries.iter().map(|e| e.term.as_str()))
            .expect("lexicon terms build an automaton");
        Ok(Self { entries, matcher })
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry count per risk level.
    pub fn counts(&self) -> BTreeMap<RiskLabel, usize> {
        let mut counts = BTreeMap::new();
        for entry in &self.entries {
            *counts.entry(entry.level).or_insert(0) += 1;
        }
        counts
    }
}

/// Loads a lexicon from the `term,level` line format. Blank lines and lines
/// starting with `#` are skipped.
pub fn load_lexicon(path: &Path) -> Result<Lexicon, LexiconError> {
    let content = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_lexicon_str(&content)
}

/// Same as [`load_lexicon`] but over in-memory content.
pub fn load_lexicon_str(content: &str) -> Result<Lexicon, LexiconError> {
    let mut raw = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (term, level_str) = line.rsplit_once(',').ok_or_else(|| LexiconError::Parse {
            line: idx + 1,
            message: "expected `term,level`".to_string(),
        })?;
        let level = RiskLabel::parse(level_str).ok_or_else(|| LexiconError::Parse {
            line: idx + 1,
            message: format!("unknown level `{}`", level_str.trim()),
        })?;
        raw.push((term.to_string(), level));
    }
    Lexicon::new(raw)
}

/// Case-folded view of a text with a map back to original char offsets.
///
/// Folding a char can expand it to several chars (e.g. `İ`), so each folded
/// char records which original char it came from. Matches are accepted only
/// when they cover whole expansions.
struct FoldedText {
    folded: String,
    /// Original char index for each folded char.
    origin: Vec<usize>,
    /// Folded char index for each folded byte offset (dense, sorted).
    byte_to_char: Vec<(usize, usize)>,
    original_chars: Vec<char>,
}

impl FoldedText {
    fn new(text: &str) -> Self {
        let original_chars: Vec<char> = text.chars().collect();
        let mut folded = String::with_capacity(text.len());
        let mut origin = Vec::with_capacity(original_chars.len());
        let mut byte_to_char = Vec::with_capacity(original_chars.len());
        for (i, ch) in original_chars.iter().enumerate() {
            for low in ch.to_lowercase() {
                byte_to_char.push((folded.len(), origin.len()));
                folded.push(low);
                origin.push(i);
            }
        }
        Self {
            folded,
            origin,
            byte_to_char,
            original_chars,
        }
    }

    fn char_index_of_byte(&self, byte: usize) -> Option<usize> {
        self.byte_to_char
            .binary_search_by_key(&byte, |&(b, _)| b)
            .ok()
            .map(|i| self.byte_to_char[i].1)
    }

    /// Maps a folded char range to an original char range, or `None` when
    /// the range cuts an expansion in half.
    fn to_original_span(&self, start: usize, end: usize) -> Option<(usize, usize)> {
        let ostart = self.origin[start];
        let olast = self.origin[end - 1];
        if start > 0 && self.origin[start - 1] == ostart {
            return None;
        }
        if end < self.origin.len() && self.origin[end] == olast {
            return None;
        }
        Some((ostart, olast + 1))
    }

    fn is_boundary(&self, pos: usize) -> bool {
        if pos == 0 || pos == self.original_chars.len() {
            return true;
        }
        !self.original_chars[pos - 1].is_alphanumeric()
            || !self.original_chars[pos].is_alphanumeric()
    }
}

/// Finds every word-boundary occurrence of every lexicon term in `text`.
///
/// Overlapping matches of different terms are all reported; when one term is
/// a prefix of another at the same start, only the longest survives. The
/// result is ordered by span start.
pub fn match_terms(lexicon: &Lexicon, text: &str) -> Vec<TermMatch> {
    let folded = FoldedText::new(text);
    let mut by_start: BTreeMap<usize, TermMatch> = BTreeMap::new();

    for hit in lexicon.matcher.find_overlapping_iter(&folded.folded) {
        let Some(cs) = folded.char_index_of_byte(hit.start()) else {
            continue;
        };
        let term_chars = lexicon.entries[hit.pattern().as_usize()].term.chars().count();
        let ce = cs + term_chars;
        let Some((ostart, oend)) = folded.to_original_span(cs, ce) else {
            continue;
        };
        if !folded.is_boundary(ostart) || !folded.is_boundary(oend) {
            continue;
        }
        let entry = &lexicon.entries[hit.pattern().as_usize()];
        let surface: String = folded.original_chars[ostart..oend].iter().collect();
        let candidate = TermMatch {
            term: entry.term.clone(),
            level: entry.level,
            span: (ostart, oend),
            surface,
        };
        match by_start.get(&ostart) {
            Some(existing) if existing.span.1 >= oend => {}
            _ => {
                by_start.insert(ostart, candidate);
            }
        }
    }

    by_start.into_values().collect()
}

/// Deduplicates matches into prompt-injection order: unique terms by first
/// occurrence. An empty result is valid; the prompt then renders its
/// none-found marker.
pub fn terms_for_prompt(matches: &[TermMatch]) -> Vec<PromptTerm> {
    let mut seen = std::collections::HashSet::new();
    let mut sorted: Vec<&TermMatch> = matches.iter().collect();
    sorted.sort_by_key(|m| m.span.0);
    sorted
        .into_iter()
        .filter(|m| seen.insert(m.term.clone()))
        .map(|m| PromptTerm {
            term: m.term.clone(),
            level: m.level,
        })
        .collect()
}
