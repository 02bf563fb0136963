//! Grounds model-emitted phrases against the source post.
//!
//! Matching happens on whitespace-normalized text (runs collapsed to single
//! spaces) with original casing preserved. Exact containment wins; otherwise
//! a sliding-window search over windows within ±20% of the phrase length
//! finds the best normalized-edit-similarity window. Spans are reported in
//! character offsets into the original post text.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundingStatus {
    Exact,
    Fuzzy,
    Ungrounded,
}

/// Grounding outcome for one phrase.
#[derive(Debug, Clone, PartialEq)]
pub struct Grounding {
    pub status: GroundingStatus,
    /// Char-offset span into the original post; absent when ungrounded.
    pub span: Option<(usize, usize)>,
    /// Normalized edit similarity; 1.0 for exact, absent when ungrounded.
    pub similarity: Option<f64>,
}

impl Grounding {
    fn ungrounded() -> Self {
        Self {
            status: GroundingStatus::Ungrounded,
            span: None,
            similarity: None,
        }
    }
}

/// Whitespace-normalized text with a map back to original char offsets.
struct NormalizedText {
    chars: Vec<char>,
    text: String,
    /// Byte offset in `text` of each normalized char.
    byte_starts: Vec<usize>,
    /// Original char index each normalized char came from; a collapsed
    /// whitespace run maps to its first character.
    origin: Vec<usize>,
}

impl NormalizedText {
    fn new(original: &str) -> Self {
        let mut chars = Vec::new();
        let mut text = String::new();
        let mut byte_starts = Vec::new();
        let mut origin = Vec::new();
        let mut pending_ws: Option<usize> = None;
        for (i, ch) in original.chars().enumerate() {
            if ch.is_whitespace() {
                if pending_ws.is_none() {
                    pending_ws = Some(i);
                }
                continue;
            }
            if let Some(ws_start) = pending_ws.take() {
                if !chars.is_empty() {
                    byte_starts.push(text.len());
                    text.push(' ');
                    chars.push(' ');
                    origin.push(ws_start);
                }
            }
            byte_starts.push(text.len());
            text.push(ch);
            chars.push(ch);
            origin.push(i);
        }
        Self {
            chars,
            text,
            byte_starts,
            origin,
        }
    }

    fn char_index_of_byte(&self, byte: usize) -> usize {
        self.byte_starts
            .binary_search(&byte)
            .expect("matches start at char boundaries")
    }

    /// Original char span covering normalized chars `[start, end)`.
    fn original_span(&self, start: usize, end: usize) -> (usize, usize) {
        (self.origin[start], self.origin[end - 1] + 1)
    }
}

/// Collapses whitespace runs to single spaces and trims the ends.
pub fn normalize_ws(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_ws = true;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !last_ws {
                out.push(' ');
            }
            last_ws = true;
        } else {
            out.push(ch);
            last_ws = false;
        }
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Levenshtein distance over chars, two-row rolling DP.
fn edit_distance(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut current = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        current[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let substitution = prev[j] + usize::from(ca != cb);
            current[j + 1] = substitution.min(prev[j + 1] + 1).min(current[j] + 1);
        }
        std::mem::swap(&mut prev, &mut current);
    }
    prev[b.len()]
}

/// `1 - distance / max(len)` over chars.
pub fn edit_similarity(a: &[char], b: &[char]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - edit_distance(a, b) as f64 / longest as f64
}

/// Window lengths searched for a phrase of `m` normalized chars:
/// `ceil(0.8*m)` through `floor(1.2*m)`, clamped to the text.
pub fn fuzzy_window_bounds(m: usize, n: usize) -> (usize, usize) {
    let lo = ((4 * m).div_ceil(5)).max(1);
    let hi = (6 * m / 5).min(n);
    (lo, hi)
}

/// Grounds one phrase against a post.
///
/// Exact containment (whitespace-normalized, case-preserving) is tried
/// first, taking the leftmost occurrence. Otherwise the best fuzzy window
/// wins if its similarity clears `threshold`; ties prefer the earlier and
/// then the shorter window.
pub fn ground_phrase(phrase: &str, post_text: &str, threshold: f64) -> Grounding {
    let norm_phrase: Vec<char> = normalize_ws(phrase).chars().collect();
    if norm_phrase.is_empty() {
        return Grounding::ungrounded();
    }
    let post = NormalizedText::new(post_text);
    if post.chars.is_empty() {
        return Grounding::ungrounded();
    }

    // Exact pass.
    let phrase_string: String = norm_phrase.iter().collect();
    if let Some(byte_pos) = post.text.find(&phrase_string) {
        let start = post.char_index_of_byte(byte_pos);
        let span = post.original_span(start, start + norm_phrase.len());
        return Grounding {
            status: GroundingStatus::Exact,
            span: Some(span),
            similarity: Some(1.0),
        };
    }

    // Fuzzy pass: best window by similarity, first-found wins ties.
    let n = post.chars.len();
    let m = norm_phrase.len();
    let (lo, hi) = fuzzy_window_bounds(m, n);
    let mut best: Option<(f64, usize, usize)> = None;
    for start in 0..n {
        for len in lo..=hi {
            if start + len > n {
                break;
            }
            // A window whose length difference alone caps similarity at or
            // below the current best cannot win.
            if let Some((best_sim, _, _)) = best {
                let cap = 1.0 - m.abs_diff(len) as f64 / m.max(len) as f64;
                if cap <= best_sim {
                    continue;
                }
            }
            let sim = edit_similarity(&norm_phrase, &post.chars[start..start + len]);
            if best.map_or(true, |(best_sim, _, _)| sim > best_sim) {
                best = Some((sim, start, len));
            }
        }
    }

    match best {
        Some((sim, start, len)) if sim >= threshold => Grounding {
            status: GroundingStatus::Fuzzy,
            span: Some(post.original_span(start, start + len)),
            similarity: Some(sim),
        },
        _ => Grounding::ungrounded(),
    }
}

/// Slices a string by char offsets.
pub fn slice_chars(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}
