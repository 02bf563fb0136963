//! Frozen parser corpora: 200 synthetic extraction completions and 200
//! synthetic evaluator completions, each labeled at composition time.

use evidex_core::extract::parse_highlight_list;
use evidex_core::summarize::parse_score;
use serde::Deserialize;

#[derive(Deserialize)]
struct HighlightCase {
    raw: String,
    expected: Vec<String>,
}

#[derive(Deserialize)]
struct ScoreCase {
    raw: String,
    expected: Option<u8>,
}

fn load_lines<T: serde::de::DeserializeOwned>(content: &str) -> Vec<T> {
    content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("fixture line parses"))
        .collect()
}

#[test]
fn highlight_completion_corpus_parses_to_labels() {
    let cases: Vec<HighlightCase> =
        load_lines(include_str!("../fixtures/parse/highlight_completions.jsonl"));
    assert_eq!(cases.len(), 200);
    for (idx, case) in cases.iter().enumerate() {
        let got = parse_highlight_list(&case.raw);
        assert_eq!(
            got, case.expected,
            "case {idx} mismatch for raw {:?}",
            case.raw
        );
    }
}

#[test]
fn evaluator_score_corpus_parses_to_labels() {
    let cases: Vec<ScoreCase> =
        load_lines(include_str!("../fixtures/parse/evaluator_scores.jsonl"));
    assert_eq!(cases.len(), 200);
    let mut failures = 0;
    for (idx, case) in cases.iter().enumerate() {
        let got = parse_score(&case.raw).ok();
        assert_eq!(
            got, case.expected,
            "case {idx} mismatch for raw {:?}",
            case.raw
        );
        if let Some(score) = got {
            assert!((1..=10).contains(&score));
        } else {
            failures += 1;
        }
    }
    assert!(failures >= 30, "corpus should include failure cases, got {failures}");
}
