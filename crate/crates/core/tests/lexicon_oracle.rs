//! Dictionary matching checked against a brute-force (term x offset) scan.
//!
//! The oracle (in `common`) folds the original text char by char, compares
//! whole expansions against the term, and applies the boundary and
//! longest-at-start rules from first principles. The production matcher
//! goes through an automaton; the two must agree exactly.

mod common;

use common::{brute_force_matches, random_sentence, synthetic_entries};
use evidex_core::corpus::RiskLabel;
use evidex_core::lexicon::{match_terms, Lexicon};
use proptest::prelude::*;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;

#[test]
fn oracle_equivalence_on_500_random_sentences() {
    let entries = synthetic_entries();
    assert_eq!(entries.len(), 50);
    let lexicon = Lexicon::new(entries.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut nonempty = 0;
    for _ in 0..500 {
        let sentence = random_sentence(&mut rng, &entries);
        let fast = match_terms(&lexicon, &sentence);
        let slow = brute_force_matches(&entries, &sentence);
        assert_eq!(fast, slow, "mismatch on sentence {sentence:?}");
        if !fast.is_empty() {
            nonempty += 1;
        }
    }
    assert!(nonempty > 300, "generator should produce matches, got {nonempty}");
}

#[test]
fn oracle_agrees_on_unicode_case_folding() {
    let entries = vec![("die".to_string(), RiskLabel::Severe)];
    let lexicon = Lexicon::new(entries.clone()).unwrap();
    for text in [
        "DIE die Die dIe",
        "the soldier will DİE alone", // dotted capital I folds to two chars
        "Die! die? (die)",
        "di̇e with combining mark",
    ] {
        assert_eq!(
            match_terms(&lexicon, text),
            brute_force_matches(&entries, text),
            "mismatch on {text:?}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn soundness_and_completeness_vs_oracle(seed in any::<u64>()) {
        let entries = synthetic_entries();
        let lexicon = Lexicon::new(entries.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sentence = random_sentence(&mut rng, &entries);
        let fast = match_terms(&lexicon, &sentence);
        prop_assert_eq!(&fast, &brute_force_matches(&entries, &sentence));

        let chars: Vec<char> = sentence.chars().collect();
        for m in &fast {
            let surface: String = chars[m.span.0..m.span.1].iter().collect();
            prop_assert_eq!(&surface, &m.surface);
            prop_assert_eq!(surface.to_lowercase(), m.term.clone());
        }
    }
}
