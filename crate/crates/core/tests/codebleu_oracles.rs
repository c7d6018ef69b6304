#[path = "common/codebleu_corpus.rs"]
mod corpus;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tabrl_core::codesim::{codebleu, CodeBleu, CodeBleuWeights};

#[test]
fn components_match_oracles_on_frozen_pairs() {
    for i in 0..corpus::PAIRS.len() {
        corpus::check_pair(i, 1e-9).unwrap();
    }
}

#[test]
fn corpus_exercises_partial_scores() {
    // Guard against a degenerate corpus where every component is 0 or 1.
    let partial = (0..corpus::PAIRS.len())
        .map(corpus::oracle_components)
        .filter(|c| c.ngram > 0.0 && c.ngram < 1.0 && c.syntax.is_some_and(|s| s > 0.0 && s < 1.0))
        .count();
    assert!(partial >= 5, "{partial}");
}

#[test]
fn identity_on_fixtures() {
    let w = CodeBleuWeights::default();
    for src in corpus::IDENTITY_FIXTURES {
        assert!(tabrl_core::codesim::parser::parse_source(src).parse_ok, "{src}");
        assert!((codebleu(src, &[src], &w) - 1.0).abs() < 1e-12, "{src}");
    }
}

#[test]
fn reference_monotonicity_on_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = CodeBleu::default();
    for _ in 0..200 {
        let x = corpus::random_program(&mut rng);
        let r1 = corpus::random_program(&mut rng);
        let r2 = corpus::random_program(&mut rng);
        let one = s.score(&x, &[&r1]);
        let two = s.score(&x, &[&r1, &r2]);
        assert!(two >= one - 1e-12, "{x:?} {r1:?} {r2:?}: {one} > {two}");
    }
}

#[test]
fn oracle_bleu_agrees_with_library_on_random_programs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let x = corpus::random_program(&mut rng);
        let r = corpus::random_program(&mut rng);
        let lex = |s: &str| -> Vec<String> {
            tabrl_core::codesim::lexer::tokenize(s).tokens.into_iter().map(|t| t.lexeme).collect()
        };
        let (cx, cr) = (lex(&x), lex(&r));
        let want = corpus::oracle_bleu(&cx, std::slice::from_ref(&cr), 4, &|_| 1.0);
        let cx: Vec<&str> = cx.iter().map(String::as_str).collect();
        let cr: Vec<&str> = cr.iter().map(String::as_str).collect();
        let got = tabrl_core::codesim::ngram_bleu(&cx, &[cr], 4);
        assert!((got - want).abs() < 1e-12, "{x:?} vs {r:?}");
    }
}
