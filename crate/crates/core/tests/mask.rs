mod common;

use progsynth::datagen::{sample_program, GenConfig};
use progsynth::dsl::mask::accepts;
use progsynth::dsl::{mask_init, MaskConfig, MAX_CONSTRUCT_DEPTH, MAX_PROGRAM_TOKENS, VOCAB_SIZE};
use progsynth::harness::Corpus;
use progsynth::rng::{derive_seed, seeded};
use progsynth::{parse, parse_text, Token};
use proptest::prelude::*;
use rand::seq::IteratorRandom;

fn within_limits(tokens: &[Token]) -> bool {
    match parse(tokens) {
        Ok(p) => tokens.len() <= MAX_PROGRAM_TOKENS && p.depth() <= MAX_CONSTRUCT_DEPTH,
        Err(_) => false,
    }
}

fn full_accept(tokens: &[Token]) -> bool {
    match accepts(tokens, MaskConfig::default()) {
        Ok(mut ms) => ms.advance(Token::End).is_ok() && ms.is_finished(),
        Err(_) => false,
    }
}

fn guided_rollout(seed: u64) -> Vec<Token> {
    let mut rng = seeded(seed);
    let mut ms = mask_init();
    let mut out = Vec::new();
    while !ms.is_finished() {
        let tok = ms.legal().tokens().choose(&mut rng).expect("live state has a legal token");
        ms.advance(tok).unwrap();
        if tok != Token::End {
            out.push(tok);
        }
    }
    out
}

#[test]
fn guided_rollouts_always_parse() {
    let mut longest = 0;
    for i in 0..10_000 {
        let tokens = guided_rollout(derive_seed(11, i));
        let p = parse(&tokens).unwrap_or_else(|e| panic!("{e}: {}", progsynth::dsl::detokenize(&tokens)));
        assert!(tokens.len() <= MAX_PROGRAM_TOKENS);
        assert!(p.depth() <= MAX_CONSTRUCT_DEPTH);
        longest = longest.max(tokens.len());
    }
    assert!(longest > 30, "{longest}");
}

#[test]
fn sampled_corpus_is_accepted() {
    let cfg = GenConfig::default();
    for i in 0..3000 {
        let mut rng = seeded(derive_seed(3, i));
        let Ok(p) = sample_program(&cfg, &mut rng) else { continue };
        assert!(full_accept(&p.to_tokens()), "{p}");
    }
    for (name, p) in Corpus::builtin().iter() {
        assert!(full_accept(&p.to_tokens()), "{name}");
    }
}

#[test]
fn independent_programs_are_accepted() {
    let mut rng = seeded(17);
    for _ in 0..3000 {
        let text = common::reference::random_program_text(&mut rng, MAX_PROGRAM_TOKENS);
        let p = parse_text(&text).unwrap();
        assert!(full_accept(&p.to_tokens()), "{text}");
    }
}

#[test]
fn limits_are_enforced() {
    let deep = "DEF run m( IF c( frontIsClear c) i( IF c( frontIsClear c) i( IF c( frontIsClear c) i( \
                IF c( frontIsClear c) i( IF c( frontIsClear c) i( move i) i) i) i) i) m)";
    assert!(parse_text(deep).is_ok());
    assert!(!full_accept(&parse_text(deep).unwrap().to_tokens()));
    let long = format!("DEF run m( {} m)", vec!["move"; 42].join(" "));
    assert!(!full_accept(&parse_text(&long).unwrap().to_tokens()));
    let fits = format!("DEF run m( {} m)", vec!["move"; 41].join(" "));
    assert!(full_accept(&parse_text(&fits).unwrap().to_tokens()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    // One-token substitutions of a valid program: the automaton agrees with
    // the parser plus the length and depth limits.
    #[test]
    fn mutants_agree_with_parser(seed in 0u64..1_000_000, pos in 0usize..64, tok in 0usize..50) {
        let mut tokens = guided_rollout(seed);
        let pos = pos % tokens.len();
        tokens[pos] = Token::from_index(tok).unwrap();
        prop_assert_eq!(full_accept(&tokens), within_limits(&tokens));
    }

    #[test]
    fn truncations_are_rejected(seed in 0u64..1_000_000, cut in 1usize..64) {
        let tokens = guided_rollout(seed);
        let cut = cut % tokens.len();
        prop_assert!(!full_accept(&tokens[..cut]));
        prop_assert!(accepts(&tokens[..cut], MaskConfig::default()).is_ok());
    }
}

#[test]
fn special_tokens_never_legal_mid_program() {
    let mut ms = mask_init();
    for t in guided_rollout(99) {
        for i in 50..VOCAB_SIZE {
            let special = Token::from_index(i).unwrap();
            if special != Token::End {
                assert!(!ms.is_legal(special));
            }
        }
        ms.advance(t).unwrap();
    }
}
