use super::*;
use crate::corpus::grammar::eval_arithmetic;

#[test]
fn empty_corpus() {
    let (_, seqs) = generate_corpus(Grammar::Arithmetic, 0, 16, 1).unwrap();
    assert!(seqs.is_empty());
}

#[test]
fn arithmetic_corpus_all_evaluate() {
    let (vocab, seqs) = generate_corpus(Grammar::Arithmetic, 500, 24, 7).unwrap();
    assert_eq!(seqs.len(), 500);
    for seq in &seqs {
        assert!(seq.len() <= 24);
        let text = vocab.detokenize(seq);
        assert!(
            eval_arithmetic(&text).is_some(),
            "generated invalid arithmetic {text:?}"
        );
    }
}

#[test]
fn balanced_parens_corpus_all_pass_stack_check() {
    let (vocab, seqs) = generate_corpus(Grammar::BalancedParens, 500, 20, 3).unwrap();
    for seq in &seqs {
        let text = vocab.detokenize(seq);
        assert!(seq.len() <= 20);
        assert!(
            Grammar::BalancedParens.is_valid(&text),
            "unbalanced {text:?}"
        );
    }
}

#[test]
fn templated_sentences_valid_and_invalid() {
    let (vocab, seqs) = generate_corpus(Grammar::TemplatedSentences, 200, 40, 5).unwrap();
    for seq in &seqs {
        let text = vocab.detokenize(seq);
        assert!(Grammar::TemplatedSentences.is_valid(&text), "{text:?}");
    }
    assert!(!Grammar::TemplatedSentences.is_valid("cat the sees dog a."));
    assert!(!Grammar::TemplatedSentences.is_valid("the cat sees a dog"));
}

#[test]
fn corpus_generation_is_deterministic() {
    let (_, a) = generate_corpus(Grammar::Arithmetic, 50, 20, 99).unwrap();
    let (_, b) = generate_corpus(Grammar::Arithmetic, 50, 20, 99).unwrap();
    assert_eq!(a, b);
}

#[test]
fn generation_error_when_max_len_below_min_valid() {
    assert!(matches!(
        generate_corpus(Grammar::TemplatedSentences, 5, 8, 1),
        Err(CorpusError::Generation { .. })
    ));
    assert!(generate_corpus(Grammar::Arithmetic, 5, 3, 1).is_err());
}

// ── tokenize / detokenize ────────────────────────────────────────────────

#[test]
fn tokenize_roundtrip_empty() {
    let vocab = Vocabulary::for_grammar(Grammar::Arithmetic);
    let seq = vocab.tokenize("").unwrap();
    assert!(seq.is_empty());
    assert_eq!(vocab.detokenize(&seq), "");
}

#[test]
fn tokenize_roundtrip_corpus() {
    let (vocab, seqs) = generate_corpus(Grammar::Arithmetic, 1000, 24, 11).unwrap();
    for seq in &seqs {
        let text = vocab.detokenize(seq);
        let back = vocab.tokenize(&text).unwrap();
        assert_eq!(&back, seq);
    }
}

#[test]
fn tokenize_unknown_character_lists_it() {
    let vocab = Vocabulary::for_grammar(Grammar::Arithmetic);
    match vocab.tokenize("1+z") {
        Err(CorpusError::UnknownCharacter(c)) => assert_eq!(c, 'z'),
        other => panic!("expected unknown character, got {other:?}"),
    }
}

#[test]
fn trailing_pad_detokenizes_to_prefix() {
    let vocab = Vocabulary::for_grammar(Grammar::Arithmetic);
    let mut seq = vocab.tokenize("1+2").unwrap();
    seq.ids.extend([PAD, PAD, PAD]);
    assert_eq!(vocab.detokenize(&seq), "1+2");
    assert_eq!(seq.content_len(), 3);
}

#[test]
fn vocab_save_load_roundtrip() {
    let dir = std::env::temp_dir().join("textflow_vocab_test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("vocab.txt");
    let vocab = Vocabulary::for_grammar(Grammar::TemplatedSentences);
    vocab.save(&path).unwrap();
    let loaded = Vocabulary::load(&path).unwrap();
    assert_eq!(loaded.size(), vocab.size());
    assert_eq!(loaded.id_of(' '), vocab.id_of(' '));
    assert_eq!(loaded.id_of('q'), vocab.id_of('q'));
    std::fs::remove_dir_all(&dir).ok();
}

// ── group_and_pad ────────────────────────────────────────────────────────

/// The documented grouping pattern: C__CCC____ with r=4 becomes
/// |C000|__00|CCC0|____| with latent mask [ctx, free, ctx, free].
#[test]
fn grouping_splits_runs_and_pads() {
    let vocab = Vocabulary::for_grammar(Grammar::Arithmetic);
    let seq = vocab.tokenize("1234567890").unwrap();
    let mask = BoundaryMask::new(vec![
        true, false, false, true, true, true, false, false, false, false,
    ]);
    let (grouped, latent) = group_and_pad(&seq, &mask, 4);
    assert_eq!(grouped.len(), 16);
    let ids = &grouped.ids;
    // |C000|
    assert_eq!(ids[0], seq.ids[0]);
    assert_eq!(&ids[1..4], &[PAD, PAD, PAD]);
    // |__00|
    assert_eq!(&ids[4..6], &seq.ids[1..3]);
    assert_eq!(&ids[6..8], &[PAD, PAD]);
    // |CCC0|
    assert_eq!(&ids[8..11], &seq.ids[3..6]);
    assert_eq!(ids[11], PAD);
    // |____|
    assert_eq!(&ids[12..16], &seq.ids[6..10]);
    assert_eq!(latent.flags(), &[true, false, true, false]);
}

#[test]
fn grouping_r1_is_identity() {
    let vocab = Vocabulary::for_grammar(Grammar::Arithmetic);
    let seq = vocab.tokenize("12+34").unwrap();
    let mask = BoundaryMask::new(vec![true, false, false, true, true]);
    let (grouped, latent) = group_and_pad(&seq, &mask, 1);
    assert_eq!(grouped, seq);
    assert_eq!(latent.flags(), mask.flags());
}

#[test]
fn grouping_all_free_pads_tail() {
    let vocab = Vocabulary::for_grammar(Grammar::Arithmetic);
    let seq = vocab.tokenize("1234567890").unwrap();
    let (grouped, latent) = group_and_pad(&seq, &BoundaryMask::free(10), 4);
    assert_eq!(grouped.len(), 12);
    assert_eq!(latent.len(), 3);
    assert!(!latent.any_constrained());
    assert_eq!(&grouped.ids[10..], &[PAD, PAD]);
}

#[test]
fn grouping_then_strip_pad_recovers_sequence() {
    let vocab = Vocabulary::for_grammar(Grammar::Arithmetic);
    let (_, seqs) = generate_corpus(Grammar::Arithmetic, 100, 24, 13).unwrap();
    let mut rng = crate::rng::Rng::new(5);
    for seq in &seqs {
        let mask =
            BoundaryMask::new((0..seq.len()).map(|_| rng.bernoulli(0.3)).collect());
        let (grouped, _) = group_and_pad(seq, &mask, 4);
        assert_eq!(grouped.strip_pad(), seq.strip_pad(), "{}", vocab.detokenize(seq));
    }
}

// ── corruption ───────────────────────────────────────────────────────────

fn fixture() -> (Vocabulary, TokenSequence) {
    let vocab = Vocabulary::for_grammar(Grammar::Arithmetic);
    let seq = vocab.tokenize("12+(34*5)-678").unwrap();
    (vocab, seq)
}

#[test]
fn corrupt_rate_zero_is_identity() {
    let (vocab, seq) = fixture();
    for kind in [
        CorruptionKind::LexicalDeletion,
        CorruptionKind::LexicalSubstitution,
        CorruptionKind::SemanticSwap,
    ] {
        let spec = CorruptionSpec::new(kind, Amount::Rate(0.0), 3);
        let out = corrupt(&seq, &spec, None, &vocab).unwrap();
        assert_eq!(out, seq, "{kind:?}");
    }
}

#[test]
fn deletion_count_shortens_by_k() {
    let (vocab, seq) = fixture();
    for k in [1usize, 3, 5] {
        let spec = CorruptionSpec::new(CorruptionKind::LexicalDeletion, Amount::Count(k), 11);
        let out = corrupt(&seq, &spec, None, &vocab).unwrap();
        assert_eq!(out.len(), seq.len() - k);
    }
}

#[test]
fn substitution_rate_empirical() {
    let vocab = Vocabulary::for_grammar(Grammar::Arithmetic);
    // 10k tokens across many sequences
    let mut edited = 0usize;
    let mut total = 0usize;
    for s in 0..100u64 {
        let ids: Vec<usize> = (0..100).map(|i| 2 + (i % (vocab.size() - 2))).collect();
        let seq = TokenSequence::new(ids);
        let spec =
            CorruptionSpec::new(CorruptionKind::LexicalSubstitution, Amount::Rate(0.2), 100 + s);
        let out = corrupt(&seq, &spec, None, &vocab).unwrap();
        edited += out
            .ids
            .iter()
            .zip(&seq.ids)
            .filter(|(a, b)| a != b)
            .count();
        total += seq.len();
    }
    let rate = edited as f64 / total as f64;
    assert!((rate - 0.2).abs() <= 0.02, "empirical rate {rate}");
}

#[test]
fn corruption_count_exceeding_length_errors() {
    let (vocab, seq) = fixture();
    let spec = CorruptionSpec::new(CorruptionKind::LexicalDeletion, Amount::Count(99), 1);
    assert!(matches!(
        corrupt(&seq, &spec, None, &vocab),
        Err(CorpusError::CountExceedsLength { .. })
    ));
}

#[test]
fn corruption_respects_constrained_positions() {
    let (vocab, seq) = fixture();
    let mut mask = BoundaryMask::free(seq.len());
    for i in 0..4 {
        mask.set(i, true);
    }
    for kind in [
        CorruptionKind::LexicalSubstitution,
        CorruptionKind::SemanticSwap,
        CorruptionKind::Permutation,
    ] {
        for seed in 0..20u64 {
            let spec = CorruptionSpec::new(kind, Amount::Rate(0.8), seed);
            let out = corrupt(&seq, &spec, Some(&mask), &vocab).unwrap();
            assert_eq!(&out.ids[..4], &seq.ids[..4], "{kind:?} seed {seed}");
        }
    }
}

#[test]
fn semantic_swap_exchanges_two_symbols() {
    let vocab = Vocabulary::for_grammar(Grammar::Arithmetic);
    let seq = vocab.tokenize("1212121").unwrap();
    let spec = CorruptionSpec::new(CorruptionKind::SemanticSwap, Amount::Count(1), 2);
    let out = corrupt(&seq, &spec, None, &vocab).unwrap();
    let text = vocab.detokenize(&out);
    assert_eq!(text, "2121212");
}

#[test]
fn permutation_reverses_a_span() {
    let vocab = Vocabulary::for_grammar(Grammar::Arithmetic);
    let seq = vocab.tokenize("123456789").unwrap();
    let spec = CorruptionSpec::new(CorruptionKind::Permutation, Amount::Count(4), 9);
    let out = corrupt(&seq, &spec, None, &vocab).unwrap();
    assert_eq!(out.len(), seq.len());
    assert_ne!(out, seq);
    // multiset of symbols unchanged
    let mut a = seq.ids.clone();
    let mut b = out.ids.clone();
    a.sort_unstable();
    b.sort_unstable();
    assert_eq!(a, b);
}

#[test]
fn corruption_deterministic_given_seed() {
    let (vocab, seq) = fixture();
    let spec = CorruptionSpec::new(CorruptionKind::LexicalSubstitution, Amount::Rate(0.5), 77);
    let a = corrupt(&seq, &spec, None, &vocab).unwrap();
    let b = corrupt(&seq, &spec, None, &vocab).unwrap();
    assert_eq!(a, b);
}
