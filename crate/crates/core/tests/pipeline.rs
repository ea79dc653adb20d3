//! Cross-module pipeline invariants, mostly property-based.

use proptest::prelude::*;

use lrlm_core::corpus::{content_hash, exact_dedup, strip_markup, CleanDocument};
use lrlm_core::tokenizer::{
    build_alphabet, decode, encode, pack_sequences, train_wordpiece, Vocab, SPECIAL_TOKENS,
};

fn doc(id: usize, text: &str) -> CleanDocument {
    CleanDocument {
        id: format!("d{id}"),
        text: text.to_string(),
        word_count: text.split_whitespace().count(),
        content_hash: content_hash(text),
        lang: "xx".into(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Packing conserves every token and never crosses document boundaries.
    #[test]
    fn packing_conserves_tokens(
        docs in prop::collection::vec((1usize..600).prop_map(|n| n), 1..12),
        max_len in 2usize..700,
    ) {
        let encoded: Vec<(String, Vec<u32>)> = docs
            .iter()
            .enumerate()
            .map(|(i, &n)| (format!("d{i}"), (0..n as u32).map(|t| t + i as u32 * 1000).collect()))
            .collect();
        let total: usize = docs.iter().sum();
        let (samples, stats) = pack_sequences(encoded.clone(), max_len).unwrap();
        prop_assert_eq!(stats.total_tokens, total);
        prop_assert!(samples.iter().all(|s| s.len() <= max_len && !s.is_empty()));
        // no sample mixes documents: its ids all carry the same doc marker
        for s in &samples {
            let marker = s.token_ids[0] / 1000;
            prop_assert!(s.token_ids.iter().all(|&id| id / 1000 == marker));
            prop_assert_eq!(&s.doc_id, &format!("d{marker}"));
        }
        // per-document concatenation reproduces the original stream
        for (doc_id, ids) in &encoded {
            let rebuilt: Vec<u32> = samples
                .iter()
                .filter(|s| &s.doc_id == doc_id)
                .flat_map(|s| s.token_ids.iter().copied())
                .collect();
            prop_assert_eq!(&rebuilt, ids);
        }
    }

    /// Greedy encoding round-trips exactly over in-alphabet corpora, and
    /// never produces an id outside the vocabulary.
    #[test]
    fn encode_decode_roundtrip(words in prop::collection::vec("[abcd]{1,8}", 1..12)) {
        let corpus_text = words.join(" ");
        let alphabet = build_alphabet([corpus_text.as_str()], 400).unwrap();
        let vocab_size = SPECIAL_TOKENS.len() + 2 * alphabet.len() + 6;
        let vocab = train_wordpiece([corpus_text.as_str()], vocab_size, &alphabet, 2).unwrap();
        let ids = encode(&corpus_text, &vocab);
        prop_assert!(ids.iter().all(|&id| (id as usize) < vocab.size()));
        let decoded = decode(&ids, &vocab).unwrap();
        prop_assert_eq!(decoded, corpus_text);
    }

    /// Markup stripping never leaves a tag-shaped region behind.
    #[test]
    fn strip_markup_leaves_no_tags(
        parts in prop::collection::vec(
            prop_oneof![
                "[a-z \u{995}-\u{9a8}]{0,12}",
                Just("<p>".to_string()),
                Just("</p>".to_string()),
                Just("<script>var x = 1;</script>".to_string()),
                Just("<style>p{}</style>".to_string()),
                Just("<a href=\"x\">".to_string()),
                Just("<!-- note -->".to_string()),
                Just("&amp;".to_string()),
                Just("&#2453;".to_string()),
                Just("< 5".to_string()),
            ],
            0..24,
        )
    ) {
        let raw: String = parts.concat();
        let cleaned = strip_markup(&raw);
        let tag_like = regex::Regex::new(r"<[A-Za-z][^>]*>").unwrap();
        prop_assert!(!tag_like.is_match(&cleaned), "{} -> {}", raw, cleaned);
        // whitespace fully collapsed
        prop_assert!(!cleaned.contains("  "));
        prop_assert_eq!(cleaned.trim(), &cleaned[..]);
    }

    /// Exact dedup is idempotent and keeps one representative per hash.
    #[test]
    fn exact_dedup_idempotent(texts in prop::collection::vec("[abc ]{0,20}", 0..40)) {
        let docs: Vec<CleanDocument> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| doc(i, t))
            .collect();
        let distinct: std::collections::HashSet<u128> =
            docs.iter().map(|d| d.content_hash).collect();
        let (pass1, removed1) = exact_dedup(docs.clone());
        prop_assert_eq!(pass1.len(), distinct.len());
        prop_assert_eq!(removed1, docs.len() - distinct.len());
        let (pass2, removed2) = exact_dedup(pass1.clone());
        prop_assert_eq!(removed2, 0);
        prop_assert_eq!(pass2.len(), pass1.len());
    }
}

/// Vocabulary growth is monotone: merges for a smaller budget are a prefix
/// of merges for a larger one (fixed corpus).
#[test]
fn vocab_growth_monotone_across_sizes() {
    let corpus = [
        "the mat sat on the hat",
        "the cat sat on the mat",
        "a rat sat on a bat",
        "that cat and that rat",
    ];
    let alphabet = build_alphabet(corpus, 400).unwrap();
    let base = SPECIAL_TOKENS.len() + 2 * alphabet.len();
    let mut previous: Option<Vec<String>> = None;
    for extra in [2usize, 5, 9, 14] {
        let (_, trace) =
            lrlm_core::tokenizer::train_wordpiece_with_trace(corpus, base + extra, &alphabet, 1)
                .unwrap();
        let merges: Vec<String> = trace.into_iter().map(|m| m.merged).collect();
        if let Some(prev) = &previous {
            assert!(merges.len() >= prev.len());
            assert_eq!(&merges[..prev.len()], &prev[..], "prefix violated at {extra}");
        }
        previous = Some(merges);
    }
}

/// Tokenizing a corpus built from a bigger alphabet than the budget maps
/// out-of-alphabet words to UNK but keeps everything else intact.
#[test]
fn out_of_alphabet_words_become_unk_end_to_end() {
    let corpus = ["aaa bbb aaa ccc", "aaa bbb zzz"];
    let alphabet = build_alphabet(corpus, 2).unwrap(); // {a, b} only
    let vocab = train_wordpiece(corpus, 40, &alphabet, 1).unwrap();
    let ids = encode("aaa zzz bbb", &vocab);
    let tokens: Vec<&str> = ids.iter().map(|&i| vocab.token(i).unwrap()).collect();
    assert_eq!(tokens[0], "aaa");
    assert_eq!(tokens[1], "[UNK]");
    assert!(tokens[2..].concat().replace("##", "").contains("bbb"));
}

/// A vocabulary written by one component and read by another stays usable.
#[test]
fn vocab_file_interchange() {
    let corpus = ["abc abd abe", "abc abd"];
    let alphabet = build_alphabet(corpus, 400).unwrap();
    let vocab = train_wordpiece(corpus, 30, &alphabet, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.txt");
    vocab.write(&path).unwrap();
    let reloaded = Vocab::read(&path).unwrap();
    let text = "abc abe";
    assert_eq!(encode(text, &vocab), encode(text, &reloaded));
}
