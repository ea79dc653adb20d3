//! Shared fixtures for the criterion benchmarks.

use lrlm_core::tokenizer::{build_alphabet, train_wordpiece, Vocab};

/// Deterministic word-soup corpus for tokenizer benchmarks.
pub fn bench_corpus(docs: usize, words_per_doc: usize) -> Vec<String> {
    let mut state = 0x5eed_5eed_5eedu64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    (0..docs)
        .map(|_| {
            (0..words_per_doc)
                .map(|_| {
                    let len = 2 + (next() % 7) as usize;
                    (0..len)
                        .map(|_| char::from(b'a' + (next() % 24) as u8))
                        .collect::<String>()
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

pub fn bench_vocab(corpus: &[String], size: usize) -> Vocab {
    let refs: Vec<&str> = corpus.iter().map(String::as_str).collect();
    let alphabet = build_alphabet(refs.iter().copied(), 400).expect("corpus non-empty");
    train_wordpiece(refs, size, &alphabet, 2).expect("trainable corpus")
}
