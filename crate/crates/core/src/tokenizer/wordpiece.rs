use std::collections::HashMap;

use crate::error::{Error, Result};

use super::alphabet::AlphabetBudget;
use super::encode::pre_tokenize;
use super::vocab::{Vocab, CONTINUATION_PREFIX, SPECIAL_TOKENS};

/// One merge performed during training, with the integer statistics behind
/// its score `pair_freq / (left_freq * right_freq)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeRecord {
    pub left: String,
    pub right: String,
    pub merged: String,
    pub pair_freq: u64,
    pub left_freq: u64,
    pub right_freq: u64,
}

/// Likelihood-scored pair merging: repeatedly merge the adjacent unit pair
/// maximizing `freq(pair) / (freq(left) * freq(right))`, ties broken by
/// lexicographic pair order, until the vocabulary reaches `vocab_size` or no
/// pair clears `min_pair_freq`.
pub fn train_wordpiece<'a, I>(
    docs: I,
    vocab_size: usize,
    alphabet: &AlphabetBudget,
    min_pair_freq: u64,
) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a str>,
{
    let word_freqs = count_words(docs, alphabet);
    train_from_word_freqs(&word_freqs, vocab_size, alphabet, min_pair_freq).map(|(v, _)| v)
}

/// As [`train_wordpiece`], also returning the merge trace.
pub fn train_wordpiece_with_trace<'a, I>(
    docs: I,
    vocab_size: usize,
    alphabet: &AlphabetBudget,
    min_pair_freq: u64,
) -> Result<(Vocab, Vec<MergeRecord>)>
where
    I: IntoIterator<Item = &'a str>,
{
    let word_freqs = count_words(docs, alphabet);
    train_from_word_freqs(&word_freqs, vocab_size, alphabet, min_pair_freq)
}

/// Joint bilingual vocabulary: both corpora train together after the smaller
/// one's word frequencies are scaled up so each language contributes about
/// the same token mass, steering merges toward an even split.
pub fn train_bilingual_wordpiece(
    corpus_a: &[String],
    corpus_b: &[String],
    vocab_size: usize,
    alphabet: &AlphabetBudget,
    min_pair_freq: u64,
) -> Result<Vocab> {
    let freqs_a = count_words(corpus_a.iter().map(String::as_str), alphabet);
    let freqs_b = count_words(corpus_b.iter().map(String::as_str), alphabet);
    let mass = |freqs: &HashMap<String, u64>| -> u64 {
        freqs
            .iter()
            .map(|(w, f)| f * w.chars().count() as u64)
            .sum::<u64>()
            .max(1)
    };
    let (mass_a, mass_b) = (mass(&freqs_a), mass(&freqs_b));
    let mut combined: HashMap<String, u64> = HashMap::new();
    // scale integer frequencies of each side by the opposite mass so the
    // balanced masses match exactly without rounding drift
    let (scale_a, scale_b) = (mass_b, mass_a);
    for (w, f) in freqs_a {
        *combined.entry(w).or_insert(0) += f * scale_a;
    }
    for (w, f) in freqs_b {
        *combined.entry(w).or_insert(0) += f * scale_b;
    }
    train_from_word_freqs(&combined, vocab_size, alphabet, min_pair_freq).map(|(v, _)| v)
}

fn count_words<'a, I>(docs: I, alphabet: &AlphabetBudget) -> HashMap<String, u64>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut freqs: HashMap<String, u64> = HashMap::new();
    for doc in docs {
        for word in pre_tokenize(doc) {
            // a word with out-of-alphabet characters can only ever become
            // [UNK]; it contributes nothing to merge statistics
            if word.chars().all(|c| alphabet.contains(c)) {
                *freqs.entry(word).or_insert(0) += 1;
            }
        }
    }
    freqs
}

fn train_from_word_freqs(
    word_freqs: &HashMap<String, u64>,
    vocab_size: usize,
    alphabet: &AlphabetBudget,
    min_pair_freq: u64,
) -> Result<(Vocab, Vec<MergeRecord>)> {
    if word_freqs.is_empty() {
        return Err(Error::Tokenizer("cannot train a vocabulary on an empty corpus".into()));
    }
    let base_size = SPECIAL_TOKENS.len() + 2 * alphabet.len();
    if vocab_size < base_size {
        return Err(Error::Tokenizer(format!(
            "vocab size {vocab_size} below the {base_size} needed for specials plus alphabet forms"
        )));
    }

    // deterministic word order: sort by (word) for reproducible iteration
    let mut words: Vec<(Vec<String>, u64)> = {
        let mut sorted: Vec<(&String, &u64)> = word_freqs.iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(b.0));
        sorted
            .into_iter()
            .map(|(w, &f)| {
                let units: Vec<String> = w
                    .chars()
                    .enumerate()
                    .map(|(i, c)| {
                        if i == 0 {
                            c.to_string()
                        } else {
                            format!("{CONTINUATION_PREFIX}{c}")
                        }
                    })
                    .collect();
                (units, f)
            })
            .collect()
    };

    let mut merges: Vec<MergeRecord> = Vec::new();
    let max_merges = vocab_size - base_size;

    while merges.len() < max_merges {
        let mut unit_freq: HashMap<&str, u64> = HashMap::new();
        let mut pair_freq: HashMap<(&str, &str), u64> = HashMap::new();
        for (units, f) in &words {
            for u in units {
                *unit_freq.entry(u).or_insert(0) += f;
            }
            for w in units.windows(2) {
                *pair_freq.entry((&w[0], &w[1])).or_insert(0) += f;
            }
        }

        // best score = pf / (lf * rf); compare as cross-multiplied integers
        // to avoid float ties, break ties by lexicographic pair order
        let mut best: Option<((&str, &str), u64, u64, u64)> = None;
        for (&(l, r), &pf) in &pair_freq {
            if pf < min_pair_freq {
                continue;
            }
            let lf = unit_freq[l];
            let rf = unit_freq[r];
            let better = match &best {
                None => true,
                Some((bpair, bpf, blf, brf)) => {
                    // pf/(lf*rf) > bpf/(blf*brf)  <=>  pf*blf*brf > bpf*lf*rf
                    let lhs = pf as u128 * (*blf as u128) * (*brf as u128);
                    let rhs = *bpf as u128 * (lf as u128) * (rf as u128);
                    lhs > rhs || (lhs == rhs && (l, r) < *bpair)
                }
            };
            if better {
                best = Some(((l, r), pf, lf, rf));
            }
        }
        let Some(((left, right), pf, lf, rf)) = best else {
            break; // merges exhausted
        };

        let merged = format!("{left}{}", right.strip_prefix(CONTINUATION_PREFIX).unwrap_or(right));
        let record = MergeRecord {
            left: left.to_string(),
            right: right.to_string(),
            merged: merged.clone(),
            pair_freq: pf,
            left_freq: lf,
            right_freq: rf,
        };

        let (left, right) = (record.left.clone(), record.right.clone());
        for (units, _) in words.iter_mut() {
            let mut i = 0;
            while i + 1 < units.len() {
                if units[i] == left && units[i + 1] == right {
                    units[i] = merged.clone();
                    units.remove(i + 1);
                } else {
                    i += 1;
                }
            }
        }
        merges.push(record);
    }

    // layout: specials, word-initial alphabet forms, continuation forms,
    // merges in merge order
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    for &c in alphabet.chars() {
        tokens.push(c.to_string());
    }
    for &c in alphabet.chars() {
        tokens.push(format!("{CONTINUATION_PREFIX}{c}"));
    }
    for m in &merges {
        tokens.push(m.merged.clone());
    }
    Ok((Vocab::from_tokens(tokens)?, merges))
}
