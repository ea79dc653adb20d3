use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

/// Character budget for vocabulary training: the `limit` most frequent
/// characters of the corpus, ties broken by code point. Words containing
/// characters outside the budget tokenize to `[UNK]`.
#[derive(Debug, Clone)]
pub struct AlphabetBudget {
    pub limit: usize,
    /// Frequency-descending order (code point ascending on ties).
    chars: Vec<char>,
    set: HashSet<char>,
}

impl AlphabetBudget {
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn contains(&self, c: char) -> bool {
        self.set.contains(&c)
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn from_chars(limit: usize, chars: Vec<char>) -> Self {
        let set = chars.iter().copied().collect();
        AlphabetBudget { limit, chars, set }
    }
}

/// Count characters over whitespace-delimited words (whitespace itself never
/// enters the alphabet) and keep the most frequent `limit`.
pub fn build_alphabet<'a, I>(docs: I, limit: usize) -> Result<AlphabetBudget>
where
    I: IntoIterator<Item = &'a str>,
{
    if limit == 0 {
        return Err(Error::Tokenizer("alphabet limit must be at least 1".into()));
    }
    let mut counts: HashMap<char, u64> = HashMap::new();
    for doc in docs {
        for word in doc.split_whitespace() {
            for c in word.chars() {
                *counts.entry(c).or_insert(0) += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::Tokenizer("cannot build an alphabet from an empty corpus".into()));
    }
    let mut ranked: Vec<(char, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(limit);
    let chars: Vec<char> = ranked.into_iter().map(|(c, _)| c).collect();
    Ok(AlphabetBudget::from_chars(limit, chars))
}
