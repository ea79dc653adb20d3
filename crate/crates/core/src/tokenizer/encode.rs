use crate::error::{Error, Result};

use super::vocab::{Vocab, CONTINUATION_PREFIX, UNK_ID};

/// Word boundary rules: split on Unicode whitespace, then split punctuation
/// into standalone characters (needed so answer spans can align to tokens).
pub fn pre_tokenize(text: &str) -> Vec<String> {
    pre_tokenize_with_offsets(text)
        .into_iter()
        .map(|(w, _, _)| w)
        .collect()
}

/// As [`pre_tokenize`], with `[start, end)` char offsets into `text`.
pub fn pre_tokenize_with_offsets(text: &str) -> Vec<(String, usize, usize)> {
    let mut words = Vec::new();
    let mut current = String::new();
    let mut current_start = 0usize;
    for (pos, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            if !current.is_empty() {
                words.push((std::mem::take(&mut current), current_start, pos));
            }
        } else if is_punctuation(c) {
            if !current.is_empty() {
                words.push((std::mem::take(&mut current), current_start, pos));
            }
            words.push((c.to_string(), pos, pos + 1));
        } else {
            if current.is_empty() {
                current_start = pos;
            }
            current.push(c);
        }
    }
    if !current.is_empty() {
        let end = text.chars().count();
        words.push((current, current_start, end));
    }
    words
}

/// Punctuation split off as standalone tokens. Covers ASCII punctuation, the
/// Unicode general-punctuation block, and the Devanagari dandas used as
/// Bangla sentence terminators.
pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || ('\u{2000}'..='\u{206F}').contains(&c)
        || c == '\u{0964}'
        || c == '\u{0965}'
}

/// Greedy longest-match-first segmentation of one word. `None` means the
/// word cannot be segmented (some piece, possibly a single character, is not
/// in the vocabulary) and must become `[UNK]`.
pub fn encode_word(word: &str, vocab: &Vocab) -> Option<Vec<u32>> {
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() {
        return Some(Vec::new());
    }
    let mut ids = Vec::new();
    let mut pos = 0usize;
    while pos < chars.len() {
        let mut found = None;
        let mut end = chars.len();
        while end > pos {
            let piece: String = chars[pos..end].iter().collect();
            let candidate = if pos == 0 {
                piece
            } else {
                format!("{CONTINUATION_PREFIX}{piece}")
            };
            if let Some(id) = vocab.id_of(&candidate) {
                found = Some((id, end));
                break;
            }
            end -= 1;
        }
        match found {
            Some((id, next)) => {
                ids.push(id);
                pos = next;
            }
            None => return None,
        }
    }
    Some(ids)
}

/// Encode whitespace-split, punctuation-split text. Words that cannot be
/// segmented map entirely to a single `[UNK]`. No specials are added.
pub fn encode(text: &str, vocab: &Vocab) -> Vec<u32> {
    let mut ids = Vec::new();
    for word in pre_tokenize(text) {
        match encode_word(&word, vocab) {
            Some(word_ids) => ids.extend(word_ids),
            None => ids.push(UNK_ID),
        }
    }
    ids
}

/// A token with its `[start, end)` char extent in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSpan {
    pub id: u32,
    pub char_start: usize,
    pub char_end: usize,
}

/// Offset-preserving encoding for span tasks. An `[UNK]` word keeps the
/// whole word's extent; subword pieces split the word's chars in order.
pub fn encode_with_offsets(text: &str, vocab: &Vocab) -> Vec<TokenSpan> {
    let mut out = Vec::new();
    for (word, start, end) in pre_tokenize_with_offsets(text) {
        match encode_word(&word, vocab) {
            Some(word_ids) => {
                let mut cursor = start;
                for id in word_ids {
                    let piece = vocab.token(id).expect("encode produced a known id");
                    let len = piece
                        .strip_prefix(CONTINUATION_PREFIX)
                        .unwrap_or(piece)
                        .chars()
                        .count();
                    out.push(TokenSpan {
                        id,
                        char_start: cursor,
                        char_end: (cursor + len).min(end),
                    });
                    cursor += len;
                }
            }
            None => out.push(TokenSpan {
                id: UNK_ID,
                char_start: start,
                char_end: end,
            }),
        }
    }
    out
}

/// Inverse of [`encode`] up to whitespace normalization for UNK-free input:
/// continuation pieces concatenate, other tokens join with single spaces.
pub fn decode(ids: &[u32], vocab: &Vocab) -> Result<String> {
    let mut out = String::new();
    for &id in ids {
        let token = vocab.token(id).map_err(|_| {
            Error::Tokenizer(format!("cannot decode id {id}: vocabulary has {} entries", vocab.size()))
        })?;
        if let Some(cont) = token.strip_prefix(CONTINUATION_PREFIX) {
            out.push_str(cont);
        } else {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(token);
        }
    }
    Ok(out)
}
