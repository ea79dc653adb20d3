use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;
use xxhash_rust::xxh3::xxh3_128;

use super::ingest::RawDocument;

/// A markup-free document with its dedup hash.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CleanDocument {
    pub id: String,
    pub text: String,
    pub word_count: usize,
    /// 128-bit digest of the NFC-normalized, whitespace-collapsed text.
    pub content_hash: u128,
    pub lang: String,
}

/// Hash used for exact deduplication: a pure function of the normalized
/// text, so equivalent documents collide regardless of surface spacing or
/// Unicode composition form.
pub fn content_hash(text: &str) -> u128 {
    let normalized: String = text.nfc().collect();
    let collapsed = collapse_whitespace(&normalized);
    xxh3_128(collapsed.as_bytes())
}

pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_space = true; // leading whitespace dropped
    for c in text.chars() {
        if c.is_whitespace() {
            if !in_space {
                out.push(' ');
                in_space = true;
            }
        } else {
            out.push(c);
            in_space = false;
        }
    }
    if out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Remove tags, script/style blocks, and comments; decode entity references;
/// collapse whitespace. Never fails: hopeless input ends up empty and is
/// dropped downstream.
pub fn strip_markup(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        if c == '<' {
            if let Some(consumed) = try_consume_markup(&chars[i..]) {
                // tags separate words even when the source lacked spaces
                out.push(' ');
                i += consumed;
                continue;
            }
            out.push(c);
            i += 1;
        } else if c == '&' {
            if let Some((decoded, consumed)) = try_decode_entity(&chars[i..]) {
                out.push_str(&decoded);
                i += consumed;
            } else {
                out.push(c);
                i += 1;
            }
        } else {
            out.push(c);
            i += 1;
        }
    }
    collapse_whitespace(&out)
}

/// Chars consumed by markup starting at `chars[0] == '<'`, or None when the
/// `<` is literal text.
fn try_consume_markup(chars: &[char]) -> Option<usize> {
    debug_assert_eq!(chars[0], '<');
    let next = *chars.get(1)?;

    // comment <!-- ... -->
    if chars.len() >= 4 && chars[1] == '!' && chars[2] == '-' && chars[3] == '-' {
        let mut i = 4;
        while i + 2 < chars.len() {
            if chars[i] == '-' && chars[i + 1] == '-' && chars[i + 2] == '>' {
                return Some(i + 3);
            }
            i += 1;
        }
        return Some(chars.len()); // unterminated comment swallows the rest
    }

    if !(next.is_ascii_alphabetic() || next == '/' || next == '!' || next == '?') {
        return None;
    }

    // find tag end
    let mut end = 1;
    while end < chars.len() && chars[end] != '>' {
        end += 1;
    }
    if end == chars.len() {
        return Some(chars.len()); // unterminated tag
    }
    let tag: String = chars[1..end].iter().collect::<String>().to_ascii_lowercase();
    let consumed = end + 1;

    // script/style swallow their contents up to the closing tag
    for name in ["script", "style"] {
        if tag.starts_with(name)
            && tag
                .chars()
                .nth(name.len())
                .map_or(true, |c| c.is_whitespace() || c == '/')
        {
            let closer: Vec<char> = format!("</{name}").chars().collect();
            let mut i = consumed;
            'outer: while i < chars.len() {
                if chars[i] == '<' && i + closer.len() <= chars.len() {
                    for (k, &cc) in closer.iter().enumerate() {
                        if chars[i + k].to_ascii_lowercase() != cc {
                            i += 1;
                            continue 'outer;
                        }
                    }
                    // skip to end of the closing tag
                    let mut j = i + closer.len();
                    while j < chars.len() && chars[j] != '>' {
                        j += 1;
                    }
                    return Some((j + 1).min(chars.len()));
                }
                i += 1;
            }
            return Some(chars.len());
        }
    }
    Some(consumed)
}

/// Common named character references plus numeric forms.
const NAMED_ENTITIES: &[(&str, &str)] = &[
    ("amp", "&"),
    ("lt", "<"),
    ("gt", ">"),
    ("quot", "\""),
    ("apos", "'"),
    ("nbsp", " "),
    ("copy", "\u{a9}"),
    ("reg", "\u{ae}"),
    ("trade", "\u{2122}"),
    ("hellip", "\u{2026}"),
    ("mdash", "\u{2014}"),
    ("ndash", "\u{2013}"),
    ("lsquo", "\u{2018}"),
    ("rsquo", "\u{2019}"),
    ("ldquo", "\u{201c}"),
    ("rdquo", "\u{201d}"),
    ("laquo", "\u{ab}"),
    ("raquo", "\u{bb}"),
    ("deg", "\u{b0}"),
    ("plusmn", "\u{b1}"),
    ("times", "\u{d7}"),
    ("divide", "\u{f7}"),
    ("middot", "\u{b7}"),
    ("bull", "\u{2022}"),
    ("sect", "\u{a7}"),
    ("para", "\u{b6}"),
    ("zwnj", "\u{200c}"),
    ("zwj", "\u{200d}"),
];

fn try_decode_entity(chars: &[char]) -> Option<(String, usize)> {
    debug_assert_eq!(chars[0], '&');
    let semi = chars.iter().take(12).position(|&c| c == ';')?;
    let body: String = chars[1..semi].iter().collect();
    if let Some(rest) = body.strip_prefix('#') {
        let code = if let Some(hex) = rest.strip_prefix(['x', 'X']) {
            u32::from_str_radix(hex, 16).ok()?
        } else {
            rest.parse::<u32>().ok()?
        };
        let c = char::from_u32(code)?;
        return Some((c.to_string(), semi + 1));
    }
    NAMED_ENTITIES
        .iter()
        .find(|(name, _)| *name == body)
        .map(|(_, repl)| (repl.to_string(), semi + 1))
}

/// Strip markup and build a [`CleanDocument`]; empty results are dropped.
pub fn clean_document(raw: &RawDocument, lang: &str) -> Option<CleanDocument> {
    let text = strip_markup(&raw.text);
    if text.is_empty() {
        return None;
    }
    let word_count = text.split_whitespace().count();
    Some(CleanDocument {
        id: raw.id.clone(),
        content_hash: content_hash(&text),
        word_count,
        text,
        lang: lang.to_string(),
    })
}

/// Document-level cleaning is pure, so the batch runs in parallel; output
/// order matches input order regardless of thread count.
pub fn clean_documents(raw: &[RawDocument], lang: &str) -> (Vec<CleanDocument>, usize) {
    let cleaned: Vec<Option<CleanDocument>> =
        raw.par_iter().map(|d| clean_document(d, lang)).collect();
    let mut out = Vec::with_capacity(cleaned.len());
    let mut dropped = 0usize;
    for c in cleaned {
        match c {
            Some(d) => out.push(d),
            None => dropped += 1,
        }
    }
    (out, dropped)
}
