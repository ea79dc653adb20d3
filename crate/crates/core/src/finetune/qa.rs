use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{encode, encode_with_offsets, Vocab, CLS_ID, SEP_ID};

pub const DEFAULT_MAX_ANSWER_TOKENS: usize = 30;

/// One extractive-QA example. Answerable examples locate the answer text by
/// character offset in the context; unanswerable ones carry no answer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub context: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_char_start: Option<usize>,
    pub is_answerable: bool,
}

/// `[CLS] question [SEP] context [SEP]` with per-token character extents for
/// the context portion, so spans map back to text.
#[derive(Debug, Clone)]
pub struct QaEncoding {
    pub ids: Vec<u32>,
    pub segment_ids: Vec<u32>,
    /// Char extent `[start, end)` of each position; `None` outside the
    /// context segment.
    pub char_spans: Vec<Option<(usize, usize)>>,
    /// `[start, end)` token positions of the context segment.
    pub context_range: (usize, usize),
}

/// Encode question + context, truncating the context tail to fit `max_len`.
pub fn encode_qa(example: &QaExample, vocab: &Vocab, max_len: usize) -> QaEncoding {
    assert!(max_len >= 8, "max_len too small for QA inputs");
    let mut q_ids = encode(&example.question, vocab);
    // the question may claim at most half the budget
    q_ids.truncate((max_len - 3) / 2);
    let context_budget = max_len - 3 - q_ids.len();
    let ctx_tokens = encode_with_offsets(&example.context, vocab);

    let mut ids = Vec::with_capacity(max_len);
    let mut segment_ids = Vec::with_capacity(max_len);
    let mut char_spans = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    segment_ids.push(0);
    char_spans.push(None);
    for id in &q_ids {
        ids.push(*id);
        segment_ids.push(0);
        char_spans.push(None);
    }
    ids.push(SEP_ID);
    segment_ids.push(0);
    char_spans.push(None);
    let context_start = ids.len();
    for span in ctx_tokens.iter().take(context_budget) {
        ids.push(span.id);
        segment_ids.push(1);
        char_spans.push(Some((span.char_start, span.char_end)));
    }
    let context_end = ids.len();
    ids.push(SEP_ID);
    segment_ids.push(1);
    char_spans.push(None);

    QaEncoding {
        ids,
        segment_ids,
        char_spans,
        context_range: (context_start, context_end),
    }
}

/// Token span (inclusive) minimally covering the answer characters, or
/// `None` when the example is unanswerable or the answer was truncated away.
/// Dropped answerable examples are counted by the caller.
pub fn char_span_to_token_span(example: &QaExample, encoding: &QaEncoding) -> Option<(usize, usize)> {
    let answer = example.answer_text.as_deref()?;
    let char_start = example.answer_char_start?;
    let char_end = char_start + answer.chars().count();
    let mut start_tok = None;
    let mut end_tok = None;
    for pos in encoding.context_range.0..encoding.context_range.1 {
        let Some((s, e)) = encoding.char_spans[pos] else {
            continue;
        };
        // token overlaps the answer extent
        if e > char_start && s < char_end {
            if start_tok.is_none() {
                start_tok = Some(pos);
            }
            end_tok = Some(pos);
        }
    }
    match (start_tok, end_tok) {
        (Some(s), Some(e)) => {
            // a truncated answer (cut at the context budget) must not train
            // a partial span
            let covered_end = encoding.char_spans[e].map(|(_, ce)| ce).unwrap_or(0);
            if covered_end < char_end {
                None
            } else {
                Some((s, e))
            }
        }
        _ => None,
    }
}

/// Span decoding outcome.
#[derive(Debug, Clone, PartialEq)]
pub enum SpanPrediction {
    Unanswerable,
    Span { start: usize, end: usize, score: f64 },
}

/// Best-span decoding against a null threshold: the best valid span
/// maximizes `start[s] + end[e]` over `s <= e`, span length at most
/// `max_answer_tokens`, both ends inside the context; the null score is
/// `start[cls] + end[cls]`; predict unanswerable iff `null - best > tau`.
pub fn predict_span(
    start_logits: &[f64],
    end_logits: &[f64],
    encoding: &QaEncoding,
    tau: f64,
    max_answer_tokens: usize,
) -> Result<SpanPrediction> {
    if start_logits.len() != encoding.ids.len() || end_logits.len() != encoding.ids.len() {
        return Err(Error::Finetune(format!(
            "logit length {} / {} vs encoding length {}",
            start_logits.len(),
            end_logits.len(),
            encoding.ids.len()
        )));
    }
    let (ctx_start, ctx_end) = encoding.context_range;
    let null_score = start_logits[0] + end_logits[0];
    let mut best: Option<(usize, usize, f64)> = None;
    for s in ctx_start..ctx_end {
        for e in s..ctx_end.min(s + max_answer_tokens) {
            let score = start_logits[s] + end_logits[e];
            if best.map_or(true, |(_, _, b)| score > b) {
                best = Some((s, e, score));
            }
        }
    }
    match best {
        Some((s, e, score)) if null_score - score <= tau => Ok(SpanPrediction::Span {
            start: s,
            end: e,
            score,
        }),
        _ => Ok(SpanPrediction::Unanswerable),
    }
}

/// The answer text a predicted token span denotes.
pub fn span_text(encoding: &QaEncoding, context: &str, start: usize, end: usize) -> String {
    let Some((cs, _)) = encoding.char_spans[start] else {
        return String::new();
    };
    let Some((_, ce)) = encoding.char_spans[end] else {
        return String::new();
    };
    context.chars().skip(cs).take(ce.saturating_sub(cs)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::SPECIAL_TOKENS;

    fn vocab() -> Vocab {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        for c in "abcdefghij".chars() {
            tokens.push(c.to_string());
            tokens.push(format!("##{c}"));
        }
        tokens.push("ab".to_string());
        tokens.push("##cd".to_string());
        Vocab::from_tokens(tokens).unwrap()
    }

    fn example(context: &str, question: &str, answer: Option<(&str, usize)>) -> QaExample {
        QaExample {
            id: "q1".into(),
            context: context.into(),
            question: question.into(),
            answer_text: answer.map(|(t, _)| t.to_string()),
            answer_char_start: answer.map(|(_, s)| s),
            is_answerable: answer.is_some(),
        }
    }

    #[test]
    fn single_word_answer_at_origin() {
        let v = vocab();
        let ex = example("ab cd ef", "a", Some(("ab", 0)));
        let enc = encode_qa(&ex, &v, 64);
        let (s, e) = char_span_to_token_span(&ex, &enc).unwrap();
        assert_eq!(s, e);
        assert_eq!(enc.char_spans[s], Some((0, 2)));
        assert_eq!(span_text(&enc, &ex.context, s, e), "ab");
    }

    #[test]
    fn answer_crossing_subword_boundary_covers_whole_tokens() {
        let v = vocab();
        // "abcdef" tokenizes ab ##cd ##e ##f; answer "cde" needs tokens
        // ##cd + ##e, whose union covers chars [2,5)
        let ex = example("abcdef", "a", Some(("cde", 2)));
        let enc = encode_qa(&ex, &v, 64);
        let (s, e) = char_span_to_token_span(&ex, &enc).unwrap();
        // ##cd [2,4) and ##e [4,5) together cover the answer exactly
        assert_eq!(e - s, 1);
        assert_eq!(span_text(&enc, &ex.context, s, e), "cde");
    }

    #[test]
    fn answer_beyond_truncation_returns_none() {
        let v = vocab();
        let long_context = "ab ".repeat(100) + "ef";
        let pos = long_context.chars().count() - 2;
        let ex = example(&long_context, "a", Some(("ef", pos)));
        let enc = encode_qa(&ex, &v, 16);
        assert!(char_span_to_token_span(&ex, &enc).is_none());
    }

    #[test]
    fn unanswerable_has_no_span() {
        let v = vocab();
        let ex = example("ab cd", "a", None);
        let enc = encode_qa(&ex, &v, 32);
        assert!(char_span_to_token_span(&ex, &enc).is_none());
    }

    #[test]
    fn tau_extremes_force_behavior() {
        let v = vocab();
        let ex = example("ab cd ef", "a", Some(("cd", 3)));
        let enc = encode_qa(&ex, &v, 32);
        let n = enc.ids.len();
        let start: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        let end: Vec<f64> = (0..n).map(|i| i as f64 * 0.05).collect();
        let never = predict_span(&start, &end, &enc, f64::INFINITY, 30).unwrap();
        assert!(matches!(never, SpanPrediction::Span { .. }));
        let always = predict_span(&start, &end, &enc, f64::NEG_INFINITY, 30).unwrap();
        assert_eq!(always, SpanPrediction::Unanswerable);
    }

    /// Exhaustive oracle: decoded span equals the argmax over every valid
    /// pair for small contexts.
    #[test]
    fn toy_logits_match_exhaustive_enumeration() {
        let v = vocab();
        let ex = example("ab cd ef gh ij", "a", Some(("cd", 3)));
        let enc = encode_qa(&ex, &v, 32);
        let n = enc.ids.len();
        let mut state = 0x12345u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 1000) as f64 / 100.0 - 5.0
        };
        for _ in 0..50 {
            let start: Vec<f64> = (0..n).map(|_| next()).collect();
            let end: Vec<f64> = (0..n).map(|_| next()).collect();
            for max_len in [1, 2, 30] {
                let got = predict_span(&start, &end, &enc, 0.0, max_len).unwrap();
                // oracle: brute force over all (s, e) pairs
                let (cs, ce) = enc.context_range;
                let mut best: Option<(usize, usize, f64)> = None;
                for s in cs..ce {
                    for e in s..ce {
                        if e - s + 1 > max_len {
                            continue;
                        }
                        let score = start[s] + end[e];
                        if best.map_or(true, |(_, _, b)| score > b) {
                            best = Some((s, e, score));
                        }
                    }
                }
                let (bs, be, bscore) = best.unwrap();
                let null = start[0] + end[0];
                let expected = if null - bscore > 0.0 {
                    SpanPrediction::Unanswerable
                } else {
                    SpanPrediction::Span {
                        start: bs,
                        end: be,
                        score: bscore,
                    }
                };
                assert_eq!(got, expected);
            }
        }
    }
}
