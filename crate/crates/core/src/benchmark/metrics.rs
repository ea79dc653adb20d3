use std::collections::{BTreeMap, BTreeSet};

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::tokenizer::is_punctuation;

fn check_lengths(gold: usize, pred: usize, what: &str) -> Result<()> {
    if gold != pred {
        return Err(Error::Metric(format!(
            "{what}: {gold} gold items vs {pred} predictions"
        )));
    }
    Ok(())
}

/// Unweighted mean over classes present in gold of per-class F1, as a
/// percentage. A class with an empty precision + recall denominator scores
/// zero.
pub fn macro_f1(gold: &[String], pred: &[String]) -> Result<f64> {
    check_lengths(gold.len(), pred.len(), "macro_f1")?;
    if gold.is_empty() {
        return Err(Error::Metric("macro_f1 of an empty set".into()));
    }
    let classes: BTreeSet<&String> = gold.iter().collect();
    let mut f1_sum = 0.0f64;
    for class in &classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (g, p) in gold.iter().zip(pred) {
            let g_is = &g == class;
            let p_is = &p == class;
            match (g_is, p_is) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        f1_sum += f1_from_counts(tp, fp, fn_);
    }
    Ok(100.0 * f1_sum / classes.len() as f64)
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Exact-match fraction as a percentage.
pub fn accuracy(gold: &[String], pred: &[String]) -> Result<f64> {
    check_lengths(gold.len(), pred.len(), "accuracy")?;
    if gold.is_empty() {
        return Err(Error::Metric("accuracy of an empty set".into()));
    }
    let correct = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    Ok(100.0 * correct as f64 / gold.len() as f64)
}

/// A decoded entity span: `(start, end_inclusive, type)`.
pub type EntitySpan = (usize, usize, String);

/// Decode BIO tags into maximal typed spans. An `I-` tag opening a sequence
/// (after `O`, a different type, or at the start) is repaired to a span
/// start.
pub fn decode_bio_spans(tags: &[String]) -> BTreeSet<EntitySpan> {
    let mut spans = BTreeSet::new();
    let mut open: Option<(usize, String)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let (prefix, ty) = match tag.split_once('-') {
            Some((p, t)) => (p, t.to_string()),
            None => (tag.as_str(), String::new()),
        };
        match prefix {
            "B" => {
                if let Some((start, open_ty)) = open.take() {
                    spans.insert((start, i - 1, open_ty));
                }
                open = Some((i, ty));
            }
            "I" => match &open {
                Some((_, open_ty)) if *open_ty == ty => {}
                _ => {
                    // conventional repair: treat as a new span start
                    if let Some((start, open_ty)) = open.take() {
                        spans.insert((start, i - 1, open_ty));
                    }
                    open = Some((i, ty));
                }
            },
            _ => {
                if let Some((start, open_ty)) = open.take() {
                    spans.insert((start, i - 1, open_ty));
                }
            }
        }
    }
    if let Some((start, open_ty)) = open {
        spans.insert((start, tags.len() - 1, open_ty));
    }
    spans
}

/// Span-level micro-F1 over exact `(start, end, type)` matches pooled across
/// the corpus, as a percentage.
pub fn entity_micro_f1(gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<f64> {
    check_lengths(gold.len(), pred.len(), "entity_micro_f1")?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (g_tags, p_tags) in gold.iter().zip(pred) {
        check_lengths(g_tags.len(), p_tags.len(), "entity_micro_f1 sequence")?;
        let g_spans = decode_bio_spans(g_tags);
        let p_spans = decode_bio_spans(p_tags);
        tp += g_spans.intersection(&p_spans).count();
        fp += p_spans.difference(&g_spans).count();
        fn_ += g_spans.difference(&p_spans).count();
    }
    Ok(100.0 * f1_from_counts(tp, fp, fn_))
}

/// Answer normalization for QA scoring: NFC, punctuation stripped,
/// whitespace collapsed. No case folding (the target script is caseless).
pub fn normalize_answer(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    let stripped: String = nfc
        .chars()
        .map(|c| if is_punctuation(c) { ' ' } else { c })
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Gold reference for one QA item. Unanswerable items carry no answers and
/// score by the empty-prediction convention.
#[derive(Debug, Clone)]
pub struct QaGold {
    pub answers: Vec<String>,
    pub is_answerable: bool,
}

/// SQuAD-style EM and token-overlap F1 percentages. Multiple gold answers
/// score by the max; unanswerable gold scores 100 iff the prediction
/// normalizes to empty.
pub fn squad_em_f1(gold: &[QaGold], pred: &[String]) -> Result<(f64, f64)> {
    check_lengths(gold.len(), pred.len(), "squad_em_f1")?;
    if gold.is_empty() {
        return Err(Error::Metric("squad_em_f1 of an empty set".into()));
    }
    let mut em_sum = 0.0f64;
    let mut f1_sum = 0.0f64;
    for (g, p) in gold.iter().zip(pred) {
        let p_norm = normalize_answer(p);
        if !g.is_answerable {
            let score = if p_norm.is_empty() { 1.0 } else { 0.0 };
            em_sum += score;
            f1_sum += score;
            continue;
        }
        let mut best_em = 0.0f64;
        let mut best_f1 = 0.0f64;
        for answer in &g.answers {
            let a_norm = normalize_answer(answer);
            if a_norm == p_norm {
                best_em = 1.0;
            }
            best_f1 = best_f1.max(token_f1(&a_norm, &p_norm));
        }
        em_sum += best_em;
        f1_sum += best_f1;
    }
    let n = gold.len() as f64;
    Ok((100.0 * em_sum / n, 100.0 * f1_sum / n))
}

fn token_f1(gold_norm: &str, pred_norm: &str) -> f64 {
    let g_tokens: Vec<&str> = gold_norm.split_whitespace().collect();
    let p_tokens: Vec<&str> = pred_norm.split_whitespace().collect();
    if g_tokens.is_empty() || p_tokens.is_empty() {
        return if g_tokens.is_empty() && p_tokens.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    let mut g_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &g_tokens {
        *g_counts.entry(t).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for t in &p_tokens {
        if let Some(c) = g_counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / p_tokens.len() as f64;
    let recall = overlap as f64 / g_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}
