use crate::error::{Error, Result};
use crate::tokenizer::{encode_word, Vocab, UNK_ID};

/// Word-labeled text flattened to subword tokens: the first subword of each
/// word carries the word's label, continuations carry none, and
/// `tokens_per_word` preserves the inverse mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedLabels {
    pub token_ids: Vec<u32>,
    pub labels: Vec<Option<usize>>,
    pub tokens_per_word: Vec<usize>,
}

/// Align word-level labels to subword tokens (no specials added here; the
/// task encoder wraps the result with `[CLS]`/`[SEP]` and ignore marks).
pub fn align_labels_to_subwords(
    words: &[String],
    word_labels: &[usize],
    vocab: &Vocab,
) -> Result<AlignedLabels> {
    if words.len() != word_labels.len() {
        return Err(Error::Finetune(format!(
            "{} words vs {} labels",
            words.len(),
            word_labels.len()
        )));
    }
    let mut token_ids = Vec::new();
    let mut labels = Vec::new();
    let mut tokens_per_word = Vec::with_capacity(words.len());
    for (word, &label) in words.iter().zip(word_labels) {
        let ids = encode_word(word, vocab).unwrap_or_else(|| vec![UNK_ID]);
        let ids = if ids.is_empty() { vec![UNK_ID] } else { ids };
        tokens_per_word.push(ids.len());
        for (k, id) in ids.into_iter().enumerate() {
            token_ids.push(id);
            labels.push((k == 0).then_some(label));
        }
    }
    Ok(AlignedLabels {
        token_ids,
        labels,
        tokens_per_word,
    })
}

/// Inverse of the alignment: word-level predictions are the per-token
/// predictions at each word's first subword.
pub fn recover_word_predictions(
    token_predictions: &[usize],
    tokens_per_word: &[usize],
) -> Result<Vec<usize>> {
    let expected: usize = tokens_per_word.iter().sum();
    if token_predictions.len() != expected {
        return Err(Error::Finetune(format!(
            "{} token predictions for {} aligned tokens",
            token_predictions.len(),
            expected
        )));
    }
    let mut out = Vec::with_capacity(tokens_per_word.len());
    let mut cursor = 0usize;
    for &n in tokens_per_word {
        out.push(token_predictions[cursor]);
        cursor += n;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tokenizer::SPECIAL_TOKENS;

    fn vocab() -> Vocab {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        for c in "abcdef".chars() {
            tokens.push(c.to_string());
            tokens.push(format!("##{c}"));
        }
        tokens.push("ab".to_string());
        tokens.push("##cd".to_string());
        Vocab::from_tokens(tokens).unwrap()
    }

    fn words(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_subword_word_passes_label_through() {
        let v = vocab();
        let aligned = align_labels_to_subwords(&words(&["a"]), &[3], &v).unwrap();
        assert_eq!(aligned.labels, vec![Some(3)]);
        assert_eq!(aligned.tokens_per_word, vec![1]);
    }

    #[test]
    fn multi_subword_word_marks_continuations_ignore() {
        let v = vocab();
        // "abcdef" -> ab ##cd ##e ##f
        let aligned = align_labels_to_subwords(&words(&["abcdef"]), &[1], &v).unwrap();
        assert_eq!(aligned.tokens_per_word, vec![4]);
        assert_eq!(aligned.labels, vec![Some(1), None, None, None]);
    }

    #[test]
    fn length_mismatch_errors() {
        let v = vocab();
        assert!(align_labels_to_subwords(&words(&["a", "b"]), &[0], &v).is_err());
    }

    #[test]
    fn unknown_word_still_carries_label() {
        let v = vocab();
        let aligned = align_labels_to_subwords(&words(&["zzz"]), &[2], &v).unwrap();
        assert_eq!(aligned.token_ids, vec![UNK_ID]);
        assert_eq!(aligned.labels, vec![Some(2)]);
    }

    /// Round-trip property over random segmentations: recovery is exact for
    /// any word/label sequence.
    #[test]
    fn roundtrip_over_random_sequences() {
        let v = vocab();
        let alphabet: Vec<char> = "abcdef".chars().collect();
        let mut rng = rng::derive(31, 0);
        for _ in 0..200 {
            let n_words = 1 + rng::below(&mut rng, 12);
            let mut ws = Vec::with_capacity(n_words);
            let mut ls = Vec::with_capacity(n_words);
            for _ in 0..n_words {
                let len = 1 + rng::below(&mut rng, 6);
                let w: String = (0..len)
                    .map(|_| alphabet[rng::below(&mut rng, alphabet.len())])
                    .collect();
                ws.push(w);
                ls.push(rng::below(&mut rng, 9));
            }
            let aligned = align_labels_to_subwords(&ws, &ls, &v).unwrap();
            // pretend the model predicted the gold label at every first
            // subword and arbitrary labels elsewhere
            let mut token_preds = Vec::with_capacity(aligned.token_ids.len());
            let mut w = 0usize;
            for label in &aligned.labels {
                match label {
                    Some(l) => {
                        token_preds.push(*l);
                        w += 1;
                    }
                    None => token_preds.push(rng::below(&mut rng, 9)),
                }
            }
            assert_eq!(w, ws.len());
            let recovered = recover_word_predictions(&token_preds, &aligned.tokens_per_word).unwrap();
            assert_eq!(recovered, ls);
        }
    }
}
