use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64;

use crate::error::{Error, Result};
use crate::rng;

use super::clean::CleanDocument;

/// Linear classifier over averaged hashed character n-gram features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LangIdModel {
    pub ngram_orders: Vec<usize>,
    pub hash_buckets: usize,
    pub classes: Vec<String>,
    /// Row-major `[hash_buckets x classes]`.
    pub weights: Vec<f64>,
    pub held_out_accuracy: f64,
}

impl LangIdModel {
    /// Class probabilities for a text; sums to one.
    pub fn classify(&self, text: &str) -> Vec<f64> {
        let feats = hashed_ngram_features(text, &self.ngram_orders, self.hash_buckets);
        let k = self.classes.len();
        let mut logits = vec![0.0f64; k];
        for (bucket, value) in feats {
            let row = &self.weights[bucket * k..(bucket + 1) * k];
            for (l, &w) in logits.iter_mut().zip(row) {
                *l += w * value;
            }
        }
        softmax(&logits)
    }

    pub fn predict(&self, text: &str) -> (usize, f64) {
        let probs = self.classify(text);
        let mut best = 0usize;
        for i in 1..probs.len() {
            if probs[i] > probs[best] {
                best = i;
            }
        }
        (best, probs[best])
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Sparse averaged features: counts of hashed character n-grams normalized
/// by the total n-gram count.
fn hashed_ngram_features(text: &str, orders: &[usize], buckets: usize) -> Vec<(usize, f64)> {
    let chars: Vec<char> = text.chars().collect();
    let mut counts: HashMap<usize, f64> = HashMap::new();
    let mut total = 0.0f64;
    let mut buf = String::new();
    for &n in orders {
        if chars.len() < n {
            continue;
        }
        for w in chars.windows(n) {
            buf.clear();
            buf.extend(w.iter());
            let bucket = (xxh3_64(buf.as_bytes()) % buckets as u64) as usize;
            *counts.entry(bucket).or_insert(0.0) += 1.0;
            total += 1.0;
        }
    }
    if total == 0.0 {
        return Vec::new();
    }
    let mut feats: Vec<(usize, f64)> = counts.into_iter().map(|(b, c)| (b, c / total)).collect();
    feats.sort_unstable_by_key(|&(b, _)| b);
    feats
}

pub const DEFAULT_NGRAM_ORDERS: [usize; 4] = [1, 2, 3, 4];

/// Train multinomial logistic regression with per-example SGD. Deterministic
/// given the seed; empty texts are dropped; the report carries held-out
/// accuracy from a 10% split.
pub fn train_langid(
    labeled: &[(String, String)],
    hash_buckets: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<LangIdModel> {
    let labeled: Vec<&(String, String)> = labeled.iter().filter(|(t, _)| !t.trim().is_empty()).collect();
    let mut classes: Vec<String> = labeled.iter().map(|(_, c)| c.clone()).collect();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Corpus(format!(
            "language classifier needs at least 2 classes, got {}",
            classes.len()
        )));
    }
    let mut per_class: HashMap<&str, usize> = HashMap::new();
    for (_, c) in &labeled {
        *per_class.entry(c.as_str()).or_insert(0) += 1;
    }
    if let Some((c, n)) = per_class.iter().find(|(_, &n)| n < 50) {
        return Err(Error::Corpus(format!(
            "class {c} has only {n} examples; at least 50 per class required"
        )));
    }

    let orders = DEFAULT_NGRAM_ORDERS.to_vec();
    let class_index: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let features: Vec<(Vec<(usize, f64)>, usize)> = labeled
        .iter()
        .map(|(t, c)| {
            (
                hashed_ngram_features(t, &orders, hash_buckets),
                class_index[c.as_str()],
            )
        })
        .collect();

    // deterministic shuffle, then a 10% held-out tail
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut shuffle_rng = rng::derive(seed, 0x1a9);
    for i in (1..order.len()).rev() {
        let j = rng::below(&mut shuffle_rng, i + 1);
        order.swap(i, j);
    }
    let held_out = (features.len() / 10).max(1);
    let (train_idx, eval_idx) = order.split_at(order.len() - held_out);

    let k = classes.len();
    let mut weights = vec![0.0f64; hash_buckets * k];
    for _ in 0..epochs {
        for &i in train_idx {
            let (feats, target) = &features[i];
            let mut logits = vec![0.0f64; k];
            for &(bucket, value) in feats {
                let row = &weights[bucket * k..(bucket + 1) * k];
                for (l, &w) in logits.iter_mut().zip(row) {
                    *l += w * value;
                }
            }
            let probs = softmax(&logits);
            for &(bucket, value) in feats {
                let row = &mut weights[bucket * k..(bucket + 1) * k];
                for (c, slot) in row.iter_mut().enumerate() {
                    let indicator = if c == *target { 1.0 } else { 0.0 };
                    *slot += lr * (indicator - probs[c]) * value;
                }
            }
        }
    }

    let mut correct = 0usize;
    for &i in eval_idx {
        let (feats, target) = &features[i];
        let mut logits = vec![0.0f64; k];
        for &(bucket, value) in feats {
            let row = &weights[bucket * k..(bucket + 1) * k];
            for (l, &w) in logits.iter_mut().zip(row) {
                *l += w * value;
            }
        }
        let probs = softmax(&logits);
        let pred = (0..k).max_by(|&a, &b| probs[a].partial_cmp(&probs[b]).unwrap()).unwrap();
        if pred == *target {
            correct += 1;
        }
    }
    let held_out_accuracy = correct as f64 / eval_idx.len() as f64;

    Ok(LangIdModel {
        ngram_orders: orders,
        hash_buckets,
        classes,
        weights,
        held_out_accuracy,
    })
}

/// Keep documents the model assigns to `keep` with probability at least
/// `min_prob`; everything else is dropped.
pub fn filter_lang(
    docs: Vec<CleanDocument>,
    model: &LangIdModel,
    keep: &str,
    min_prob: f64,
) -> Result<(Vec<CleanDocument>, usize)> {
    let keep_idx = model
        .classes
        .iter()
        .position(|c| c == keep)
        .ok_or_else(|| Error::Corpus(format!("class {keep} not in model classes {:?}", model.classes)))?;
    let mut kept = Vec::with_capacity(docs.len());
    let mut dropped = 0usize;
    for mut doc in docs {
        let (pred, prob) = model.predict(&doc.text);
        if pred == keep_idx && prob >= min_prob {
            doc.lang = keep.to_string();
            kept.push(doc);
        } else {
            dropped += 1;
        }
    }
    Ok((kept, dropped))
}

/// Bootstrap heuristic for when no labeled data exists yet: the fraction of
/// alphabetic chars in the Bangla block (U+0980..U+09FF).
pub fn bangla_script_ratio(text: &str) -> f64 {
    let mut letters = 0usize;
    let mut bangla = 0usize;
    for c in text.chars() {
        if c.is_alphabetic() {
            letters += 1;
            if ('\u{0980}'..='\u{09FF}').contains(&c) {
                bangla += 1;
            }
        }
    }
    if letters == 0 {
        0.0
    } else {
        bangla as f64 / letters as f64
    }
}

/// Script-ratio fallback filter: keep documents with at least `min_ratio` of
/// their letters in the Bangla block.
pub fn filter_by_script(docs: Vec<CleanDocument>, min_ratio: f64) -> (Vec<CleanDocument>, usize) {
    let mut kept = Vec::with_capacity(docs.len());
    let mut dropped = 0usize;
    for doc in docs {
        if bangla_script_ratio(&doc.text) >= min_ratio {
            kept.push(doc);
        } else {
            dropped += 1;
        }
    }
    (kept, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::clean::content_hash;

    /// Synthetic docs from a script: Bangla block letters vs ASCII letters.
    fn synth_doc(seed: u64, bangla: bool, words: usize) -> String {
        let mut state = seed.wrapping_mul(0x2545F4914F6CDD1D) | 1;
        let mut out = Vec::with_capacity(words);
        for _ in 0..words {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let len = 2 + (state % 6) as usize;
            let word: String = (0..len)
                .map(|k| {
                    let r = (state.rotate_left(k as u32 * 7)) as u32;
                    if bangla {
                        char::from_u32(0x0985 + (r % 40)).unwrap()
                    } else {
                        char::from((b'a' + (r % 26) as u8) as char)
                    }
                })
                .collect();
            out.push(word);
        }
        out.join(" ")
    }

    fn labeled_set(n_per_class: usize) -> Vec<(String, String)> {
        let mut data = Vec::new();
        for i in 0..n_per_class {
            data.push((synth_doc(i as u64 + 1, true, 12), "bn".to_string()));
            data.push((synth_doc(i as u64 + 1000, false, 12), "en".to_string()));
        }
        data
    }

    #[test]
    fn separable_scripts_reach_high_held_out_accuracy() {
        let data = labeled_set(500);
        let model = train_langid(&data, 1 << 12, 3, 0.5, 7).unwrap();
        assert!(
            model.held_out_accuracy >= 0.99,
            "held-out accuracy {}",
            model.held_out_accuracy
        );
    }

    #[test]
    fn single_class_errors() {
        let data: Vec<(String, String)> = (0..100)
            .map(|i| (synth_doc(i, true, 10), "bn".to_string()))
            .collect();
        assert!(train_langid(&data, 1 << 10, 1, 0.5, 7).is_err());
    }

    #[test]
    fn undersized_class_errors() {
        let mut data = labeled_set(60);
        data.truncate(61); // second class down to ~1 example
        assert!(train_langid(&data, 1 << 10, 1, 0.5, 7).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let data = labeled_set(60);
        let a = train_langid(&data, 1 << 10, 2, 0.5, 9).unwrap();
        let b = train_langid(&data, 1 << 10, 2, 0.5, 9).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.held_out_accuracy, b.held_out_accuracy);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let data = labeled_set(60);
        let model = train_langid(&data, 1 << 10, 2, 0.5, 9).unwrap();
        for text in [
            synth_doc(5, true, 8),
            synth_doc(6, false, 8),
            "mixed \u{0995} latin".to_string(),
            "?!".to_string(),
        ] {
            let probs = model.classify(&text);
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9, "sum {sum} for {text}");
        }
    }

    fn mk_doc(id: &str, text: &str) -> CleanDocument {
        CleanDocument {
            id: id.into(),
            text: text.into(),
            word_count: text.split_whitespace().count(),
            content_hash: content_hash(text),
            lang: "und".into(),
        }
    }

    #[test]
    fn filter_keeps_target_script_docs() {
        let data = labeled_set(200);
        let model = train_langid(&data, 1 << 12, 3, 0.5, 7).unwrap();
        let docs = vec![
            mk_doc("bn1", &synth_doc(31, true, 15)),
            mk_doc("en1", &synth_doc(32, false, 15)),
            mk_doc("bn2", &synth_doc(33, true, 15)),
        ];
        let (kept, dropped) = filter_lang(docs, &model, "bn", 0.5).unwrap();
        assert_eq!(dropped, 1);
        let ids: Vec<&str> = kept.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, vec!["bn1", "bn2"]);
        assert!(kept.iter().all(|d| d.lang == "bn"));
    }

    #[test]
    fn zero_min_prob_keeps_all_argmax_matches() {
        let data = labeled_set(100);
        let model = train_langid(&data, 1 << 10, 2, 0.5, 7).unwrap();
        let docs: Vec<CleanDocument> = (0..10)
            .map(|i| mk_doc(&format!("d{i}"), &synth_doc(i as u64 + 50, true, 12)))
            .collect();
        let n = docs.len();
        let (kept, dropped) = filter_lang(docs, &model, "bn", 0.0).unwrap();
        assert_eq!(kept.len() + dropped, n);
        assert_eq!(dropped, 0, "argmax should be bn for pure Bangla-script docs");
    }

    #[test]
    fn unknown_keep_class_errors() {
        let data = labeled_set(60);
        let model = train_langid(&data, 1 << 10, 1, 0.5, 7).unwrap();
        assert!(filter_lang(vec![], &model, "fr", 0.5).is_err());
    }

    #[test]
    fn script_ratio_heuristic() {
        assert!(bangla_script_ratio("\u{0995} \u{0996} \u{0997}") > 0.99);
        assert_eq!(bangla_script_ratio("plain latin"), 0.0);
        let mixed = bangla_script_ratio("\u{0995}\u{0996} ab");
        assert!((mixed - 0.5).abs() < 1e-9);
        let (kept, dropped) = filter_by_script(
            vec![mk_doc("a", "\u{0995}\u{0996}\u{0997} \u{0998}"), mk_doc("b", "latin only")],
            0.5,
        );
        assert_eq!(kept.len(), 1);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn model_file_roundtrip() {
        let data = labeled_set(60);
        let model = train_langid(&data, 1 << 10, 1, 0.5, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("langid.json");
        model.write(&path).unwrap();
        let loaded = LangIdModel::read(&path).unwrap();
        assert_eq!(model.weights, loaded.weights);
        assert_eq!(model.classes, loaded.classes);
    }
}
