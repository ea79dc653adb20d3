use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64;

use crate::error::{Error, Result};

/// A translation pair with a similarity score in `[-1, 1]` (cosine of
/// unit-normalized sentence embeddings when computed internally).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParallelPair {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub source_text: String,
    pub target_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

impl ParallelPair {
    fn label(&self, index: usize) -> String {
        self.id.clone().unwrap_or_else(|| format!("#{index}"))
    }
}

/// Sentence embedding source for similarity scoring. The production model is
/// external; anything implementing this trait can stand in.
pub trait EmbeddingProvider {
    fn embed(&self, text: &str) -> Vec<f32>;
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&y| (y as f64) * (y as f64)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Deterministic stand-in embedder: L2-normalized hashed character trigram
/// counts. Shared trigrams give high cosine, making it a usable fixture for
/// similarity-threshold behavior.
pub struct HashedNgramEmbedder {
    pub dims: usize,
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        HashedNgramEmbedder { dims: 256 }
    }
}

impl EmbeddingProvider for HashedNgramEmbedder {
    fn embed(&self, text: &str) -> Vec<f32> {
        let chars: Vec<char> = text.chars().collect();
        let mut v = vec![0.0f32; self.dims];
        if chars.len() >= 3 {
            for w in chars.windows(3) {
                let s: String = w.iter().collect();
                let bucket = (xxh3_64(s.as_bytes()) % self.dims as u64) as usize;
                v[bucket] += 1.0;
            }
        } else if !chars.is_empty() {
            let s: String = chars.iter().collect();
            v[(xxh3_64(s.as_bytes()) % self.dims as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|&x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            for x in v.iter_mut() {
                *x /= norm;
            }
        }
        v
    }
}

/// Fill in missing similarities with the provider's embedding cosine.
pub fn score_pairs<P: EmbeddingProvider>(pairs: &mut [ParallelPair], provider: &P) {
    for pair in pairs.iter_mut() {
        if pair.similarity.is_none() {
            let a = provider.embed(&pair.source_text);
            let b = provider.embed(&pair.target_text);
            pair.similarity = Some(cosine(&a, &b));
        }
    }
}

/// Keep pairs whose similarity is at least `threshold` (strictly-below is
/// discarded, so equality survives). Scores outside `[-1, 1]` or missing
/// scores are errors naming the pair.
pub fn filter_parallel_pairs(
    pairs: Vec<ParallelPair>,
    threshold: f64,
) -> Result<(Vec<ParallelPair>, usize)> {
    let mut kept = Vec::with_capacity(pairs.len());
    let mut dropped = 0usize;
    for (i, pair) in pairs.into_iter().enumerate() {
        let sim = pair.similarity.ok_or_else(|| {
            Error::Corpus(format!("pair {} has no similarity score", pair.label(i)))
        })?;
        if !(-1.0..=1.0).contains(&sim) {
            return Err(Error::Corpus(format!(
                "pair {} similarity {sim} outside [-1, 1]",
                pair.label(i)
            )));
        }
        if sim >= threshold {
            kept.push(pair);
        } else {
            dropped += 1;
        }
    }
    Ok((kept, dropped))
}

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.70;

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: &str, sim: f64) -> ParallelPair {
        ParallelPair {
            id: Some(id.to_string()),
            source_text: "src".into(),
            target_text: "tgt".into(),
            similarity: Some(sim),
        }
    }

    #[test]
    fn boundary_is_inclusive_keep() {
        let (kept, dropped) =
            filter_parallel_pairs(vec![pair("hi", 0.71), pair("at", 0.70), pair("lo", 0.69)], 0.70)
                .unwrap();
        let ids: Vec<&str> = kept.iter().map(|p| p.id.as_deref().unwrap()).collect();
        assert_eq!(ids, vec!["hi", "at"]);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn threshold_minus_one_keeps_everything() {
        let pairs: Vec<ParallelPair> = (0..10).map(|i| pair(&format!("p{i}"), -1.0 + 0.2 * i as f64)).collect();
        let (kept, dropped) = filter_parallel_pairs(pairs, -1.0).unwrap();
        assert_eq!(kept.len(), 10);
        assert_eq!(dropped, 0);
    }

    #[test]
    fn partition_and_monotonicity() {
        let pairs: Vec<ParallelPair> = (0..100)
            .map(|i| pair(&format!("p{i}"), -1.0 + (i as f64) * 0.02))
            .collect();
        let mut prev_kept = usize::MAX;
        for t in [-1.0, -0.5, 0.0, 0.5, 0.7, 0.9, 1.0] {
            let (kept, dropped) = filter_parallel_pairs(pairs.clone(), t).unwrap();
            assert_eq!(kept.len() + dropped, pairs.len());
            assert!(kept.len() <= prev_kept, "kept set must shrink as threshold rises");
            prev_kept = kept.len();
        }
    }

    #[test]
    fn out_of_range_similarity_names_pair() {
        let err = filter_parallel_pairs(vec![pair("ok", 0.5), pair("bad", 1.5)], 0.7).unwrap_err();
        assert!(err.to_string().contains("bad"), "{err}");
    }

    #[test]
    fn missing_similarity_names_pair() {
        let mut p = pair("nosim", 0.0);
        p.similarity = None;
        let err = filter_parallel_pairs(vec![p], 0.7).unwrap_err();
        assert!(err.to_string().contains("nosim"), "{err}");
    }

    #[test]
    fn provider_scores_and_cosine_ranges() {
        let provider = HashedNgramEmbedder::default();
        let mut pairs = vec![ParallelPair {
            id: None,
            source_text: "the quick brown fox jumps".into(),
            target_text: "the quick brown fox jumped".into(),
            similarity: None,
        },
        ParallelPair {
            id: None,
            source_text: "the quick brown fox jumps".into(),
            target_text: "zzz qqq completely disjoint".into(),
            similarity: None,
        }];
        score_pairs(&mut pairs, &provider);
        let close = pairs[0].similarity.unwrap();
        let far = pairs[1].similarity.unwrap();
        assert!(close > far, "{close} vs {far}");
        assert!((-1.0..=1.0).contains(&close));
        assert!((-1.0..=1.0).contains(&far));
        // unit-normalized self-cosine is exactly 1
        let v = provider.embed("self similarity");
        assert!((cosine(&v, &v) - 1.0).abs() < 1e-6);
    }
}
