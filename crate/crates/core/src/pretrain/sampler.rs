use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tokenizer::PackedExample;

/// Equal-participation mixing of two packed corpora: every batch slot picks
/// a corpus by weight first, then an example uniformly within it, so the
/// smaller corpus is upsampled by construction.
pub struct BilingualSampler<'a> {
    corpus_a: &'a [PackedExample],
    corpus_b: &'a [PackedExample],
    weights: (f64, f64),
}

impl<'a> BilingualSampler<'a> {
    pub fn new(
        corpus_a: &'a [PackedExample],
        corpus_b: &'a [PackedExample],
        weights: (f64, f64),
    ) -> Result<Self> {
        if corpus_a.is_empty() || corpus_b.is_empty() {
            return Err(Error::Train("bilingual sampling needs two non-empty corpora".into()));
        }
        if weights.0 < 0.0 || weights.1 < 0.0 || weights.0 + weights.1 <= 0.0 {
            return Err(Error::Train(format!("bad corpus weights {weights:?}")));
        }
        Ok(BilingualSampler {
            corpus_a,
            corpus_b,
            weights,
        })
    }

    pub fn sample(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<&'a PackedExample> {
        let p_a = self.weights.0 / (self.weights.0 + self.weights.1);
        (0..batch_size)
            .map(|_| {
                if rng::uniform(rng) < p_a {
                    &self.corpus_a[rng::below(rng, self.corpus_a.len())]
                } else {
                    &self.corpus_b[rng::below(rng, self.corpus_b.len())]
                }
            })
            .collect()
    }
}

/// Uniform sampling from a single corpus.
pub fn sample_mono<'a>(
    corpus: &'a [PackedExample],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<&'a PackedExample>> {
    if corpus.is_empty() {
        return Err(Error::Train("cannot sample from an empty corpus".into()));
    }
    Ok((0..batch_size)
        .map(|_| &corpus[rng::below(rng, corpus.len())])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;
    use std::collections::HashMap;

    fn corpus(prefix: &str, n: usize) -> Vec<PackedExample> {
        (0..n)
            .map(|i| PackedExample {
                doc_id: format!("{prefix}{i}"),
                token_ids: vec![5, 6, 7],
            })
            .collect()
    }

    /// Sizes 1000 and 250: corpus-B share stays at 0.5 within 3 binomial
    /// sigma over 10k draws, and each B doc shows up about 4x as often as
    /// each A doc.
    #[test]
    fn equal_participation_upsamples_smaller_corpus() {
        let a = corpus("a", 1000);
        let b = corpus("b", 250);
        let sampler = BilingualSampler::new(&a, &b, (0.5, 0.5)).unwrap();
        let mut rng = derive(11, 0);
        let draws = 10_000usize;
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut from_b = 0usize;
        for _ in 0..draws / 100 {
            for ex in sampler.sample(100, &mut rng) {
                *counts.entry(ex.doc_id.as_str()).or_insert(0) += 1;
                if ex.doc_id.starts_with('b') {
                    from_b += 1;
                }
            }
        }
        let share_b = from_b as f64 / draws as f64;
        let sigma = (0.25f64 / draws as f64).sqrt();
        assert!(
            (share_b - 0.5).abs() <= 3.0 * sigma,
            "corpus-B share {share_b}, 3 sigma = {}",
            3.0 * sigma
        );
        // per-document expectation: B docs 20 each, A docs 5 each
        let mean_b: f64 = b
            .iter()
            .map(|e| *counts.get(e.doc_id.as_str()).unwrap_or(&0) as f64)
            .sum::<f64>()
            / b.len() as f64;
        let mean_a: f64 = a
            .iter()
            .map(|e| *counts.get(e.doc_id.as_str()).unwrap_or(&0) as f64)
            .sum::<f64>()
            / a.len() as f64;
        let ratio = mean_b / mean_a;
        assert!(
            (3.5..=4.5).contains(&ratio),
            "B/A appearance ratio {ratio}, means {mean_b}/{mean_a}"
        );
    }

    #[test]
    fn identical_corpora_sample_uniformly_over_union() {
        let a = corpus("x", 50);
        let b = corpus("x", 50); // same ids on purpose
        let sampler = BilingualSampler::new(&a, &b, (0.5, 0.5)).unwrap();
        let mut rng = derive(12, 0);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for _ in 0..100 {
            for ex in sampler.sample(50, &mut rng) {
                *counts.entry(ex.doc_id.as_str()).or_insert(0) += 1;
            }
        }
        let expected = 5000.0 / 50.0;
        for (&id, &c) in &counts {
            assert!(
                (c as f64 - expected).abs() < 5.0 * expected.sqrt(),
                "{id}: {c} vs {expected}"
            );
        }
    }

    #[test]
    fn degenerate_weights_pick_one_corpus() {
        let a = corpus("a", 10);
        let b = corpus("b", 10);
        let sampler = BilingualSampler::new(&a, &b, (1.0, 0.0)).unwrap();
        let mut rng = derive(13, 0);
        assert!(sampler
            .sample(200, &mut rng)
            .iter()
            .all(|e| e.doc_id.starts_with('a')));
    }

    #[test]
    fn empty_corpus_rejected() {
        let a = corpus("a", 10);
        assert!(BilingualSampler::new(&a, &[], (0.5, 0.5)).is_err());
        assert!(sample_mono(&[], 4, &mut derive(1, 0)).is_err());
    }
}
