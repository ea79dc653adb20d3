use rand_chacha::ChaCha8Rng;

use crate::rng;
use crate::tokenizer::PackedExample;

/// Probability of following the successor rule (vs a Zipfian restart).
const GRAMMAR_FOLLOW: f64 = 0.93;

/// Synthetic corpus with Zipfian root frequencies and deterministic
/// successor structure. Content ids live in `[5, vocab_size)`; ids 0-4 stay
/// reserved for specials.
///
/// Each position either follows the previous token's fixed successor (an
/// affine permutation of the content inventory, probability 0.85) or
/// restarts from a global Zipf draw. Restarts keep the marginals
/// heavy-tailed; the successor rule gives a masked-language objective a
/// dense, learnable signal from either neighbor.
pub fn zipfian_grammar_corpus(
    vocab_size: usize,
    n_docs: usize,
    doc_len_range: (usize, usize),
    seed: u64,
) -> Vec<PackedExample> {
    assert!(vocab_size > 16, "grammar needs a non-trivial vocabulary");
    let content = vocab_size - 5;
    let mut out = Vec::with_capacity(n_docs);
    let mut rng = rng::derive(seed, 0x51f);

    let global_zipf: Vec<f64> = (0..content).map(|r| 1.0 / (r + 1) as f64).collect();
    // affine permutation: the multiplier is coprime with any content size
    // not divisible by 7 (and 195 = vocab 200 - 5 is, by 3 and 5 only)
    let multiplier = if content % 7 == 0 { 11 } else { 7 };
    let successor = |i: usize| (multiplier * i + 11) % content;

    for d in 0..n_docs {
        let len = doc_len_range.0 + rng::below(&mut rng, doc_len_range.1 - doc_len_range.0 + 1);
        let mut ids = Vec::with_capacity(len);
        let mut current = rng::categorical(&mut rng, &global_zipf);
        ids.push(5 + current as u32);
        while ids.len() < len {
            current = if rng::uniform(&mut rng) < GRAMMAR_FOLLOW {
                successor(current)
            } else {
                rng::categorical(&mut rng, &global_zipf)
            };
            ids.push(5 + current as u32);
        }
        out.push(PackedExample {
            doc_id: format!("synth{d}"),
            token_ids: ids,
        });
    }
    out
}

/// Two synthetic languages that share label-bearing structure.
///
/// Vocabulary layout (C = `2 * concepts_per_class` concepts total):
///
/// ```text
/// [0, 5)            specials
/// [5, 5+C)          anchors, one per concept, shared by both languages
/// [5+C, 5+2C)       language-A concept tokens
/// [5+2C, 5+3C)      language-B concept tokens
/// ```
///
/// Pretraining documents interleave concept tokens with their anchors, so
/// the A-token and B-token of one concept appear in identical anchor
/// contexts and the joint model aligns their representations. Labeled
/// classification documents carry concept tokens only (no anchors): the
/// label signal rides on language-specific tokens, which is exactly what a
/// zero-shot transfer test needs.
#[derive(Debug, Clone, Copy)]
pub struct TopicWorld {
    pub concepts_per_class: usize,
}

pub const LANG_A: usize = 0;
pub const LANG_B: usize = 1;

impl TopicWorld {
    pub fn new(concepts_per_class: usize) -> Self {
        TopicWorld { concepts_per_class }
    }

    pub fn n_concepts(&self) -> usize {
        2 * self.concepts_per_class
    }

    pub fn vocab_size(&self) -> usize {
        5 + 3 * self.n_concepts()
    }

    pub fn anchor(&self, concept: usize) -> u32 {
        debug_assert!(concept < self.n_concepts());
        (5 + concept) as u32
    }

    pub fn token(&self, lang: usize, concept: usize) -> u32 {
        debug_assert!(lang < 2 && concept < self.n_concepts());
        (5 + self.n_concepts() * (1 + lang) + concept) as u32
    }

    pub fn class_of(&self, concept: usize) -> usize {
        usize::from(concept >= self.concepts_per_class)
    }

    fn draw_concept(&self, topic: usize, purity: f64, rng: &mut ChaCha8Rng) -> usize {
        let class = if rng::uniform(rng) < purity { topic } else { 1 - topic };
        class * self.concepts_per_class + rng::below(rng, self.concepts_per_class)
    }

    /// Unlabeled topic-coherent documents of `(token, anchor)` pairs.
    pub fn pretrain_corpus(
        &self,
        lang: usize,
        n_docs: usize,
        pairs_range: (usize, usize),
        purity: f64,
        seed: u64,
    ) -> Vec<PackedExample> {
        let mut rng = rng::derive(seed, 0x70b + lang as u64);
        let mut out = Vec::with_capacity(n_docs);
        for d in 0..n_docs {
            let topic = d % 2;
            let pairs =
                pairs_range.0 + rng::below(&mut rng, pairs_range.1 - pairs_range.0 + 1);
            let mut ids = Vec::with_capacity(pairs * 2);
            for _ in 0..pairs {
                let concept = self.draw_concept(topic, purity, &mut rng);
                ids.push(self.token(lang, concept));
                ids.push(self.anchor(concept));
            }
            out.push(PackedExample {
                doc_id: format!("L{lang}-{d}"),
                token_ids: ids,
            });
        }
        out
    }

    /// Labeled classification examples: concept tokens only, anchor-free.
    /// The label is the majority class at the given purity.
    pub fn classification_set(
        &self,
        lang: usize,
        n: usize,
        tokens_per_doc: usize,
        purity: f64,
        seed: u64,
    ) -> Vec<(Vec<u32>, usize)> {
        let mut rng = rng::derive(seed, 0xc1a + lang as u64);
        (0..n)
            .map(|i| {
                let topic = i % 2;
                let ids: Vec<u32> = (0..tokens_per_doc)
                    .map(|_| self.token(lang, self.draw_concept(topic, purity, &mut rng)))
                    .collect();
                (ids, topic)
            })
            .collect()
    }
}
