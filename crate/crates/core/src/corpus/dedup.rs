use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use xxhash_rust::xxh3::xxh3_64;

use crate::error::{Error, Result};
use crate::rng::mix;

use super::clean::CleanDocument;

/// Drop documents whose content hash was already seen; first occurrence
/// wins, order is otherwise preserved. Idempotent by construction.
pub fn exact_dedup(docs: Vec<CleanDocument>) -> (Vec<CleanDocument>, usize) {
    let mut seen: HashSet<u128> = HashSet::with_capacity(docs.len());
    let mut out = Vec::with_capacity(docs.len());
    let mut removed = 0usize;
    for doc in docs {
        if seen.insert(doc.content_hash) {
            out.push(doc);
        } else {
            removed += 1;
        }
    }
    (out, removed)
}

pub const DEFAULT_SHINGLE_WORDS: usize = 5;
pub const DEFAULT_NUM_HASHES: usize = 128;
pub const DEFAULT_JACCARD_THRESHOLD: f64 = 0.85;

/// Hashed word shingles (`n` consecutive words per shingle). Texts shorter
/// than one shingle hash whole.
pub fn word_shingles(text: &str, n: usize) -> HashSet<u64> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut out = HashSet::new();
    if words.is_empty() {
        return out;
    }
    if words.len() < n {
        out.insert(xxh3_64(words.join("\u{1f}").as_bytes()));
        return out;
    }
    for w in words.windows(n) {
        out.insert(xxh3_64(w.join("\u{1f}").as_bytes()));
    }
    out
}

/// MinHash signature over pre-hashed shingles: component `i` is the minimum
/// of a seeded mix of every shingle hash.
pub fn minhash_signature(shingles: &HashSet<u64>, num_hashes: usize) -> Vec<u64> {
    let mut sig = vec![u64::MAX; num_hashes];
    for &s in shingles {
        for (i, slot) in sig.iter_mut().enumerate() {
            let h = mix(s ^ mix(i as u64 + 1));
            if h < *slot {
                *slot = h;
            }
        }
    }
    sig
}

/// Jaccard estimate: fraction of agreeing signature components.
pub fn estimate_jaccard(a: &[u64], b: &[u64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count();
    agree as f64 / a.len() as f64
}

/// Exact Jaccard similarity of two shingle sets.
pub fn exact_jaccard(a: &HashSet<u64>, b: &HashSet<u64>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Banding layout minimizing the gap between the LSH activation threshold
/// `(1/bands)^(rows)` — approximately where the candidate probability curve
/// crosses one half — and the requested threshold.
fn choose_bands(num_hashes: usize, threshold: f64) -> (usize, usize) {
    let mut best = (num_hashes, 1); // (bands, rows)
    let mut best_err = f64::INFINITY;
    for bands in 1..=num_hashes {
        if num_hashes % bands != 0 {
            continue;
        }
        let rows = num_hashes / bands;
        let activation = (1.0 / bands as f64).powf(1.0 / rows as f64);
        let err = (activation - threshold).abs();
        if err < best_err {
            best_err = err;
            best = (bands, rows);
        }
    }
    best
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }
    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins, keeps grouping deterministic
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Near-duplicate removal: group documents whose estimated Jaccard
/// similarity of word-shingle sets reaches `threshold` (candidates proposed
/// by LSH banding, verified on full signatures), keep the longest text per
/// group (ties: lexicographically smallest id).
pub fn near_dedup(
    docs: Vec<CleanDocument>,
    num_hashes: usize,
    jaccard_threshold: f64,
) -> Result<(Vec<CleanDocument>, usize)> {
    if num_hashes < 16 {
        return Err(Error::Corpus(format!(
            "near-dedup needs at least 16 hashes, got {num_hashes}"
        )));
    }
    if docs.is_empty() {
        return Ok((docs, 0));
    }

    let signatures: Vec<Vec<u64>> = docs
        .par_iter()
        .map(|d| minhash_signature(&word_shingles(&d.text, DEFAULT_SHINGLE_WORDS), num_hashes))
        .collect();

    let (bands, rows) = choose_bands(num_hashes, jaccard_threshold);
    let mut uf = UnionFind::new(docs.len());
    let mut buckets: HashMap<(usize, u64), Vec<usize>> = HashMap::new();
    for (i, sig) in signatures.iter().enumerate() {
        for b in 0..bands {
            let band = &sig[b * rows..(b + 1) * rows];
            let mut key = 0xcbf2_9ce4_8422_2325u64;
            for &v in band {
                key = mix(key ^ v);
            }
            buckets.entry((b, key)).or_default().push(i);
        }
    }
    // verify every candidate pair on the full signature before grouping
    for members in buckets.values() {
        for i in 0..members.len() {
            for j in (i + 1)..members.len() {
                if uf.find(members[i]) == uf.find(members[j]) {
                    continue;
                }
                if estimate_jaccard(&signatures[members[i]], &signatures[members[j]])
                    >= jaccard_threshold
                {
                    uf.union(members[i], members[j]);
                }
            }
        }
    }

    // survivor per group: longest text, then smallest id
    let mut best_of_group: HashMap<usize, usize> = HashMap::new();
    for i in 0..docs.len() {
        let root = uf.find(i);
        best_of_group
            .entry(root)
            .and_modify(|cur| {
                let (a, b) = (&docs[*cur], &docs[i]);
                let better = match b.text.chars().count().cmp(&a.text.chars().count()) {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Equal => b.id < a.id,
                    std::cmp::Ordering::Less => false,
                };
                if better {
                    *cur = i;
                }
            })
            .or_insert(i);
    }
    let keep: HashSet<usize> = best_of_group.values().copied().collect();
    let removed = docs.len() - keep.len();
    let survivors = docs
        .into_iter()
        .enumerate()
        .filter_map(|(i, d)| keep.contains(&i).then_some(d))
        .collect();
    Ok((survivors, removed))
}
