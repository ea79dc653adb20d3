use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Paired bootstrap outcome for systems A and B on a shared test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub n_resamples: usize,
    /// Resamples where A strictly beat B.
    pub wins_a: usize,
    /// Fraction of resamples where A did not beat B (ties count here, the
    /// conservative convention).
    pub p_value: f64,
    /// `p_value < 0.05`.
    pub significant: bool,
}

pub const SIGNIFICANCE_ALPHA: f64 = 0.05;

/// Resample test indices with replacement `n_resamples` times and score both
/// systems on each resample. Scoring closures receive the resampled index
/// multiset. Each resample derives its own RNG stream from `(seed, r)`, so
/// results are independent of evaluation order and thread count.
pub fn paired_bootstrap<FA, FB>(
    n_items: usize,
    score_a: FA,
    score_b: FB,
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapResult>
where
    FA: Fn(&[usize]) -> f64 + Sync,
    FB: Fn(&[usize]) -> f64 + Sync,
{
    if n_resamples < 100 {
        return Err(Error::Metric(format!(
            "{n_resamples} resamples below the minimum of 100"
        )));
    }
    if n_items == 0 {
        return Err(Error::Metric("empty test set".into()));
    }
    let wins_a: usize = (0..n_resamples)
        .into_par_iter()
        .map(|r| {
            let mut draw_rng = rng::derive(seed, 0xb007 ^ (r as u64) << 1);
            let idx: Vec<usize> = (0..n_items).map(|_| rng::below(&mut draw_rng, n_items)).collect();
            usize::from(score_a(&idx) > score_b(&idx))
        })
        .sum();
    let p_value = (n_resamples - wins_a) as f64 / n_resamples as f64;
    Ok(BootstrapResult {
        n_resamples,
        wins_a,
        p_value,
        significant: p_value < SIGNIFICANCE_ALPHA,
    })
}

/// Convenience scorer: accuracy of `pred` against `gold` restricted to a
/// resampled index multiset.
pub fn accuracy_on<'a>(
    gold: &'a [String],
    pred: &'a [String],
) -> impl Fn(&[usize]) -> f64 + Sync + 'a {
    move |idx: &[usize]| {
        let correct = idx.iter().filter(|&&i| gold[i] == pred[i]).count();
        correct as f64 / idx.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strictly_better_system_gets_min_p() {
        let gold: Vec<String> = (0..50).map(|i| format!("c{}", i % 3)).collect();
        let pred_a = gold.clone();
        let pred_b: Vec<String> = (0..50).map(|_| "wrong".to_string()).collect();
        let result = paired_bootstrap(
            gold.len(),
            accuracy_on(&gold, &pred_a),
            accuracy_on(&gold, &pred_b),
            1000,
            3,
        )
        .unwrap();
        assert!(result.p_value <= 1.0 / 1000.0, "p = {}", result.p_value);
        assert!(result.significant);
        assert_eq!(result.wins_a, 1000);
    }

    #[test]
    fn identical_predictions_tie_to_p_one() {
        let gold: Vec<String> = (0..20).map(|i| format!("c{}", i % 2)).collect();
        let pred: Vec<String> = (0..20).map(|i| format!("c{}", (i + 1) % 2)).collect();
        let result = paired_bootstrap(
            gold.len(),
            accuracy_on(&gold, &pred),
            accuracy_on(&gold, &pred),
            500,
            3,
        )
        .unwrap();
        assert_eq!(result.p_value, 1.0);
        assert!(!result.significant);
        assert_eq!(result.wins_a, 0);
    }

    #[test]
    fn too_few_resamples_rejected() {
        let gold = vec!["a".to_string()];
        let result = paired_bootstrap(1, |_| 0.0, |_| 0.0, 99, 1);
        assert!(result.is_err());
        drop(gold);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let gold: Vec<String> = (0..30).map(|i| format!("{}", i % 2)).collect();
        let pred_a: Vec<String> = (0..30).map(|i| format!("{}", usize::from(i % 3 == 0))).collect();
        let pred_b: Vec<String> = (0..30).map(|i| format!("{}", usize::from(i % 4 == 0))).collect();
        let run = || {
            paired_bootstrap(
                30,
                accuracy_on(&gold, &pred_a),
                accuracy_on(&gold, &pred_b),
                2000,
                42,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    /// Relabeling invariance: p_AB + p_BA >= 1 because ties land in both.
    #[test]
    fn relabeling_p_values_cover_ties() {
        let gold: Vec<String> = (0..25).map(|i| format!("{}", i % 2)).collect();
        let pred_a: Vec<String> = (0..25).map(|i| format!("{}", usize::from(i % 3 != 0))).collect();
        let pred_b: Vec<String> = (0..25).map(|i| format!("{}", usize::from(i % 5 != 0))).collect();
        let sa = accuracy_on(&gold, &pred_a);
        let sb = accuracy_on(&gold, &pred_b);
        let ab = paired_bootstrap(25, &sa, &sb, 4000, 11).unwrap();
        let ba = paired_bootstrap(25, &sb, &sa, 4000, 11).unwrap();
        assert!(
            ab.p_value + ba.p_value >= 1.0 - 1e-12,
            "{} + {}",
            ab.p_value,
            ba.p_value
        );
    }
}
