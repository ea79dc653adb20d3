use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finetune::{evaluate_model, finetune, FinetuneConfig, TaskData, TaskSpec};
use crate::model::{ModelConfig, ParamStore};
use crate::rng;

/// Scores across training-set sizes: one point per (size, seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfficiencyCurve {
    pub sample_sizes: Vec<usize>,
    pub points: Vec<EfficiencyPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub size: usize,
    pub seed: u64,
    pub score: f64,
}

impl EfficiencyCurve {
    pub fn mean_at(&self, size: usize) -> Option<f64> {
        let scores: Vec<f64> = self
            .points
            .iter()
            .filter(|p| p.size == size)
            .map(|p| p.score)
            .collect();
        if scores.is_empty() {
            None
        } else {
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        }
    }
}

/// Default size grid, weighted toward the low-sample regime.
pub const DEFAULT_SIZE_GRID: [usize; 4] = [100, 250, 500, 1000];

/// Seeded stratified subsample: `size` indices whose label proportions match
/// the full set (largest-remainder apportionment), shuffled within strata.
pub fn stratified_subsample(strata: &[usize], size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > strata.len() {
        return Err(Error::Metric(format!(
            "subsample of {size} from a set of {}",
            strata.len()
        )));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &s) in strata.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let total = strata.len() as f64;
    // integer share per stratum, then largest fractional remainders
    let mut picked: Vec<usize> = Vec::with_capacity(size);
    let mut remainders: Vec<(f64, usize)> = Vec::new();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for (&label, members) in &groups {
        let exact = size as f64 * members.len() as f64 / total;
        let base = exact.floor() as usize;
        counts.insert(label, base.min(members.len()));
        remainders.push((exact - exact.floor(), label));
    }
    let mut assigned: usize = counts.values().sum();
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut r = 0usize;
    while assigned < size {
        let (_, label) = remainders[r % remainders.len()];
        let cap = groups[&label].len();
        let c = counts.get_mut(&label).unwrap();
        if *c < cap {
            *c += 1;
            assigned += 1;
        }
        r += 1;
        if r > remainders.len() * (size + 1) {
            return Err(Error::Metric("stratified apportionment failed".into()));
        }
    }
    for (&label, members) in &groups {
        let mut pool = members.clone();
        let mut rng = rng::derive(seed, 0x57a7 ^ label as u64);
        for i in (1..pool.len()).rev() {
            let j = rng::below(&mut rng, i + 1);
            pool.swap(i, j);
        }
        picked.extend(pool.into_iter().take(counts[&label]));
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Sample-efficiency harness: for each size and seed, fine-tune on a
/// stratified subsample and score the test set with the seed's dev-selected
/// model (QA thresholds come from dev).
#[allow(clippy::too_many_arguments)]
pub fn sample_efficiency(
    model_config: &ModelConfig,
    base_store: &ParamStore<f32>,
    task: &TaskSpec,
    config: &FinetuneConfig,
    train: &TaskData,
    dev: &TaskData,
    test: &TaskData,
    sizes: &[usize],
    seeds: &[u64],
) -> Result<EfficiencyCurve> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Metric("size grid must be strictly ascending".into()));
    }
    if let Some(&max) = sizes.last() {
        if max > train.len() {
            return Err(Error::Metric(format!(
                "size {max} exceeds train set of {}",
                train.len()
            )));
        }
    }
    let strata = train.strata();
    let mut points = Vec::new();
    for &size in sizes {
        for &seed in seeds {
            let subsample = stratified_subsample(&strata, size, rng::mix(seed ^ (size as u64)))?;
            let subset = train.subset(&subsample);
            let mut run_config = config.clone();
            run_config.seeds = vec![seed];
            let outcome = finetune(model_config, base_store, task, &run_config, &subset, dev)?;
            let run = &outcome.runs[0];
            let eval = evaluate_model(model_config, &run.store, task, config, test, run.tau)?;
            points.push(EfficiencyPoint {
                size,
                seed,
                score: eval.scalar,
            });
        }
    }
    Ok(EfficiencyCurve {
        sample_sizes: sizes.to_vec(),
        points,
    })
}

/// CSV emission: `size,seed,score`, rows in grid order then seed order.
pub fn write_curve_csv(path: &Path, curve: &EfficiencyCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(["size", "seed", "score"])?;
    for p in &curve.points {
        w.write_record([p.size.to_string(), p.seed.to_string(), format!("{:.4}", p.score)])?;
    }
    w.flush().map_err(|e| Error::io(path.to_path_buf(), e))?;
    Ok(())
}
