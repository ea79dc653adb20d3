use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tokenizer::{PackedExample, Vocab};

pub const DEFAULT_MASK_FRACTION: f64 = 0.15;

/// Masking plan for one example: sorted positions into the example's own
/// token list. Special tokens are never eligible.
#[derive(Debug, Clone)]
pub struct MaskPlan {
    pub positions: Vec<usize>,
    pub fraction: f64,
}

impl MaskPlan {
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Uniform sample without replacement over eligible (non-special) positions,
/// masking `max(1, round(fraction * eligible))` of them. An example with no
/// eligible positions gets an empty plan and is skipped by the trainer.
pub fn plan_masking(example: &PackedExample, fraction: f64, rng: &mut ChaCha8Rng) -> Result<MaskPlan> {
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(Error::Train(format!("mask fraction {fraction} outside (0, 1)")));
    }
    let eligible: Vec<usize> = example
        .token_ids
        .iter()
        .enumerate()
        .filter(|(_, &id)| !Vocab::is_special(id))
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Ok(MaskPlan {
            positions: Vec::new(),
            fraction,
        });
    }
    let count = ((fraction * eligible.len() as f64).round() as usize).max(1);
    let count = count.min(eligible.len());
    let picks = rng::sample_without_replacement(rng, eligible.len(), count);
    let positions: Vec<usize> = picks.into_iter().map(|i| eligible[i]).collect();
    Ok(MaskPlan { positions, fraction })
}
