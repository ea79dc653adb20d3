use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear learning rate: 0 at step 0, `peak` at `warmup_steps`,
/// back to 0 at `total_steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

/// Full-scale reference schedule constants: 2e-4 peak, 10k warmup
/// (256-example batches for 2.5M steps in the original run).
pub const REFERENCE_PEAK_LR: f64 = 2e-4;
pub const REFERENCE_WARMUP_STEPS: usize = 10_000;
pub const REFERENCE_TOTAL_STEPS: usize = 2_500_000;
pub const REFERENCE_BATCH_SIZE: usize = 256;

impl LrSchedule {
    pub fn new(peak: f64, warmup_steps: usize, total_steps: usize) -> Result<Self> {
        if !(peak > 0.0) {
            return Err(Error::Train(format!("peak learning rate {peak} must be positive")));
        }
        if warmup_steps >= total_steps {
            return Err(Error::Train(format!(
                "warmup ({warmup_steps}) must end before total steps ({total_steps})"
            )));
        }
        Ok(LrSchedule {
            peak,
            warmup_steps,
            total_steps,
        })
    }

    pub fn lr_at_step(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::Train(format!(
                "step {step} beyond schedule end {}",
                self.total_steps
            )));
        }
        if step <= self.warmup_steps {
            if self.warmup_steps == 0 {
                return Ok(self.peak);
            }
            return Ok(self.peak * step as f64 / self.warmup_steps as f64);
        }
        let decay_span = (self.total_steps - self.warmup_steps) as f64;
        let remaining = (self.total_steps - step) as f64;
        Ok(self.peak * remaining / decay_span)
    }
}
