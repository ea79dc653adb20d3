use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder architecture hyperparameters. The generator used during
/// pretraining shares this shape scaled by `gen_ratio` (see
/// [`derive_generator_config`]).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Embedding width. Equal to `hidden` for the base layout; the generator
    /// keeps embeddings at this width and projects into its own hidden size.
    pub embedding: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    /// Generator-to-discriminator width ratio as (numerator, denominator).
    #[serde(default = "default_gen_ratio")]
    pub gen_ratio: (u32, u32),
}

fn default_gen_ratio() -> (u32, u32) {
    (1, 3)
}

impl ModelConfig {
    /// Reference base layout: 12 layers, 768 wide, 12 heads, 3072 FFN.
    pub fn base(vocab_size: usize) -> Self {
        ModelConfig {
            layers: 12,
            hidden: 768,
            heads: 12,
            ffn: 3072,
            embedding: 768,
            vocab_size,
            max_positions: 512,
            gen_ratio: (1, 3),
        }
    }

    /// Small configuration for tests and toy runs.
    pub fn tiny(vocab_size: usize, max_positions: usize) -> Self {
        ModelConfig {
            layers: 2,
            hidden: 64,
            heads: 4,
            ffn: 256,
            embedding: 64,
            vocab_size,
            max_positions,
            gen_ratio: (1, 2),
        }
    }

    pub fn head_size(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden % self.heads != 0 {
            return Err(Error::Model(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.layers == 0 || self.hidden == 0 || self.vocab_size == 0 || self.max_positions == 0 {
            return Err(Error::Model("zero-sized model dimension".into()));
        }
        if self.gen_ratio.0 == 0 || self.gen_ratio.1 == 0 {
            return Err(Error::Model("generator ratio must be positive".into()));
        }
        Ok(())
    }
}

/// Scale hidden width, head count, and FFN width by `ratio`, keeping depth
/// and vocabulary unchanged. Embeddings stay at the discriminator width and
/// are projected into the generator width by a learned linear map.
pub fn derive_generator_config(disc: &ModelConfig, ratio: (u32, u32)) -> Result<ModelConfig> {
    disc.validate()?;
    let (num, den) = (ratio.0 as usize, ratio.1 as usize);
    if num == 0 || den == 0 {
        return Err(Error::Model("generator ratio must be positive".into()));
    }
    let head_size = disc.head_size();
    let scaled = |x: usize| -> Option<usize> {
        let v = x.checked_mul(num)?;
        (v % den == 0).then_some(v / den)
    };
    let hidden = scaled(disc.hidden).filter(|h| h % head_size == 0);
    let heads = scaled(disc.heads);
    let ffn = scaled(disc.ffn);
    match (hidden, heads, ffn) {
        (Some(hidden), Some(heads), Some(ffn)) if hidden / head_size == heads => Ok(ModelConfig {
            layers: disc.layers,
            hidden,
            heads,
            ffn,
            embedding: disc.embedding,
            vocab_size: disc.vocab_size,
            max_positions: disc.max_positions,
            gen_ratio: ratio,
        }),
        _ => {
            // nearest ratio that keeps an integral number of heads
            let suggestion = nearest_valid_ratio(disc, ratio);
            Err(Error::Model(format!(
                "ratio {}/{} does not divide hidden {} (head size {}), heads {}, and ffn {} evenly; nearest valid ratio is {}/{}",
                ratio.0, ratio.1, disc.hidden, head_size, disc.heads, disc.ffn, suggestion.0, suggestion.1
            )))
        }
    }
}

fn nearest_valid_ratio(disc: &ModelConfig, ratio: (u32, u32)) -> (u32, u32) {
    let target = ratio.0 as f64 / ratio.1 as f64;
    // candidate ratios m/heads keep m of the original heads
    let mut best = (1u32, disc.heads as u32);
    let mut best_err = f64::INFINITY;
    for m in 1..=disc.heads {
        let cand = m as f64 / disc.heads as f64;
        // m/heads must also divide the ffn width evenly
        if (disc.ffn * m) % disc.heads != 0 {
            continue;
        }
        let err = (cand - target).abs();
        if err < best_err {
            best_err = err;
            best = (m as u32, disc.heads as u32);
        }
    }
    best
}

/// Closed-form parameter count of the fine-tunable branch: shared embeddings
/// (token, position, segment, embedding layer-norm) plus the discriminator
/// encoder stack. Generator-side and pretraining-head parameters are
/// excluded, matching how encoder sizes are conventionally quoted.
pub fn parameter_count(config: &ModelConfig) -> usize {
    let (v, e, h, f, p) = (
        config.vocab_size,
        config.embedding,
        config.hidden,
        config.ffn,
        config.max_positions,
    );
    let embeddings = v * e + p * e + 2 * e + 2 * e;
    let proj = if e != h { e * h + h } else { 0 };
    let per_layer = 4 * (h * h + h)   // attention q, k, v, o
        + 2 * h                       // post-attention layer norm
        + (h * f + f) + (f * h + h)   // feed-forward in/out
        + 2 * h; // post-ffn layer norm
    embeddings + proj + config.layers * per_layer
}
