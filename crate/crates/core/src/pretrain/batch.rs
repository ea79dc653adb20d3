use rand_chacha::ChaCha8Rng;

use crate::autograd::{Scalar, Tape};
use crate::error::{Error, Result};
use crate::model::{bind, forward_encoder, mlm_logits, EncoderInput, ModelConfig, ParamStore};
use crate::rng;
use crate::tokenizer::{PackedExample, CLS_ID, MASK_ID, PAD_ID};

use super::masking::MaskPlan;

/// Per-position discriminator target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscLabel {
    Original,
    Replaced,
    Ignore,
}

/// A fully-assembled replaced-token-detection batch in `[batch * len]`
/// row-major layout.
#[derive(Debug, Clone)]
pub struct RtdBatch {
    pub batch: usize,
    pub len: usize,
    pub original_ids: Vec<u32>,
    /// Original ids with planned positions replaced by `[MASK]`.
    pub generator_input: Vec<u32>,
    /// Original ids with planned positions replaced by generator samples.
    pub sampled_ids: Vec<u32>,
    pub disc_labels: Vec<DiscLabel>,
    pub attention_mask: Vec<u8>,
    /// Flat indices (row * len + col) of masked positions, ascending.
    pub masked_positions: Vec<usize>,
    /// Original ids at `masked_positions` (the MLM targets).
    pub mlm_targets: Vec<u32>,
}

/// Rows assembled from examples but not yet sampled: the generator runs on
/// `generator_input`, then sampling completes the batch.
pub struct AssembledRows {
    pub batch: usize,
    pub len: usize,
    pub original_ids: Vec<u32>,
    pub generator_input: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub masked_positions: Vec<usize>,
    pub mlm_targets: Vec<u32>,
}

/// Lay out examples as padded rows with a leading `[CLS]`, applying each
/// example's mask plan (plan positions are relative to the example and shift
/// right by one for the `[CLS]`). Examples longer than `max_positions - 1`
/// are truncated.
pub fn assemble_rows(
    examples: &[&PackedExample],
    plans: &[MaskPlan],
    max_positions: usize,
) -> Result<AssembledRows> {
    if examples.len() != plans.len() {
        return Err(Error::Train(format!(
            "{} examples but {} mask plans",
            examples.len(),
            plans.len()
        )));
    }
    let batch = examples.len();
    let content_budget = max_positions - 1;
    let len = examples
        .iter()
        .map(|e| e.len().min(content_budget))
        .max()
        .unwrap_or(0)
        + 1;
    let mut original = vec![PAD_ID; batch * len];
    let mut gen_input = vec![PAD_ID; batch * len];
    let mut attn = vec![0u8; batch * len];
    let mut masked_positions = Vec::new();
    let mut mlm_targets = Vec::new();

    for (b, (ex, plan)) in examples.iter().zip(plans).enumerate() {
        let row = b * len;
        original[row] = CLS_ID;
        gen_input[row] = CLS_ID;
        attn[row] = 1;
        let content = &ex.token_ids[..ex.len().min(content_budget)];
        for (t, &id) in content.iter().enumerate() {
            original[row + 1 + t] = id;
            gen_input[row + 1 + t] = id;
            attn[row + 1 + t] = 1;
        }
        for &p in &plan.positions {
            if p >= content.len() {
                continue; // masked position truncated away
            }
            let flat = row + 1 + p;
            gen_input[flat] = MASK_ID;
            masked_positions.push(flat);
            mlm_targets.push(original[flat]);
        }
    }
    Ok(AssembledRows {
        batch,
        len,
        original_ids: original,
        generator_input: gen_input,
        attention_mask: attn,
        masked_positions,
        mlm_targets,
    })
}

/// One categorical draw per masked position from `softmax(logits / T)`.
/// Temperatures at or below 1e-6 degenerate to argmax.
pub fn sample_replacements<S: Scalar>(
    logits: &[S],
    vocab_size: usize,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<u32> {
    let rows = logits.len() / vocab_size;
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &logits[r * vocab_size..(r + 1) * vocab_size];
        if temperature <= 1e-6 {
            let mut best = 0usize;
            for i in 1..vocab_size {
                if row[i] > row[best] {
                    best = i;
                }
            }
            out.push(best as u32);
            continue;
        }
        let max = row
            .iter()
            .map(|v| v.to_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = row
            .iter()
            .map(|v| ((v.to_f64() - max) / temperature).exp())
            .collect();
        out.push(rng::categorical(rng, &weights) as u32);
    }
    out
}

/// Fill rows into a complete batch: replaced labels where the sample differs
/// from the original, original labels elsewhere, ignore on padding.
pub fn complete_batch(rows: AssembledRows, samples: &[u32]) -> RtdBatch {
    assert_eq!(rows.masked_positions.len(), samples.len());
    let mut sampled_ids = rows.original_ids.clone();
    let mut labels: Vec<DiscLabel> = rows
        .attention_mask
        .iter()
        .map(|&m| if m == 1 { DiscLabel::Original } else { DiscLabel::Ignore })
        .collect();
    for (&flat, &sample) in rows.masked_positions.iter().zip(samples) {
        sampled_ids[flat] = sample;
        if sample != rows.original_ids[flat] {
            labels[flat] = DiscLabel::Replaced;
        }
    }
    RtdBatch {
        batch: rows.batch,
        len: rows.len,
        original_ids: rows.original_ids,
        generator_input: rows.generator_input,
        sampled_ids,
        disc_labels: labels,
        attention_mask: rows.attention_mask,
        masked_positions: rows.masked_positions,
        mlm_targets: rows.mlm_targets,
    }
}

/// Standalone batch construction: run the generator on the masked input,
/// sample one replacement per masked position from its output distribution,
/// and label each position. The trainer fuses the same steps into its
/// training tape so sampling always sees the current generator.
#[allow(clippy::too_many_arguments)]
pub fn build_rtd_batch<S: Scalar>(
    examples: &[&PackedExample],
    store: &ParamStore<S>,
    gen_config: &ModelConfig,
    plans: &[MaskPlan],
    rng: &mut ChaCha8Rng,
    temperature: f64,
    dropout: f64,
    dropout_seed: u64,
) -> Result<RtdBatch> {
    let rows = assemble_rows(examples, plans, gen_config.max_positions)?;
    if rows.masked_positions.is_empty() {
        return Ok(complete_batch(rows, &[]));
    }
    let mut tape: Tape<S> = Tape::with_dropout_seed(dropout_seed);
    let bound = bind(store, &mut tape, false);
    let hidden = forward_encoder(
        &mut tape,
        &bound,
        gen_config,
        "gen",
        &EncoderInput {
            ids: &rows.generator_input,
            batch: rows.batch,
            len: rows.len,
            attention_mask: &rows.attention_mask,
            segment_ids: None,
            dropout,
        },
    )?;
    let logits = mlm_logits(&mut tape, &bound, hidden, &rows.masked_positions)?;
    let samples = sample_replacements(
        tape.values(logits),
        gen_config.vocab_size,
        temperature,
        rng,
    );
    Ok(complete_batch(rows, &samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{derive_generator_config, init_pretrain_params};
    use crate::pretrain::masking::plan_masking;
    use crate::rng::derive;

    fn example(ids: Vec<u32>) -> PackedExample {
        PackedExample {
            doc_id: "t".into(),
            token_ids: ids,
        }
    }

    fn tiny_configs() -> (ModelConfig, ModelConfig) {
        let disc = ModelConfig {
            layers: 1,
            hidden: 16,
            heads: 2,
            ffn: 32,
            embedding: 16,
            vocab_size: 50,
            max_positions: 32,
            gen_ratio: (1, 2),
        };
        let gen = derive_generator_config(&disc, (1, 2)).unwrap();
        (disc, gen)
    }

    #[test]
    fn rows_carry_cls_and_padding() {
        let e1 = example(vec![10, 11, 12]);
        let e2 = example(vec![20]);
        let plans = vec![
            MaskPlan {
                positions: vec![1],
                fraction: 0.15,
            },
            MaskPlan {
                positions: vec![0],
                fraction: 0.15,
            },
        ];
        let rows = assemble_rows(&[&e1, &e2], &plans, 32).unwrap();
        assert_eq!(rows.len, 4);
        assert_eq!(rows.original_ids[0], CLS_ID);
        assert_eq!(&rows.original_ids[1..4], &[10, 11, 12]);
        assert_eq!(rows.original_ids[4], CLS_ID);
        assert_eq!(rows.original_ids[5], 20);
        assert_eq!(rows.original_ids[6], PAD_ID);
        assert_eq!(rows.attention_mask, vec![1, 1, 1, 1, 1, 1, 0, 0]);
        assert_eq!(rows.generator_input[2], MASK_ID);
        assert_eq!(rows.generator_input[5], MASK_ID);
        assert_eq!(rows.masked_positions, vec![2, 5]);
        assert_eq!(rows.mlm_targets, vec![11, 20]);
    }

    #[test]
    fn non_masked_positions_labeled_original() {
        let (_, gen) = tiny_configs();
        let disc = tiny_configs().0;
        let store: ParamStore<f64> = init_pretrain_params(&disc, &gen, 3).unwrap();
        let ex = example((0..10).map(|i| 5 + i).collect());
        let mut rng = derive(1, 0);
        let plan = plan_masking(&ex, 0.3, &mut rng).unwrap();
        let batch =
            build_rtd_batch(&[&ex], &store, &gen, &[plan.clone()], &mut rng, 1.0, 0.0, 0).unwrap();
        for i in 0..batch.original_ids.len() {
            if batch.attention_mask[i] == 0 {
                assert_eq!(batch.disc_labels[i], DiscLabel::Ignore);
            } else if !batch.masked_positions.contains(&i) {
                assert_eq!(batch.disc_labels[i], DiscLabel::Original);
                assert_eq!(batch.sampled_ids[i], batch.original_ids[i]);
            }
        }
    }

    #[test]
    fn replaced_label_iff_sample_differs() {
        let (disc, gen) = tiny_configs();
        let store: ParamStore<f64> = init_pretrain_params(&disc, &gen, 3).unwrap();
        let ex = example((0..20).map(|i| 5 + (i % 40)).collect());
        let mut rng = derive(2, 0);
        let plan = plan_masking(&ex, 0.5, &mut rng).unwrap();
        let batch = build_rtd_batch(&[&ex], &store, &gen, &[plan], &mut rng, 1.0, 0.0, 0).unwrap();
        for &p in &batch.masked_positions {
            let expected = if batch.sampled_ids[p] != batch.original_ids[p] {
                DiscLabel::Replaced
            } else {
                DiscLabel::Original
            };
            assert_eq!(batch.disc_labels[p], expected);
        }
    }

    #[test]
    fn zero_temperature_with_peaked_generator_keeps_originals() {
        // delta-distribution fixture: bias the output layer so the argmax at
        // every masked position is the original token
        let (disc, gen) = tiny_configs();
        let mut store: ParamStore<f64> = init_pretrain_params(&disc, &gen, 3).unwrap();
        let ex = example(vec![7, 7, 7, 7]);
        // an enormous bias at token 7 dominates every logit row
        store.get_mut("gen.mlm.out_bias").values[7] = 1e6;
        let mut rng = derive(3, 0);
        let plan = MaskPlan {
            positions: vec![0, 2],
            fraction: 0.5,
        };
        let batch = build_rtd_batch(&[&ex], &store, &gen, &[plan], &mut rng, 0.0, 0.0, 0).unwrap();
        assert!(batch
            .disc_labels
            .iter()
            .all(|&l| l != DiscLabel::Replaced));
    }

    /// With an untrained (near-uniform) generator, P(sample == original) is
    /// about 1/V, so the replaced rate at masked positions is 1 - 1/V.
    #[test]
    fn replaced_rate_matches_uniform_sampling_statistics() {
        let (disc, gen) = tiny_configs();
        let store: ParamStore<f64> = init_pretrain_params(&disc, &gen, 5).unwrap();
        let mut rng = derive(4, 0);
        let mut masked = 0usize;
        let mut replaced = 0usize;
        for i in 0..150 {
            let ex = example((0..24).map(|k| 5 + ((k * 7 + i) % 45)).collect());
            let plan = plan_masking(&ex, 0.3, &mut rng).unwrap();
            let batch =
                build_rtd_batch(&[&ex], &store, &gen, &[plan], &mut rng, 1.0, 0.0, i as u64).unwrap();
            masked += batch.masked_positions.len();
            replaced += batch
                .disc_labels
                .iter()
                .filter(|&&l| l == DiscLabel::Replaced)
                .count();
        }
        let v = disc.vocab_size as f64;
        let p = 1.0 - 1.0 / v;
        let sigma = (p * (1.0 - p) / masked as f64).sqrt();
        let rate = replaced as f64 / masked as f64;
        assert!(
            (rate - p).abs() <= 3.0 * sigma + 0.02,
            "replaced rate {rate}, expected near {p} (3 sigma = {})",
            3.0 * sigma
        );
    }
}
