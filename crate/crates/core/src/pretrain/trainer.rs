use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::{Scalar, Tape, TensorId};
use crate::error::{Error, Result};
use crate::model::{
    bind, checkpoint, collect_grads, derive_generator_config, disc_logits, forward_encoder,
    mlm_logits, EncoderInput, ModelConfig, ParamStore,
};
use crate::rng;
use crate::tokenizer::PackedExample;

use super::adam::{adam_step, AdamState};
use super::batch::{assemble_rows, complete_batch, sample_replacements, DiscLabel, RtdBatch};
use super::masking::plan_masking;
use super::sampler::{sample_mono, BilingualSampler};
use super::schedule::LrSchedule;

pub const DEFAULT_RTD_LAMBDA: f64 = 50.0;

/// Joint objective: `mlm_loss + lambda * disc_loss` as tape ops, so the
/// backward pass reaches both branches (and the shared embeddings twice).
pub fn rtd_loss<S: Scalar>(
    tape: &mut Tape<S>,
    mlm_loss: TensorId,
    disc_loss: TensorId,
    lambda: f64,
) -> Result<TensorId> {
    let weighted = tape.scale(disc_loss, lambda)?;
    tape.add(mlm_loss, weighted)
}

/// Pretraining hyperparameters. `model` describes the discriminator; the
/// generator is derived from it via `model.gen_ratio`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub model: ModelConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_mask_fraction")]
    pub mask_fraction: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub seed: u64,
    /// Steps between checkpoint refreshes (also the abort-recovery point).
    #[serde(default = "default_checkpoint_interval")]
    pub checkpoint_interval: usize,
    /// Steps between held-out discriminator evaluations.
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
}

fn default_lambda() -> f64 {
    DEFAULT_RTD_LAMBDA
}
fn default_mask_fraction() -> f64 {
    super::masking::DEFAULT_MASK_FRACTION
}
fn default_temperature() -> f64 {
    1.0
}
fn default_dropout() -> f64 {
    0.1
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_checkpoint_interval() -> usize {
    500
}
fn default_eval_interval() -> usize {
    100
}

/// Training data: one corpus, or two mixed with equal participation.
pub enum PretrainData {
    Mono(Vec<PackedExample>),
    Bilingual {
        corpus_a: Vec<PackedExample>,
        corpus_b: Vec<PackedExample>,
        weights: (f64, f64),
    },
}

/// One emitted trace row. `disc_auc` is populated at eval intervals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub mlm_loss: f64,
    pub disc_loss: f64,
    pub disc_auc: Option<f64>,
}

pub struct PretrainOutcome<S> {
    pub store: ParamStore<S>,
    pub trace: Vec<TraceRow>,
    pub final_disc_auc: f64,
}

/// Replaced-vs-original ranking quality (Mann-Whitney AUC) of discriminator
/// logits on a completed batch.
pub fn disc_auc<S: Scalar>(logits: &[S], labels: &[DiscLabel]) -> f64 {
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for (l, &lab) in logits.iter().zip(labels) {
        match lab {
            DiscLabel::Replaced => pos.push(l.to_f64()),
            DiscLabel::Original => neg.push(l.to_f64()),
            DiscLabel::Ignore => {}
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return 0.5;
    }
    let mut wins = 0.0f64;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() as f64 * neg.len() as f64)
}

struct StepOutput<S: Scalar> {
    tape: Tape<S>,
    batch: RtdBatch,
    mlm_loss: TensorId,
    disc_loss: TensorId,
    disc_logits: TensorId,
    total: TensorId,
    bound: crate::model::BoundParams,
}

/// Build the joint tape for one batch: generator forward on masked input,
/// replacement sampling from the live logits, discriminator forward on the
/// corrupted ids, and the combined loss.
#[allow(clippy::too_many_arguments)]
fn rtd_step<S: Scalar>(
    store: &ParamStore<S>,
    disc_config: &ModelConfig,
    gen_config: &ModelConfig,
    examples: &[&PackedExample],
    config: &PretrainConfig,
    mask_rng: &mut rand_chacha::ChaCha8Rng,
    sample_rng: &mut rand_chacha::ChaCha8Rng,
    dropout: f64,
    dropout_seed: u64,
    trainable: bool,
) -> Result<StepOutput<S>> {
    let plans: Result<Vec<_>> = examples
        .iter()
        .map(|ex| plan_masking(ex, config.mask_fraction, mask_rng))
        .collect();
    let rows = assemble_rows(examples, &plans?, disc_config.max_positions)?;
    if rows.masked_positions.is_empty() {
        return Err(Error::Train("batch contains no maskable positions".into()));
    }

    let mut tape: Tape<S> = Tape::with_dropout_seed(dropout_seed);
    // divergence is caught at the loss (and by Adam's gradient guard), so the
    // per-op scan is pure overhead here
    tape.set_check_finite(false);
    let bound = bind(store, &mut tape, trainable);

    let gen_hidden = forward_encoder(
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
    let gen_logits = mlm_logits(&mut tape, &bound, gen_hidden, &rows.masked_positions)?;
    let mlm_loss = tape.cross_entropy(gen_logits, &rows.mlm_targets)?;

    // sampling is a discrete draw from the current generator; no gradient
    // flows through it
    let samples = sample_replacements(
        tape.values(gen_logits),
        gen_config.vocab_size,
        config.temperature,
        sample_rng,
    );
    let batch = complete_batch(rows, &samples);

    let disc_hidden = forward_encoder(
        &mut tape,
        &bound,
        disc_config,
        "disc",
        &EncoderInput {
            ids: &batch.sampled_ids,
            batch: batch.batch,
            len: batch.len,
            attention_mask: &batch.attention_mask,
            segment_ids: None,
            dropout,
        },
    )?;
    let logits = disc_logits(&mut tape, &bound, disc_hidden)?;
    let labels: Vec<S> = batch
        .disc_labels
        .iter()
        .map(|&l| {
            if l == DiscLabel::Replaced {
                S::ONE
            } else {
                S::ZERO
            }
        })
        .collect();
    let mask: Vec<bool> = batch
        .disc_labels
        .iter()
        .map(|&l| l != DiscLabel::Ignore)
        .collect();
    let disc_loss = tape.bce_with_logits(logits, &labels, &mask)?;
    let total = rtd_loss(&mut tape, mlm_loss, disc_loss, config.lambda)?;

    Ok(StepOutput {
        tape,
        batch,
        mlm_loss,
        disc_loss,
        disc_logits: logits,
        total,
        bound,
    })
}

/// Discriminator AUC on a held-out batch under the current parameters
/// (dropout off).
fn evaluate_disc_auc<S: Scalar>(
    store: &ParamStore<S>,
    disc_config: &ModelConfig,
    gen_config: &ModelConfig,
    examples: &[&PackedExample],
    config: &PretrainConfig,
    seed: u64,
) -> Result<f64> {
    let mut mask_rng = rng::derive(seed, 0xe7a1);
    let mut sample_rng = rng::derive(seed, 0xe7a2);
    let out = rtd_step(
        store,
        disc_config,
        gen_config,
        examples,
        config,
        &mut mask_rng,
        &mut sample_rng,
        0.0,
        0,
        false,
    )?;
    Ok(disc_auc(
        out.tape.values(out.disc_logits),
        &out.batch.disc_labels,
    ))
}

/// Run the replaced-token-detection loop: mask, sample, joint forward,
/// backward, Adam with the linear schedule. Emits a per-step trace and
/// refreshes a checkpoint every `checkpoint_interval` steps; a non-finite
/// loss aborts after saving the last good checkpoint.
pub fn pretrain<S: Scalar>(
    config: &PretrainConfig,
    data: &PretrainData,
    checkpoint_dir: Option<&Path>,
) -> Result<PretrainOutcome<S>> {
    config.model.validate()?;
    if config.steps > config.schedule.total_steps {
        return Err(Error::Train(format!(
            "{} steps exceed the schedule's {}",
            config.steps, config.schedule.total_steps
        )));
    }
    let disc_config = config.model.clone();
    let gen_config = derive_generator_config(&disc_config, disc_config.gen_ratio)?;
    let mut store: ParamStore<S> = crate::model::init_pretrain_params(&disc_config, &gen_config, config.seed)?;
    let mut adam: AdamState<S> = AdamState::new(config.weight_decay);

    let mut batch_rng = rng::derive(config.seed, 0xba7c);
    let mut mask_rng = rng::derive(config.seed, 0x3a5c);
    let mut sample_rng = rng::derive(config.seed, 0x5a3e);
    let mut heldout_rng = rng::derive(config.seed, 0x4e1d);

    let draw = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Result<Vec<&PackedExample>> {
        match data {
            PretrainData::Mono(corpus) => sample_mono(corpus, n, rng),
            PretrainData::Bilingual {
                corpus_a,
                corpus_b,
                weights,
            } => Ok(BilingualSampler::new(corpus_a, corpus_b, *weights)?.sample(n, rng)),
        }
    };

    // a larger held-out set keeps the periodic AUC estimate stable
    let held_out = draw(&mut heldout_rng, config.batch_size * 4)?;

    let mut trace: Vec<TraceRow> = Vec::with_capacity(config.steps);
    let mut last_good: Option<(usize, ParamStore<S>)> = None;
    let save_checkpoint = |dir: &Path, store: &ParamStore<S>| -> Result<()> {
        checkpoint::save(dir, &disc_config, store)
    };

    for step in 1..=config.steps {
        let examples = draw(&mut batch_rng, config.batch_size)?;
        let out = rtd_step(
            &store,
            &disc_config,
            &gen_config,
            &examples,
            config,
            &mut mask_rng,
            &mut sample_rng,
            config.dropout,
            rng::mix(config.seed ^ step as u64),
            true,
        )?;
        let mlm = out.tape.scalar_value(out.mlm_loss).to_f64();
        let disc = out.tape.scalar_value(out.disc_loss).to_f64();
        if !mlm.is_finite() || !disc.is_finite() {
            if let (Some(dir), Some((good_step, good_store))) = (checkpoint_dir, &last_good) {
                save_checkpoint(dir, good_store)?;
                return Err(Error::Train(format!(
                    "non-finite loss at step {step}; checkpoint from step {good_step} saved"
                )));
            }
            return Err(Error::Train(format!("non-finite loss at step {step}")));
        }

        let mut tape = out.tape;
        tape.backward(out.total)?;
        let grads = collect_grads(&store, &out.bound, &tape);
        let lr = config.schedule.lr_at_step(step)?;
        adam_step(&mut store, &grads, &mut adam, lr)?;

        let auc = if step % config.eval_interval == 0 || step == config.steps {
            Some(evaluate_disc_auc(
                &store,
                &disc_config,
                &gen_config,
                &held_out,
                config,
                config.seed ^ 0xAA,
            )?)
        } else {
            None
        };
        trace.push(TraceRow {
            step,
            lr,
            mlm_loss: mlm,
            disc_loss: disc,
            disc_auc: auc,
        });

        if step % config.checkpoint_interval == 0 {
            last_good = Some((step, store.clone()));
            if let Some(dir) = checkpoint_dir {
                save_checkpoint(dir, &store)?;
            }
        }
    }

    if let Some(dir) = checkpoint_dir {
        save_checkpoint(dir, &store)?;
    }
    let final_disc_auc = evaluate_disc_auc(
        &store,
        &disc_config,
        &gen_config,
        &held_out,
        config,
        config.seed ^ 0xAA,
    )?;
    Ok(PretrainOutcome {
        store,
        trace,
        final_disc_auc,
    })
}

/// Write the loss trace as CSV: `step,lr,mlm_loss,disc_loss,disc_auc`.
pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(["step", "lr", "mlm_loss", "disc_loss", "disc_auc"])?;
    for row in trace {
        w.write_record([
            row.step.to_string(),
            format!("{:.8e}", row.lr),
            format!("{:.6}", row.mlm_loss),
            format!("{:.6}", row.disc_loss),
            row.disc_auc.map(|a| format!("{a:.4}")).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(PathBuf::from(path), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pretrain::synth::zipfian_grammar_corpus;

    fn toy_config(steps: usize, seed: u64) -> PretrainConfig {
        PretrainConfig {
            model: ModelConfig {
                layers: 1,
                hidden: 32,
                heads: 2,
                ffn: 64,
                embedding: 32,
                vocab_size: 60,
                max_positions: 24,
                gen_ratio: (1, 2),
            },
            steps,
            batch_size: 8,
            schedule: LrSchedule::new(3e-4, 10, steps.max(20)).unwrap(),
            lambda: DEFAULT_RTD_LAMBDA,
            mask_fraction: 0.15,
            temperature: 1.0,
            dropout: 0.0,
            weight_decay: 0.01,
            seed,
            checkpoint_interval: 50,
            eval_interval: 10,
        }
    }

    #[test]
    fn rtd_loss_arithmetic() {
        let mut tape: Tape<f64> = Tape::new();
        let mlm = tape.constant(vec![2.0], &[1]);
        let disc = tape.constant(vec![0.1], &[1]);
        let total = rtd_loss(&mut tape, mlm, disc, 50.0).unwrap();
        assert!((tape.scalar_value(total) - 7.0).abs() < 1e-12);

        let total_zero = {
            let disc0 = tape.constant(vec![0.0], &[1]);
            rtd_loss(&mut tape, mlm, disc0, 50.0).unwrap()
        };
        assert!((tape.scalar_value(total_zero) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_stops_disc_gradients() {
        // with lambda = 0 the discriminator head gets no gradient
        let config = toy_config(1, 3);
        let corpus = zipfian_grammar_corpus(config.model.vocab_size, 30, (10, 20), 5);
        let disc_config = config.model.clone();
        let gen_config = derive_generator_config(&disc_config, (1, 2)).unwrap();
        let store: ParamStore<f64> =
            crate::model::init_pretrain_params(&disc_config, &gen_config, 3).unwrap();
        let refs: Vec<&PackedExample> = corpus.iter().take(4).collect();
        let mut zeroed = config.clone();
        zeroed.lambda = 0.0;
        let mut mask_rng = rng::derive(1, 1);
        let mut sample_rng = rng::derive(1, 2);
        let out = rtd_step(
            &store,
            &disc_config,
            &gen_config,
            &refs,
            &zeroed,
            &mut mask_rng,
            &mut sample_rng,
            0.0,
            0,
            true,
        )
        .unwrap();
        let mut tape = out.tape;
        tape.backward(out.total).unwrap();
        let grads = collect_grads(&store, &out.bound, &tape);
        let head_grad = grads.get("disc.rtd.out.w").unwrap();
        assert!(head_grad.iter().all(|&g| g == 0.0));
        // generator still learns
        let gen_grad = grads.get("gen.mlm.dense.w").unwrap();
        assert!(gen_grad.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn gradient_reaches_every_non_pad_position() {
        // loss must flow into the discriminator branch at every non-pad
        // token: check embedding-row gradients via a position-unique batch
        let config = toy_config(1, 9);
        let disc_config = config.model.clone();
        let gen_config = derive_generator_config(&disc_config, (1, 2)).unwrap();
        let store: ParamStore<f64> =
            crate::model::init_pretrain_params(&disc_config, &gen_config, 9).unwrap();
        let ex = PackedExample {
            doc_id: "x".into(),
            token_ids: (0..16).map(|i| 5 + i as u32).collect(),
        };
        let mut mask_rng = rng::derive(2, 1);
        let mut sample_rng = rng::derive(2, 2);
        let out = rtd_step(
            &store,
            &disc_config,
            &gen_config,
            &[&ex],
            &config,
            &mut mask_rng,
            &mut sample_rng,
            0.0,
            0,
            true,
        )
        .unwrap();
        let mut tape = out.tape;
        tape.backward(out.total).unwrap();
        let grads = collect_grads(&store, &out.bound, &tape);
        let emb_grad = grads.get("emb.pos").unwrap();
        let e = disc_config.embedding;
        for pos in 0..out.batch.len {
            if out.batch.attention_mask[pos] == 0 {
                continue;
            }
            let row = &emb_grad[pos * e..(pos + 1) * e];
            assert!(
                row.iter().any(|&g| g != 0.0),
                "no gradient at non-pad position {pos}"
            );
        }
    }

    #[test]
    fn seed_fixed_rerun_reproduces_trace() {
        let config = toy_config(6, 17);
        let corpus = zipfian_grammar_corpus(config.model.vocab_size, 40, (8, 20), 5);
        let run = || {
            let out: PretrainOutcome<f32> =
                pretrain(&config, &PretrainData::Mono(corpus.clone()), None).unwrap();
            out.trace
                .iter()
                .map(|r| (r.mlm_loss, r.disc_loss))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn trace_csv_is_well_formed() {
        let rows = vec![
            TraceRow {
                step: 1,
                lr: 1e-4,
                mlm_loss: 5.0,
                disc_loss: 0.7,
                disc_auc: None,
            },
            TraceRow {
                step: 2,
                lr: 2e-4,
                mlm_loss: 4.9,
                disc_loss: 0.69,
                disc_auc: Some(0.55),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,lr,mlm_loss,disc_loss,disc_auc");
        assert_eq!(text.lines().count(), 3);
    }
}
