use std::fs;
use std::path::PathBuf;

use clap::Args;

use lrlm_core::autograd::Tape;
use lrlm_core::benchmark::{format_profile_table, profile_run, ResourceProfile};
use lrlm_core::model::{bind, forward_encoder, init_encoder_params, EncoderInput, ModelConfig, ParamStore};
use lrlm_core::pretrain::{pretrain, synth::zipfian_grammar_corpus, LrSchedule, PretrainConfig, PretrainData};

use crate::config::{load_config, ProfileStage, Workload};
use crate::CliError;

#[derive(Args)]
pub struct ProfileArgs {
    /// Stage config (JSON). See README for the schema.
    #[arg(long)]
    config: PathBuf,
}

pub fn run_profile(args: ProfileArgs) -> Result<(), CliError> {
    let stage: ProfileStage = load_config(&args.config)?;
    let violations = stage.validate();
    if !violations.is_empty() {
        return Err(CliError::violations(violations));
    }

    let ffn = if stage.ffn == 0 { stage.hidden * 4 } else { stage.ffn };
    let model = ModelConfig {
        layers: stage.layers,
        hidden: stage.hidden,
        heads: stage.heads,
        ffn,
        embedding: stage.hidden,
        vocab_size: stage.vocab_size,
        max_positions: stage.len.max(8),
        gen_ratio: (1, 2),
    };

    let baseline: Option<ResourceProfile> = match &stage.baseline {
        Some(path) => Some(load_config(path)?),
        None => None,
    };

    let profile = match stage.workload {
        Workload::EncoderForward => {
            let store: ParamStore<f32> = init_encoder_params(&model, 7);
            let ids: Vec<u32> = (0..stage.batch * stage.len)
                .map(|i| (5 + i % (stage.vocab_size - 5)) as u32)
                .collect();
            let mask = vec![1u8; stage.batch * stage.len];
            profile_run(
                &stage.name,
                || {
                    for _ in 0..stage.reps {
                        let mut tape: Tape<f32> = Tape::new();
                        tape.set_check_finite(false);
                        let bound = bind(&store, &mut tape, false);
                        forward_encoder(
                            &mut tape,
                            &bound,
                            &model,
                            "disc",
                            &EncoderInput {
                                ids: &ids,
                                batch: stage.batch,
                                len: stage.len,
                                attention_mask: &mask,
                                segment_ids: None,
                                dropout: 0.0,
                            },
                        )
                        .expect("profiled forward");
                    }
                },
                baseline.as_ref(),
            )
        }
        Workload::PretrainSteps => {
            let corpus = zipfian_grammar_corpus(
                stage.vocab_size,
                256,
                (stage.len / 2, stage.len.saturating_sub(1).max(stage.len / 2 + 1)),
                7,
            );
            let config = PretrainConfig {
                model: model.clone(),
                steps: stage.reps,
                batch_size: stage.batch,
                schedule: LrSchedule::new(1e-3, 1, stage.reps.max(2)).map_err(CliError::from)?,
                lambda: 50.0,
                mask_fraction: 0.15,
                temperature: 1.0,
                dropout: 0.0,
                weight_decay: 0.01,
                seed: 7,
                checkpoint_interval: usize::MAX,
                eval_interval: usize::MAX,
            };
            profile_run(
                &stage.name,
                || {
                    pretrain::<f32>(&config, &PretrainData::Mono(corpus.clone()), None)
                        .expect("profiled pretrain");
                },
                baseline.as_ref(),
            )
        }
    };

    let table = format_profile_table(std::slice::from_ref(&profile));
    print!("{table}");
    let text = serde_json::to_string_pretty(&profile).map_err(|e| CliError::runtime(e.to_string()))?;
    if let Some(path) = &stage.output {
        fs::write(path, &text).map_err(|e| CliError::runtime(format!("write {}: {e}", path.display())))?;
    }
    println!("{text}");
    Ok(())
}
