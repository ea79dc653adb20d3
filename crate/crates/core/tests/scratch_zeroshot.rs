//! Tuning probe for the zero-shot transfer experiment.

use lrlm_core::benchmark::accuracy;
use lrlm_core::finetune::{
    evaluate_model, finetune, prepare_single_cls, ClsRecord, FinetuneConfig, Predictions, TaskSpec,
};
use lrlm_core::model::{ModelConfig, ParamStore};
use lrlm_core::pretrain::synth::{TopicWorld, LANG_A, LANG_B};
use lrlm_core::pretrain::{pretrain, LrSchedule, PretrainConfig, PretrainData, PretrainOutcome};
use lrlm_core::tokenizer::{Vocab, SPECIAL_TOKENS};

fn world_vocab(world: &TopicWorld) -> Vocab {
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    for i in 0..world.vocab_size() - 5 {
        tokens.push(format!("w{i}"));
    }
    Vocab::from_tokens(tokens).unwrap()
}

fn records(world: &TopicWorld, lang: usize, n: usize, purity: f64, seed: u64) -> Vec<ClsRecord> {
    world
        .classification_set(lang, n, 16, purity, seed)
        .into_iter()
        .enumerate()
        .map(|(i, (ids, label))| ClsRecord {
            id: Some(i.to_string()),
            text: ids
                .iter()
                .map(|&id| format!("w{}", id - 5))
                .collect::<Vec<_>>()
                .join(" "),
            label: format!("topic{label}"),
        })
        .collect()
}

fn transfer_accuracy(
    world: &TopicWorld,
    bilingual: bool,
    pretrain_steps: usize,
    seed: u64,
) -> f64 {
    let model = ModelConfig {
        layers: 2,
        hidden: 64,
        heads: 4,
        ffn: 256,
        embedding: 64,
        vocab_size: world.vocab_size(),
        max_positions: 48,
        gen_ratio: (1, 2),
    };
    let config = PretrainConfig {
        model: model.clone(),
        steps: pretrain_steps,
        batch_size: 32,
        schedule: LrSchedule::new(1e-3, 100, pretrain_steps).unwrap(),
        lambda: 5.0,
        mask_fraction: 0.15,
        temperature: 1.0,
        dropout: 0.0,
        weight_decay: 0.01,
        seed,
        checkpoint_interval: 100_000,
        eval_interval: 500,
    };
    let corpus_a = world.pretrain_corpus(LANG_A, 1200, (8, 16), 0.85, seed ^ 0xA);
    let data = if bilingual {
        PretrainData::Bilingual {
            corpus_a,
            corpus_b: world.pretrain_corpus(LANG_B, 1200, (8, 16), 0.85, seed ^ 0xB),
            weights: (0.5, 0.5),
        }
    } else {
        PretrainData::Mono(corpus_a)
    };
    let out: PretrainOutcome<f32> = pretrain(&config, &data, None).unwrap();
    println!(
        "   [{} seed {seed}] pretrain final mlm {:.3} auc {:.3}",
        if bilingual { "bi" } else { "mono" },
        out.trace.last().unwrap().mlm_loss,
        out.final_disc_auc
    );

    let vocab = world_vocab(world);
    let task = TaskSpec::single_cls(vec!["topic0".into(), "topic1".into()]);
    let ft_config = FinetuneConfig {
        epochs: 3,
        batch_size: 32,
        lr_grid: vec![2e-3],
        seeds: vec![seed],
        max_len: 24,
        dropout: 0.1,
        weight_decay: 0.01,
        max_answer_tokens: 30,
    };
    let train = prepare_single_cls(&records(world, LANG_A, 400, 0.85, 100 + seed), &task, &vocab, 24).unwrap();
    let dev = prepare_single_cls(&records(world, LANG_A, 100, 0.85, 200 + seed), &task, &vocab, 24).unwrap();
    let outcome = finetune(&model, &out.store, &task, &ft_config, &train, &dev).unwrap();
    let run = &outcome.runs[0];

    let test_b_records = records(world, LANG_B, 300, 0.85, 300 + seed);
    let test_b = prepare_single_cls(&test_b_records, &task, &vocab, 24).unwrap();
    let eval = evaluate_model(&model, &run.store, &task, &ft_config, &test_b, None).unwrap();
    let gold: Vec<String> = test_b_records.iter().map(|r| r.label.clone()).collect();
    let acc = match &eval.predictions {
        Predictions::Labels(p) => accuracy(&gold, p).unwrap(),
        _ => unreachable!(),
    };
    println!(
        "   [{} seed {seed}] dev-A {:.1} -> zero-shot B accuracy {:.1}",
        if bilingual { "bi" } else { "mono" },
        run.dev_score,
        acc
    );
    acc
}

#[test]
#[ignore]
fn probe_zero_shot_bilingual() {
    let world = TopicWorld::new(24);
    let acc = transfer_accuracy(&world, true, 1200, 1);
    println!("=== bilingual zero-shot accuracy: {acc:.1}");
}

#[test]
#[ignore]
fn probe_zero_shot_mono_control() {
    let world = TopicWorld::new(24);
    let acc = transfer_accuracy(&world, false, 1200, 1);
    println!("=== mono control zero-shot accuracy: {acc:.1}");
}
