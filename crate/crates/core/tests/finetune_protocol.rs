//! Protocol-level fine-tuning tests on toy tasks with random-init encoders.

use lrlm_core::finetune::{
    evaluate_model, finetune, prepare_qa, prepare_single_cls, prepare_tagged, ClsRecord,
    FinetuneConfig, Predictions, QaExample, TaggedSentence, TaskData, TaskSpec,
};
use lrlm_core::model::{init_encoder_params, ModelConfig, ParamStore};
use lrlm_core::pretrain::synth::{TopicWorld, LANG_A};
use lrlm_core::tokenizer::{Vocab, SPECIAL_TOKENS};

fn tiny_model(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        layers: 1,
        hidden: 32,
        heads: 2,
        ffn: 64,
        embedding: 32,
        vocab_size,
        max_positions: 40,
        gen_ratio: (1, 2),
    }
}

fn quick_config(epochs: usize, lr: f64, seeds: Vec<u64>) -> FinetuneConfig {
    FinetuneConfig {
        epochs,
        batch_size: 32,
        lr_grid: vec![lr],
        seeds,
        max_len: 36,
        dropout: 0.1,
        weight_decay: 0.01,
        max_answer_tokens: 30,
    }
}

/// Concept-token classification rendered as text over a synthetic vocab.
/// Token ids map to made-up words so the real tokenizer path is exercised.
fn synth_vocab_and_records(world: &TopicWorld, n: usize, purity: f64, seed: u64) -> (Vocab, Vec<ClsRecord>) {
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    for i in 0..world.vocab_size() - 5 {
        tokens.push(format!("w{i}"));
    }
    let vocab = Vocab::from_tokens(tokens).unwrap();
    let records: Vec<ClsRecord> = world
        .classification_set(LANG_A, n, 14, purity, seed)
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
        .collect();
    (vocab, records)
}

#[test]
fn separable_toy_task_reaches_high_dev_accuracy() {
    let world = TopicWorld::new(10);
    // purity 1.0: class token sets are disjoint, linearly separable
    let (vocab, train) = synth_vocab_and_records(&world, 240, 1.0, 11);
    let (_, dev) = synth_vocab_and_records(&world, 80, 1.0, 12);
    let task = TaskSpec::single_cls(vec!["topic0".into(), "topic1".into()]);
    let model = tiny_model(vocab.size());
    let store: ParamStore<f32> = init_encoder_params(&model, 5);
    let config = quick_config(4, 3e-3, vec![1]);
    let train_data = prepare_single_cls(&train, &task, &vocab, config.max_len).unwrap();
    let dev_data = prepare_single_cls(&dev, &task, &vocab, config.max_len).unwrap();
    let outcome = finetune(&model, &store, &task, &config, &train_data, &dev_data).unwrap();
    assert!(
        outcome.mean_dev_score >= 95.0,
        "dev macro-F1 {} below 95",
        outcome.mean_dev_score
    );
}

#[test]
fn selection_takes_the_best_epoch() {
    let world = TopicWorld::new(8);
    let (vocab, train) = synth_vocab_and_records(&world, 160, 0.9, 21);
    let (_, dev) = synth_vocab_and_records(&world, 60, 0.9, 22);
    let task = TaskSpec::single_cls(vec!["topic0".into(), "topic1".into()]);
    let model = tiny_model(vocab.size());
    let store: ParamStore<f32> = init_encoder_params(&model, 6);
    let config = quick_config(5, 2e-3, vec![3]);
    let train_data = prepare_single_cls(&train, &task, &vocab, config.max_len).unwrap();
    let dev_data = prepare_single_cls(&dev, &task, &vocab, config.max_len).unwrap();
    let outcome = finetune(&model, &store, &task, &config, &train_data, &dev_data).unwrap();
    let run = &outcome.runs[0];
    assert_eq!(run.epoch_scores.len(), 5);
    let best = run
        .epoch_scores
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(run.dev_score, best);
    // best_epoch is the first epoch achieving the max (1-based)
    let argmax = run.epoch_scores.iter().position(|&s| s == best).unwrap() + 1;
    assert_eq!(run.best_epoch, argmax);
}

#[test]
fn three_seeds_yield_three_models_and_mean() {
    let world = TopicWorld::new(8);
    let (vocab, train) = synth_vocab_and_records(&world, 150, 0.95, 31);
    let (_, dev) = synth_vocab_and_records(&world, 60, 0.95, 32);
    let task = TaskSpec::single_cls(vec!["topic0".into(), "topic1".into()]);
    let model = tiny_model(vocab.size());
    let store: ParamStore<f32> = init_encoder_params(&model, 7);
    let config = quick_config(3, 2e-3, vec![1, 2, 3]);
    let train_data = prepare_single_cls(&train, &task, &vocab, config.max_len).unwrap();
    let dev_data = prepare_single_cls(&dev, &task, &vocab, config.max_len).unwrap();
    let outcome = finetune(&model, &store, &task, &config, &train_data, &dev_data).unwrap();
    assert_eq!(outcome.runs.len(), 3);
    let seeds: Vec<u64> = outcome.runs.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, vec![1, 2, 3]);
    let mean = outcome.runs.iter().map(|r| r.dev_score).sum::<f64>() / 3.0;
    assert!((outcome.mean_dev_score - mean).abs() < 1e-12);
}

#[test]
fn same_seed_reruns_identically_different_seed_differs() {
    let world = TopicWorld::new(8);
    let (vocab, train) = synth_vocab_and_records(&world, 120, 0.9, 41);
    let (_, dev) = synth_vocab_and_records(&world, 48, 0.9, 42);
    let task = TaskSpec::single_cls(vec!["topic0".into(), "topic1".into()]);
    let model = tiny_model(vocab.size());
    let store: ParamStore<f32> = init_encoder_params(&model, 8);
    let train_data = prepare_single_cls(&train, &task, &vocab, 36).unwrap();
    let dev_data = prepare_single_cls(&dev, &task, &vocab, 36).unwrap();

    let run_with = |seed: u64| {
        let config = quick_config(3, 2e-3, vec![seed]);
        let outcome = finetune(&model, &store, &task, &config, &train_data, &dev_data).unwrap();
        outcome.runs[0].epoch_scores.clone()
    };
    assert_eq!(run_with(5), run_with(5));
    assert_ne!(run_with(5), run_with(6));
}

#[test]
fn diverged_runs_are_excluded_and_reported() {
    let world = TopicWorld::new(8);
    let (vocab, train) = synth_vocab_and_records(&world, 100, 0.9, 51);
    let (_, dev) = synth_vocab_and_records(&world, 40, 0.9, 52);
    let task = TaskSpec::single_cls(vec!["topic0".into(), "topic1".into()]);
    let model = tiny_model(vocab.size());
    let store: ParamStore<f32> = init_encoder_params(&model, 9);
    let mut config = quick_config(3, 2e-3, vec![1]);
    config.lr_grid = vec![1e18, 2e-3]; // the absurd rate must diverge
    let train_data = prepare_single_cls(&train, &task, &vocab, 36).unwrap();
    let dev_data = prepare_single_cls(&dev, &task, &vocab, 36).unwrap();
    let outcome = finetune(&model, &store, &task, &config, &train_data, &dev_data).unwrap();
    assert_eq!(outcome.best_lr, 2e-3);
    assert!(!outcome.failed.is_empty());
    assert!(outcome.failed.iter().all(|f| f.lr == 1e18));
}

#[test]
fn ner_toy_task_learns_token_classes() {
    // tag = class of the word's concept: pure embedding lookup, learnable fast
    let world = TopicWorld::new(10);
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    for i in 0..world.vocab_size() - 5 {
        tokens.push(format!("w{i}"));
    }
    let vocab = Vocab::from_tokens(tokens).unwrap();
    let make_sentences = |n: usize, seed: u64| -> Vec<TaggedSentence> {
        world
            .classification_set(LANG_A, n, 10, 0.5, seed)
            .into_iter()
            .map(|(ids, _)| TaggedSentence {
                tokens: ids.iter().map(|&id| format!("w{}", id - 5)).collect(),
                tags: ids
                    .iter()
                    .map(|&id| {
                        let concept = id as usize - 5 - world.n_concepts();
                        if world.class_of(concept) == 1 {
                            "B-ONE".to_string()
                        } else {
                            "O".to_string()
                        }
                    })
                    .collect(),
            })
            .collect()
    };
    let task = TaskSpec::seq_label(vec!["O".into(), "B-ONE".into(), "I-ONE".into()]);
    let model = tiny_model(vocab.size());
    let store: ParamStore<f32> = init_encoder_params(&model, 10);
    let config = quick_config(3, 3e-3, vec![1]);
    let train = prepare_tagged(&make_sentences(150, 61), &task, &vocab, config.max_len).unwrap();
    let dev = prepare_tagged(&make_sentences(50, 62), &task, &vocab, config.max_len).unwrap();
    let outcome = finetune(&model, &store, &task, &config, &train, &dev).unwrap();
    assert!(
        outcome.mean_dev_score >= 90.0,
        "micro-F1 {} below 90",
        outcome.mean_dev_score
    );
}

#[test]
fn qa_toy_task_end_to_end() {
    // context lists distinct words; the question repeats the answer word
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    for i in 0..40 {
        tokens.push(format!("w{i}"));
    }
    let vocab = Vocab::from_tokens(tokens).unwrap();
    let make = |n: usize, seed: u64| -> Vec<QaExample> {
        (0..n)
            .map(|i| {
                let mut state = (seed + i as u64).wrapping_mul(0x9e3779b97f4a7c15) | 1;
                let mut next = move || {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    state as usize
                };
                let words: Vec<String> = (0..8).map(|_| format!("w{}", next() % 40)).collect();
                let context = words.join(" ");
                let answerable = i % 4 != 3;
                if answerable {
                    let target = next() % 8;
                    let answer = words[target].clone();
                    let char_start = words[..target].iter().map(|w| w.chars().count() + 1).sum();
                    QaExample {
                        id: format!("q{i}"),
                        question: answer.clone(),
                        context,
                        answer_text: Some(answer),
                        answer_char_start: Some(char_start),
                        is_answerable: true,
                    }
                } else {
                    QaExample {
                        id: format!("q{i}"),
                        question: "w39 w38".into(),
                        context: words[..6].join(" "),
                        answer_text: None,
                        answer_char_start: None,
                        is_answerable: false,
                    }
                }
            })
            .collect()
    };
    let task = TaskSpec::span_qa();
    let model = tiny_model(vocab.size());
    let store: ParamStore<f32> = init_encoder_params(&model, 11);
    let config = quick_config(6, 3e-3, vec![1]);
    let train = prepare_qa(&make(420, 71), None, &vocab, config.max_len).unwrap();
    let dev = prepare_qa(&make(80, 72), None, &vocab, config.max_len).unwrap();
    let outcome = finetune(&model, &store, &task, &config, &train, &dev).unwrap();
    let run = &outcome.runs[0];
    assert!(run.tau.is_some(), "QA selection must tune the null threshold");
    // pointing at the repeated question token is learnable; require clear
    // signal above the 25.0 scored by constant "unanswerable" predictions
    assert!(
        run.dev_score >= 40.0,
        "QA dev (EM+F1)/2 = {} below 40",
        run.dev_score
    );
    // evaluation with the tuned threshold reproduces the dev score
    let eval = evaluate_model(&model, &run.store, &task, &config, &dev, run.tau).unwrap();
    assert!((eval.scalar - run.dev_score).abs() < 1e-9);
    match eval.predictions {
        Predictions::Answers(answers) => assert_eq!(answers.len(), dev.len()),
        _ => panic!("QA evaluation must produce answers"),
    }
    match (&train, &dev) {
        (TaskData::Qa { dropped_answers, .. }, TaskData::Qa { .. }) => {
            // max_len 36 fits every 8-word context; nothing dropped
            assert_eq!(*dropped_answers, 0);
        }
        _ => unreachable!(),
    }
}
