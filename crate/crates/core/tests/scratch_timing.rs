use std::time::Instant;

use lrlm_core::model::ModelConfig;
use lrlm_core::pretrain::{
    pretrain, synth::zipfian_grammar_corpus, LrSchedule, PretrainConfig, PretrainData,
};

fn probe(steps: usize, len_range: (usize, usize), lr: f64, lambda: f64, dropout: f64) {
    let config = PretrainConfig {
        model: ModelConfig {
            layers: 2,
            hidden: 64,
            heads: 4,
            ffn: 256,
            embedding: 64,
            vocab_size: 200,
            max_positions: 64,
            gen_ratio: (1, 2),
        },
        steps,
        batch_size: 32,
        schedule: LrSchedule::new(lr, 100, steps.max(2000)).unwrap(),
        lambda,
        mask_fraction: 0.15,
        temperature: 1.0,
        dropout,
        weight_decay: 0.01,
        seed: 7,
        checkpoint_interval: 100_000,
        eval_interval: 100,
    };
    let corpus = zipfian_grammar_corpus(200, 2000, len_range, 7);
    let start = Instant::now();
    let out = pretrain::<f32>(&config, &PretrainData::Mono(corpus), None).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let tail_mlm: f64 = out.trace.iter().rev().take(20).map(|r| r.mlm_loss).sum::<f64>() / 20.0;
    println!(
        "=== steps={steps} len={len_range:?} lr={lr} lam={lambda} drop={dropout}: {:.1}s ({:.3}s/step) -> 2000 ~ {:.1} min | mlm tail {:.3} (target 3.71) | auc {:.3}",
        elapsed,
        elapsed / steps as f64,
        elapsed / steps as f64 * 2000.0 / 60.0,
        tail_mlm,
        out.final_disc_auc
    );
    let aucs: Vec<f64> = out.trace.iter().filter_map(|r| r.disc_auc).collect();
    println!("    auc trajectory: {:?}", aucs.iter().map(|a| (a * 100.0).round() / 100.0).collect::<Vec<_>>());
}

fn probe_trace_ratio(steps: usize, lr: f64, lambda: f64, ratio: (u32, u32)) {
    let config = PretrainConfig {
        model: ModelConfig {
            layers: 2,
            hidden: 64,
            heads: 4,
            ffn: 256,
            embedding: 64,
            vocab_size: 200,
            max_positions: 64,
            gen_ratio: ratio,
        },
        steps,
        batch_size: 32,
        schedule: LrSchedule::new(lr, 100, steps.max(2000)).unwrap(),
        lambda,
        mask_fraction: 0.15,
        temperature: 1.0,
        dropout: 0.0,
        weight_decay: 0.01,
        seed: 7,
        checkpoint_interval: 100_000,
        eval_interval: 100,
    };
    let corpus = zipfian_grammar_corpus(200, 2000, (20, 48), 7);
    let out = pretrain::<f32>(&config, &PretrainData::Mono(corpus), None).unwrap();
    for chunk in out.trace.chunks(100) {
        let mlm: f64 = chunk.iter().map(|r| r.mlm_loss).sum::<f64>() / chunk.len() as f64;
        let disc: f64 = chunk.iter().map(|r| r.disc_loss).sum::<f64>() / chunk.len() as f64;
        let auc = chunk.iter().rev().find_map(|r| r.disc_auc);
        println!(
            "   step {:4}: mlm {:.3} disc {:.4} auc {:?}",
            chunk.last().unwrap().step,
            mlm,
            disc,
            auc.map(|a| (a * 1000.0).round() / 1000.0)
        );
    }
    println!("=== lr={lr} lambda={lambda}: final auc {:.3}", out.final_disc_auc);
}

#[test]
#[ignore]
fn probe_full_lam5() {
    probe_trace_ratio(2000, 1e-3, 50.0, (1, 2));
}

#[test]
#[ignore]
fn probe_full_lam50() {
    probe_trace_ratio(2000, 1e-3, 50.0, (1, 2));
}

/// Pure attention diagnostic: docs are fixed (a, b) pairs with b = f(a).
/// Predicting a masked token requires copying class information from the
/// visible neighbor; unigram knowledge is useless (uniform marginals).
fn pair_probe(lr: f64, steps: usize, layers: usize) {
    use lrlm_core::tokenizer::PackedExample;
    let vocab = 101usize; // 5 specials + 96 content
    let content = 96u32;
    let corpus: Vec<PackedExample> = (0..content)
        .map(|a| {
            let b = 5 + ((a * 37 + 11) % content);
            PackedExample {
                doc_id: format!("p{a}"),
                token_ids: vec![5 + a, b, 5 + a, b, 5 + a, b, 5 + a, b],
            }
        })
        .collect();
    let config = PretrainConfig {
        model: ModelConfig {
            layers,
            hidden: 64,
            heads: 4,
            ffn: 256,
            embedding: 64,
            vocab_size: vocab,
            max_positions: 16,
            gen_ratio: (1, 2),
        },
        steps,
        batch_size: 32,
        schedule: LrSchedule::new(lr, 50, steps.max(2000)).unwrap(),
        lambda: 0.0,
        mask_fraction: 0.15,
        temperature: 1.0,
        dropout: 0.0,
        weight_decay: 0.0,
        seed: 7,
        checkpoint_interval: 100_000,
        eval_interval: 200,
    };
    let out = pretrain::<f32>(&config, &PretrainData::Mono(corpus), None).unwrap();
    for chunk in out.trace.chunks(100) {
        let mlm: f64 = chunk.iter().map(|r| r.mlm_loss).sum::<f64>() / chunk.len() as f64;
        println!("   [pair lr={lr} L={layers}] step {:4}: mlm {:.3}", chunk.last().unwrap().step, mlm);
    }
}

#[test]
#[ignore]
fn probe_pair_copy_1e3() {
    pair_probe(1e-3, 500, 2);
}

#[test]
#[ignore]
fn probe_pair_copy_3e4() {
    pair_probe(3e-4, 500, 2);
}
