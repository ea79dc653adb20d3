use std::fs;
use std::path::PathBuf;

use clap::Args;

use lrlm_core::benchmark::{sample_efficiency, write_curve_csv};
use lrlm_core::finetune::{
    evaluate_model, finetune, prepare_pair_cls, prepare_qa, prepare_single_cls, prepare_tagged,
    read_cls_jsonl, read_conll, read_pair_jsonl, read_squad, read_squad_golds, FinetuneConfig,
    TaskData, TaskKind, TaskSpec,
};
use lrlm_core::model::{checkpoint, ModelConfig, ParamStore};
use lrlm_core::pretrain::{pretrain, write_trace_csv, PretrainData, PretrainOutcome};
use lrlm_core::tokenizer::{read_packed, Vocab};

use crate::config::{
    load_config, FinetuneStage, Precision, PretrainStage, SampleEfficiencyStage, TaskStage,
};
use crate::CliError;

#[derive(Args)]
pub struct PretrainArgs {
    /// Stage config (JSON). See README for the schema.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's step count.
    #[arg(long)]
    steps: Option<usize>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the checkpoint directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn run_pretrain(args: PretrainArgs) -> Result<(), CliError> {
    let mut stage: PretrainStage = load_config(&args.config)?;
    if let Some(steps) = args.steps {
        stage.core.steps = steps;
        if stage.core.schedule.total_steps < steps {
            stage.core.schedule.total_steps = steps;
        }
    }
    if let Some(seed) = args.seed {
        stage.core.seed = seed;
    }
    if let Some(output) = args.output {
        stage.checkpoint_dir = output;
    }
    let violations = stage.validate();
    if !violations.is_empty() {
        return Err(CliError::violations(violations));
    }

    let corpus = read_packed(&stage.data)?;
    let data = match &stage.data_b {
        Some(path) => PretrainData::Bilingual {
            corpus_a: corpus,
            corpus_b: read_packed(path)?,
            weights: stage.corpus_weights,
        },
        None => PretrainData::Mono(corpus),
    };

    fs::create_dir_all(&stage.checkpoint_dir)
        .map_err(|e| CliError::runtime(format!("create {}: {e}", stage.checkpoint_dir.display())))?;

    let (trace, final_auc) = match stage.precision {
        Precision::F32 => {
            let out: PretrainOutcome<f32> =
                pretrain(&stage.core, &data, Some(&stage.checkpoint_dir))?;
            (out.trace, out.final_disc_auc)
        }
        Precision::F64 => {
            let out: PretrainOutcome<f64> =
                pretrain(&stage.core, &data, Some(&stage.checkpoint_dir))?;
            (out.trace, out.final_disc_auc)
        }
    };

    if let Some(path) = &stage.trace_csv {
        write_trace_csv(path, &trace)?;
    }
    let last = trace.last();
    println!(
        "{}",
        serde_json::json!({
            "steps": trace.len(),
            "final_mlm_loss": last.map(|r| r.mlm_loss),
            "final_disc_loss": last.map(|r| r.disc_loss),
            "final_disc_auc": final_auc,
            "checkpoint": stage.checkpoint_dir,
        })
    );
    Ok(())
}

pub fn load_task_data(
    task: &TaskSpec,
    vocab: &Vocab,
    max_len: usize,
    path: &PathBuf,
) -> Result<TaskData, CliError> {
    let data = match task.kind {
        TaskKind::SingleSeqCls => prepare_single_cls(&read_cls_jsonl(path)?, task, vocab, max_len)?,
        TaskKind::PairCls => prepare_pair_cls(&read_pair_jsonl(path)?, task, vocab, max_len)?,
        TaskKind::SeqLabel => prepare_tagged(&read_conll(path)?, task, vocab, max_len)?,
        TaskKind::SpanQa => {
            let examples = read_squad(path)?;
            let golds = read_squad_golds(path)?
                .into_iter()
                .map(|(_, answers, answerable)| lrlm_core::benchmark::QaGold {
                    answers,
                    is_answerable: answerable,
                })
                .collect();
            prepare_qa(&examples, Some(golds), vocab, max_len)?
        }
    };
    Ok(data)
}

#[derive(Args)]
pub struct FinetuneArgs {
    /// Stage config (JSON). See README for the schema.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Override the learning-rate grid.
    #[arg(long, value_delimiter = ',')]
    lr_grid: Option<Vec<f64>>,
    /// Override the epoch count.
    #[arg(long)]
    epochs: Option<usize>,
}

pub fn run_finetune(args: FinetuneArgs) -> Result<(), CliError> {
    let mut stage: FinetuneStage = load_config(&args.config)?;
    if let Some(seeds) = args.seeds {
        stage.core.seeds = seeds;
    }
    if let Some(grid) = args.lr_grid {
        stage.core.lr_grid = grid;
    }
    if let Some(epochs) = args.epochs {
        stage.core.epochs = epochs;
    }
    let violations = stage.validate();
    if !violations.is_empty() {
        return Err(CliError::violations(violations));
    }

    let vocab = Vocab::read(&stage.vocab)?;
    let (model_config, store): (ModelConfig, ParamStore<f32>) = checkpoint::load(&stage.checkpoint)?;
    checkpoint::check_vocab(&model_config, vocab.size())?;
    let task = stage.task.to_spec();
    let train = load_task_data(&task, &vocab, stage.core.max_len, &stage.train)?;
    let dev = load_task_data(&task, &vocab, stage.core.max_len, &stage.dev)?;

    let outcome = finetune(&model_config, &store, &task, &stage.core, &train, &dev)?;

    fs::create_dir_all(&stage.output_dir)
        .map_err(|e| CliError::runtime(format!("create {}: {e}", stage.output_dir.display())))?;
    let mut per_seed = Vec::new();
    for run in &outcome.runs {
        let dir = stage.output_dir.join(format!("seed-{}", run.seed));
        checkpoint::save(&dir, &model_config, &run.store)?;
        per_seed.push(serde_json::json!({
            "seed": run.seed,
            "dev_score": run.dev_score,
            "best_epoch": run.best_epoch,
            "tau": run.tau,
            "checkpoint": dir,
        }));
    }
    let summary = serde_json::json!({
        "best_lr": outcome.best_lr,
        "mean_dev_score": outcome.mean_dev_score,
        "seeds": per_seed,
        "failed": outcome.failed,
        "grid": outcome.grid_results.iter().map(|(lr, seed, score)| {
            serde_json::json!({"lr": lr, "seed": seed, "dev_score": score})
        }).collect::<Vec<_>>(),
    });
    let summary_path = stage.output_dir.join("finetune.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary).map_err(|e| CliError::runtime(e.to_string()))?)
        .map_err(|e| CliError::runtime(format!("write {}: {e}", summary_path.display())))?;
    println!("{summary}");
    Ok(())
}

#[derive(Args)]
pub struct SampleEfficiencyArgs {
    /// Stage config (JSON). See README for the schema.
    #[arg(long)]
    config: PathBuf,
}

pub fn run_sample_efficiency(args: SampleEfficiencyArgs) -> Result<(), CliError> {
    let stage: SampleEfficiencyStage = load_config(&args.config)?;
    let violations = stage.validate();
    if !violations.is_empty() {
        return Err(CliError::violations(violations));
    }
    let vocab = Vocab::read(&stage.vocab)?;
    let (model_config, store): (ModelConfig, ParamStore<f32>) = checkpoint::load(&stage.checkpoint)?;
    checkpoint::check_vocab(&model_config, vocab.size())?;
    let task = stage.task.to_spec();
    let train = load_task_data(&task, &vocab, stage.core.max_len, &stage.train)?;
    let dev = load_task_data(&task, &vocab, stage.core.max_len, &stage.dev)?;
    let test = load_task_data(&task, &vocab, stage.core.max_len, &stage.test)?;

    let curve = sample_efficiency(
        &model_config,
        &store,
        &task,
        &stage.core,
        &train,
        &dev,
        &test,
        &stage.sizes,
        &stage.core.seeds.clone(),
    )?;
    write_curve_csv(&stage.output_csv, &curve)?;
    let means: Vec<serde_json::Value> = stage
        .sizes
        .iter()
        .map(|&s| serde_json::json!({"size": s, "mean_score": curve.mean_at(s)}))
        .collect();
    println!("{}", serde_json::json!({"curve_csv": stage.output_csv, "means": means}));
    Ok(())
}

/// Shared by `evaluate`: re-evaluate a stored finetuned model.
pub fn evaluate_stored(
    checkpoint_dir: &PathBuf,
    vocab_path: &PathBuf,
    task_stage: &TaskStage,
    data_path: &PathBuf,
    max_len: usize,
    batch_size: usize,
    tau: Option<f64>,
) -> Result<(TaskSpec, lrlm_core::finetune::EvalOutcome, TaskData), CliError> {
    let vocab = Vocab::read(vocab_path)?;
    let (model_config, store): (ModelConfig, ParamStore<f32>) = checkpoint::load(checkpoint_dir)?;
    checkpoint::check_vocab(&model_config, vocab.size())?;
    let task = task_stage.to_spec();
    let data = load_task_data(&task, &vocab, max_len, data_path)?;
    let config = FinetuneConfig {
        epochs: 3,
        batch_size,
        lr_grid: vec![1e-5],
        seeds: vec![1],
        max_len,
        dropout: 0.0,
        weight_decay: 0.0,
        max_answer_tokens: lrlm_core::finetune::DEFAULT_MAX_ANSWER_TOKENS,
    };
    let outcome = evaluate_model(&model_config, &store, &task, &config, &data, tau)?;
    Ok((task, outcome, data))
}
