use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use lrlm_core::benchmark::{
    accuracy, blub_report, entity_micro_f1, macro_f1, paired_bootstrap, squad_em_f1, QaGold,
};
use lrlm_core::finetune::{read_cls_jsonl, read_conll, read_squad_golds, Predictions, TaskKind};

use crate::config::{load_config, TaskStage};
use crate::report::{format_score_table, ScoreRow};
use crate::CliError;

#[derive(Args)]
pub struct EvaluateArgs {
    /// Fine-tuned checkpoint directory (one seed).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Task kind: single_seq_cls | pair_cls | seq_label | span_qa.
    #[arg(long)]
    task: String,
    /// Label inventory (comma separated) for classification/labeling tasks.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
    /// Evaluation data (task-specific format).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 128)]
    max_len: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Null threshold for QA (from the finetune summary); tuned here if absent.
    #[arg(long)]
    tau: Option<f64>,
    /// Predictions output (line-oriented JSON {"id", "prediction"}).
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Metric report output (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_task_kind(s: &str) -> Result<TaskKind, CliError> {
    match s {
        "single_seq_cls" | "sc" => Ok(TaskKind::SingleSeqCls),
        "pair_cls" | "nli" => Ok(TaskKind::PairCls),
        "seq_label" | "ner" => Ok(TaskKind::SeqLabel),
        "span_qa" | "qa" => Ok(TaskKind::SpanQa),
        other => Err(CliError::usage(format!("unknown task kind {other}"))),
    }
}

pub fn run_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let kind = parse_task_kind(&args.task)?;
    let task_stage = TaskStage {
        kind,
        labels: args.labels.clone(),
    };
    let (_, outcome, _) = crate::commands::train::evaluate_stored(
        &args.checkpoint,
        &args.vocab,
        &task_stage,
        &args.data,
        args.max_len,
        args.batch_size,
        args.tau,
    )?;

    if let Some(path) = &args.predictions {
        let ids = prediction_ids(kind, &args.data)?;
        let mut text = String::new();
        let rows: Vec<serde_json::Value> = match &outcome.predictions {
            Predictions::Labels(labels) => labels
                .iter()
                .zip(&ids)
                .map(|(p, id)| serde_json::json!({"id": id, "prediction": p}))
                .collect(),
            Predictions::Tags(tags) => tags
                .iter()
                .zip(&ids)
                .map(|(p, id)| serde_json::json!({"id": id, "prediction": p}))
                .collect(),
            Predictions::Answers(answers) => answers
                .iter()
                .zip(&ids)
                .map(|(p, id)| serde_json::json!({"id": id, "prediction": p}))
                .collect(),
        };
        for row in rows {
            text.push_str(&row.to_string());
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| CliError::runtime(format!("write {}: {e}", path.display())))?;
    }

    let report = serde_json::json!({
        "report": outcome.report,
        "scalar": outcome.scalar,
        "tau": outcome.tuned_tau,
    });
    if let Some(path) = &args.report {
        fs::write(path, serde_json::to_string_pretty(&report).map_err(|e| CliError::runtime(e.to_string()))?)
            .map_err(|e| CliError::runtime(format!("write {}: {e}", path.display())))?;
    }
    println!("{report}");
    Ok(())
}

/// Example ids in data order, for prediction files.
fn prediction_ids(kind: TaskKind, data: &PathBuf) -> Result<Vec<String>, CliError> {
    Ok(match kind {
        TaskKind::SingleSeqCls => read_cls_jsonl(data)?
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.id.unwrap_or_else(|| i.to_string()))
            .collect(),
        TaskKind::PairCls => lrlm_core::finetune::read_pair_jsonl(data)?
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.id.unwrap_or_else(|| i.to_string()))
            .collect(),
        TaskKind::SeqLabel => (0..read_conll(data)?.len()).map(|i| i.to_string()).collect(),
        TaskKind::SpanQa => read_squad_golds(data)?.into_iter().map(|(id, _, _)| id).collect(),
    })
}

#[derive(Args)]
pub struct BlubArgs {
    #[arg(long)]
    sc: Option<f64>,
    #[arg(long)]
    nli: Option<f64>,
    #[arg(long)]
    ner: Option<f64>,
    #[arg(long)]
    qa_em: Option<f64>,
    #[arg(long)]
    qa_f1: Option<f64>,
    /// Score-aggregation mode: JSON array of per-model score rows
    /// [{"model", "params"?, "sc", "nli", "ner", "qa_em", "qa_f1", "significant"?}].
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Report output (JSON).
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn run_blub(args: BlubArgs) -> Result<(), CliError> {
    if let Some(path) = &args.scores {
        let rows: Vec<ScoreRow> = load_config(path)?;
        let mut reports = Vec::new();
        for row in &rows {
            let report = blub_report(row.sc, row.nli, row.ner, row.qa_em, row.qa_f1)?;
            reports.push(report);
        }
        let table = format_score_table(&rows, &reports);
        print!("{table}");
        if let Some(out) = &args.output {
            let payload: Vec<serde_json::Value> = rows
                .iter()
                .zip(&reports)
                .map(|(row, rep)| serde_json::json!({"model": row.model, "report": rep}))
                .collect();
            fs::write(out, serde_json::to_string_pretty(&payload).map_err(|e| CliError::runtime(e.to_string()))?)
                .map_err(|e| CliError::runtime(format!("write {}: {e}", out.display())))?;
        }
        return Ok(());
    }

    let (Some(sc), Some(nli), Some(ner), Some(qa_em), Some(qa_f1)) =
        (args.sc, args.nli, args.ner, args.qa_em, args.qa_f1)
    else {
        return Err(CliError::usage(
            "blub needs either --scores FILE or all of --sc --nli --ner --qa-em --qa-f1",
        ));
    };
    let report = blub_report(sc, nli, ner, qa_em, qa_f1)?;
    println!("{:.2}", report.blub);
    if let Some(out) = &args.output {
        fs::write(out, serde_json::to_string_pretty(&report).map_err(|e| CliError::runtime(e.to_string()))?)
            .map_err(|e| CliError::runtime(format!("write {}: {e}", out.display())))?;
    }
    Ok(())
}

#[derive(Args)]
pub struct SignificanceArgs {
    /// Gold data (task-specific format; same file the systems were scored on).
    #[arg(long)]
    gold: PathBuf,
    /// Metric: accuracy | macro_f1 | micro_f1 | em | f1.
    #[arg(long)]
    metric: String,
    /// Predictions of system A ({"id", "prediction"} per line).
    #[arg(long)]
    pred_a: PathBuf,
    /// Predictions of system B ({"id", "prediction"} per line).
    #[arg(long)]
    pred_b: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    resamples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Deserialize, Serialize)]
struct LabelPrediction {
    id: String,
    prediction: serde_json::Value,
}

fn read_predictions(path: &PathBuf) -> Result<HashMap<String, serde_json::Value>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: LabelPrediction = serde_json::from_str(line)
            .map_err(|e| CliError::usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.insert(row.id, row.prediction);
    }
    Ok(out)
}

fn string_pred(v: &serde_json::Value) -> String {
    v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string())
}

pub fn run_significance(args: SignificanceArgs) -> Result<(), CliError> {
    let preds_a = read_predictions(&args.pred_a)?;
    let preds_b = read_predictions(&args.pred_b)?;

    let align = |ids: &[String], preds: &HashMap<String, serde_json::Value>| -> Result<Vec<serde_json::Value>, CliError> {
        ids.iter()
            .map(|id| {
                preds
                    .get(id)
                    .cloned()
                    .ok_or_else(|| CliError::usage(format!("missing prediction for id {id}")))
            })
            .collect()
    };

    let result = match args.metric.as_str() {
        "accuracy" | "macro_f1" => {
            let records = read_cls_jsonl(&args.gold)?;
            let ids: Vec<String> = records
                .iter()
                .enumerate()
                .map(|(i, r)| r.id.clone().unwrap_or_else(|| i.to_string()))
                .collect();
            let gold: Vec<String> = records.iter().map(|r| r.label.clone()).collect();
            let a: Vec<String> = align(&ids, &preds_a)?.iter().map(string_pred).collect();
            let b: Vec<String> = align(&ids, &preds_b)?.iter().map(string_pred).collect();
            let macro_mode = args.metric == "macro_f1";
            let score = move |gold: &[String], pred: &[String], idx: &[usize]| -> f64 {
                let g: Vec<String> = idx.iter().map(|&i| gold[i].clone()).collect();
                let p: Vec<String> = idx.iter().map(|&i| pred[i].clone()).collect();
                if macro_mode {
                    macro_f1(&g, &p).unwrap_or(0.0)
                } else {
                    accuracy(&g, &p).unwrap_or(0.0)
                }
            };
            paired_bootstrap(
                gold.len(),
                |idx| score(&gold, &a, idx),
                |idx| score(&gold, &b, idx),
                args.resamples,
                args.seed,
            )?
        }
        "micro_f1" => {
            let sentences = read_conll(&args.gold)?;
            let ids: Vec<String> = (0..sentences.len()).map(|i| i.to_string()).collect();
            let gold: Vec<Vec<String>> = sentences.iter().map(|s| s.tags.clone()).collect();
            let to_tags = |v: &serde_json::Value| -> Vec<String> {
                v.as_array()
                    .map(|a| a.iter().map(string_pred).collect())
                    .unwrap_or_default()
            };
            let a: Vec<Vec<String>> = align(&ids, &preds_a)?.iter().map(to_tags).collect();
            let b: Vec<Vec<String>> = align(&ids, &preds_b)?.iter().map(to_tags).collect();
            let score = move |gold: &[Vec<String>], pred: &[Vec<String>], idx: &[usize]| -> f64 {
                let g: Vec<Vec<String>> = idx.iter().map(|&i| gold[i].clone()).collect();
                let p: Vec<Vec<String>> = idx.iter().map(|&i| pred[i].clone()).collect();
                entity_micro_f1(&g, &p).unwrap_or(0.0)
            };
            paired_bootstrap(
                gold.len(),
                |idx| score(&gold, &a, idx),
                |idx| score(&gold, &b, idx),
                args.resamples,
                args.seed,
            )?
        }
        "em" | "f1" => {
            let golds_raw = read_squad_golds(&args.gold)?;
            let ids: Vec<String> = golds_raw.iter().map(|(id, _, _)| id.clone()).collect();
            let gold: Vec<QaGold> = golds_raw
                .into_iter()
                .map(|(_, answers, answerable)| QaGold {
                    answers,
                    is_answerable: answerable,
                })
                .collect();
            let a: Vec<String> = align(&ids, &preds_a)?.iter().map(string_pred).collect();
            let b: Vec<String> = align(&ids, &preds_b)?.iter().map(string_pred).collect();
            let use_em = args.metric == "em";
            let score = move |gold: &[QaGold], pred: &[String], idx: &[usize]| -> f64 {
                let g: Vec<QaGold> = idx.iter().map(|&i| gold[i].clone()).collect();
                let p: Vec<String> = idx.iter().map(|&i| pred[i].clone()).collect();
                match squad_em_f1(&g, &p) {
                    Ok((em, f1)) => {
                        if use_em {
                            em
                        } else {
                            f1
                        }
                    }
                    Err(_) => 0.0,
                }
            };
            paired_bootstrap(
                gold.len(),
                |idx| score(&gold, &a, idx),
                |idx| score(&gold, &b, idx),
                args.resamples,
                args.seed,
            )?
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown metric {other} (expected accuracy, macro_f1, micro_f1, em, f1)"
            )));
        }
    };

    let text = serde_json::to_string_pretty(&result).map_err(|e| CliError::runtime(e.to_string()))?;
    if let Some(path) = &args.output {
        fs::write(path, &text).map_err(|e| CliError::runtime(format!("write {}: {e}", path.display())))?;
    }
    println!("{text}");
    Ok(())
}
