use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::benchmark::{accuracy, entity_micro_f1, macro_f1, squad_em_f1, MetricReport, MetricValue, QaGold};
use crate::error::{Error, Result};
use crate::model::{
    bind, cls_logits, collect_grads, forward_encoder, qa_logits, token_logits, EncoderInput,
    ModelConfig, ParamStore,
};
use crate::pretrain::{adam_step, AdamState};
use crate::rng;
use crate::tokenizer::{Vocab, PAD_ID};

use super::data::{ClsRecord, PairRecord, TaggedSentence};
use super::inputs::{encode_pair, encode_single, EncodedInput};
use super::labels::{align_labels_to_subwords, recover_word_predictions};
use super::qa::{
    char_span_to_token_span, encode_qa, predict_span, span_text, QaEncoding, QaExample,
    SpanPrediction, DEFAULT_MAX_ANSWER_TOKENS,
};

/// The four task shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SingleSeqCls,
    PairCls,
    SeqLabel,
    SpanQa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    MacroF1,
    Accuracy,
    EntityMicroF1,
    EmF1,
}

/// Task description: shape, label inventory, metric. The metric must match
/// the shape (single-sequence classification scores macro-F1, pair
/// classification accuracy, sequence labeling entity micro-F1, span QA
/// EM/F1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub labels: Vec<String>,
    pub metric: MetricKind,
}

impl TaskSpec {
    pub fn single_cls(labels: Vec<String>) -> Self {
        TaskSpec {
            kind: TaskKind::SingleSeqCls,
            labels,
            metric: MetricKind::MacroF1,
        }
    }

    pub fn nli() -> Self {
        TaskSpec {
            kind: TaskKind::PairCls,
            labels: vec![
                "entailment".to_string(),
                "contradiction".to_string(),
                "neutral".to_string(),
            ],
            metric: MetricKind::Accuracy,
        }
    }

    pub fn pair_cls(labels: Vec<String>) -> Self {
        TaskSpec {
            kind: TaskKind::PairCls,
            labels,
            metric: MetricKind::Accuracy,
        }
    }

    pub fn seq_label(tags: Vec<String>) -> Self {
        TaskSpec {
            kind: TaskKind::SeqLabel,
            labels: tags,
            metric: MetricKind::EntityMicroF1,
        }
    }

    pub fn span_qa() -> Self {
        TaskSpec {
            kind: TaskKind::SpanQa,
            labels: Vec::new(),
            metric: MetricKind::EmF1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = matches!(
            (self.kind, self.metric),
            (TaskKind::SingleSeqCls, MetricKind::MacroF1)
                | (TaskKind::PairCls, MetricKind::Accuracy)
                | (TaskKind::SeqLabel, MetricKind::EntityMicroF1)
                | (TaskKind::SpanQa, MetricKind::EmF1)
        );
        if !ok {
            return Err(Error::Finetune(format!(
                "metric {:?} does not match task kind {:?}",
                self.metric, self.kind
            )));
        }
        if matches!(self.kind, TaskKind::SingleSeqCls | TaskKind::PairCls | TaskKind::SeqLabel)
            && self.labels.is_empty()
        {
            return Err(Error::Finetune("classification task without labels".into()));
        }
        Ok(())
    }

    fn label_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Finetune(format!("label {label} not in task inventory {:?}", self.labels)))
    }

    fn head_outputs(&self) -> usize {
        match self.kind {
            TaskKind::SingleSeqCls | TaskKind::PairCls | TaskKind::SeqLabel => self.labels.len(),
            TaskKind::SpanQa => 2,
        }
    }
}

pub const DEFAULT_LR_GRID: [f64; 4] = [2e-5, 3e-5, 4e-5, 5e-5];
pub const DEFAULT_FINETUNE_BATCH: usize = 32;

/// Fine-tuning protocol parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_grid")]
    pub lr_grid: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub max_len: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_max_answer")]
    pub max_answer_tokens: usize,
}

fn default_batch() -> usize {
    DEFAULT_FINETUNE_BATCH
}
fn default_grid() -> Vec<f64> {
    DEFAULT_LR_GRID.to_vec()
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}
fn default_dropout() -> f64 {
    0.1
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_max_answer() -> usize {
    DEFAULT_MAX_ANSWER_TOKENS
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(3..=20).contains(&self.epochs) {
            return Err(Error::Finetune(format!(
                "epochs {} outside the protocol range 3-20",
                self.epochs
            )));
        }
        if self.lr_grid.is_empty() {
            return Err(Error::Finetune("empty learning-rate grid".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Finetune("need at least one seed".into()));
        }
        Ok(())
    }
}

/// Pre-encoded task data ready for batching.
pub enum TaskData {
    Cls(Vec<ClsExample>),
    Tagged(Vec<TaggedExample>),
    Qa {
        examples: Vec<QaTrainExample>,
        golds: Vec<QaGold>,
        /// Answerable training examples whose span fell outside the encoded
        /// context (truncated away) and were excluded from loss terms.
        dropped_answers: usize,
    },
}

pub struct ClsExample {
    pub input: EncodedInput,
    pub label: usize,
    pub gold_label: String,
}

pub struct TaggedExample {
    /// `[CLS] tokens [SEP]` ids.
    pub ids: Vec<u32>,
    /// Per-position label; `None` on specials and continuations.
    pub labels: Vec<Option<usize>>,
    pub tokens_per_word: Vec<usize>,
    pub gold_tags: Vec<String>,
}

pub struct QaTrainExample {
    pub example: QaExample,
    pub encoding: QaEncoding,
    /// Target span (inclusive); `None` for unanswerable (target is CLS) or
    /// truncated-away answers (excluded from training).
    pub span: Option<(usize, usize)>,
}

impl TaskData {
    pub fn len(&self) -> usize {
        match self {
            TaskData::Cls(v) => v.len(),
            TaskData::Tagged(v) => v.len(),
            TaskData::Qa { examples, .. } => examples.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stratification key per example (label, or answerability for QA).
    pub fn strata(&self) -> Vec<usize> {
        match self {
            TaskData::Cls(v) => v.iter().map(|e| e.label).collect(),
            TaskData::Tagged(v) => v
                .iter()
                .map(|e| usize::from(e.gold_tags.iter().any(|t| t != "O")))
                .collect(),
            TaskData::Qa { examples, .. } => examples
                .iter()
                .map(|e| usize::from(e.example.is_answerable))
                .collect(),
        }
    }

    /// Subset by index (used by the sample-efficiency harness).
    pub fn subset(&self, indices: &[usize]) -> TaskData {
        match self {
            TaskData::Cls(v) => TaskData::Cls(
                indices
                    .iter()
                    .map(|&i| ClsExample {
                        input: v[i].input.clone(),
                        label: v[i].label,
                        gold_label: v[i].gold_label.clone(),
                    })
                    .collect(),
            ),
            TaskData::Tagged(v) => TaskData::Tagged(
                indices
                    .iter()
                    .map(|&i| TaggedExample {
                        ids: v[i].ids.clone(),
                        labels: v[i].labels.clone(),
                        tokens_per_word: v[i].tokens_per_word.clone(),
                        gold_tags: v[i].gold_tags.clone(),
                    })
                    .collect(),
            ),
            TaskData::Qa {
                examples, golds, ..
            } => {
                let mut dropped = 0usize;
                let subset: Vec<QaTrainExample> = indices
                    .iter()
                    .map(|&i| {
                        let e = &examples[i];
                        if e.example.is_answerable && e.span.is_none() {
                            dropped += 1;
                        }
                        QaTrainExample {
                            example: e.example.clone(),
                            encoding: e.encoding.clone(),
                            span: e.span,
                        }
                    })
                    .collect();
                TaskData::Qa {
                    examples: subset,
                    golds: indices.iter().map(|&i| golds[i].clone()).collect(),
                    dropped_answers: dropped,
                }
            }
        }
    }
}

pub fn prepare_single_cls(
    records: &[ClsRecord],
    task: &TaskSpec,
    vocab: &Vocab,
    max_len: usize,
) -> Result<TaskData> {
    let examples = records
        .iter()
        .map(|r| {
            Ok(ClsExample {
                input: encode_single(&r.text, vocab, max_len),
                label: task.label_index(&r.label)?,
                gold_label: r.label.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskData::Cls(examples))
}

pub fn prepare_pair_cls(
    records: &[PairRecord],
    task: &TaskSpec,
    vocab: &Vocab,
    max_len: usize,
) -> Result<TaskData> {
    let examples = records
        .iter()
        .map(|r| {
            Ok(ClsExample {
                input: encode_pair(&r.premise, &r.hypothesis, vocab, max_len),
                label: task.label_index(&r.label)?,
                gold_label: r.label.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskData::Cls(examples))
}

pub fn prepare_tagged(
    sentences: &[TaggedSentence],
    task: &TaskSpec,
    vocab: &Vocab,
    max_len: usize,
) -> Result<TaskData> {
    let examples = sentences
        .iter()
        .map(|s| {
            let label_ids = s
                .tags
                .iter()
                .map(|t| task.label_index(t))
                .collect::<Result<Vec<_>>>()?;
            let aligned = align_labels_to_subwords(&s.tokens, &label_ids, vocab)?;
            // wrap with CLS/SEP, truncating whole words from the tail when over budget
            let mut ids = vec![crate::tokenizer::CLS_ID];
            let mut labels: Vec<Option<usize>> = vec![None];
            let mut tokens_per_word = Vec::new();
            let mut used = 0usize;
            let budget = max_len - 2;
            for (w, &n) in aligned.tokens_per_word.iter().enumerate() {
                if used + n > budget {
                    break;
                }
                let start: usize = aligned.tokens_per_word[..w].iter().sum();
                for k in 0..n {
                    ids.push(aligned.token_ids[start + k]);
                    labels.push(aligned.labels[start + k]);
                }
                tokens_per_word.push(n);
                used += n;
            }
            ids.push(crate::tokenizer::SEP_ID);
            labels.push(None);
            Ok(TaggedExample {
                ids,
                labels,
                tokens_per_word,
                gold_tags: s.tags.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskData::Tagged(examples))
}

pub fn prepare_qa(
    examples: &[QaExample],
    golds: Option<Vec<QaGold>>,
    vocab: &Vocab,
    max_len: usize,
) -> Result<TaskData> {
    let mut dropped = 0usize;
    let prepared: Vec<QaTrainExample> = examples
        .iter()
        .map(|e| {
            let encoding = encode_qa(e, vocab, max_len);
            let span = char_span_to_token_span(e, &encoding);
            if e.is_answerable && span.is_none() {
                dropped += 1;
            }
            QaTrainExample {
                example: e.clone(),
                encoding,
                span,
            }
        })
        .collect();
    let golds = golds.unwrap_or_else(|| {
        examples
            .iter()
            .map(|e| QaGold {
                answers: e.answer_text.iter().cloned().collect(),
                is_answerable: e.is_answerable,
            })
            .collect()
    });
    if golds.len() != examples.len() {
        return Err(Error::Finetune(format!(
            "{} golds for {} examples",
            golds.len(),
            examples.len()
        )));
    }
    Ok(TaskData::Qa {
        examples: prepared,
        golds,
        dropped_answers: dropped,
    })
}

/// Add the task head parameters for `task` to a copy of the encoder store.
pub fn add_task_head(store: &mut ParamStore<f32>, hidden: usize, task: &TaskSpec, seed: u64) {
    let mut head_rng = rng::derive(seed, 0x4ead);
    let init = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<f32> {
        (0..n)
            .map(|_| {
                // Box-Muller, truncated at 2 sigma, std 0.02
                loop {
                    let u1 = rng::uniform(rng).max(1e-12);
                    let u2 = rng::uniform(rng);
                    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                    if z.abs() <= 2.0 {
                        return (z * 0.02) as f32;
                    }
                }
            })
            .collect()
    };
    match task.kind {
        TaskKind::SingleSeqCls | TaskKind::PairCls => {
            let n = task.head_outputs();
            store.insert("task.cls.w", vec![hidden, n], init(&mut head_rng, hidden * n), true);
            store.insert("task.cls.b", vec![n], vec![0.0; n], false);
        }
        TaskKind::SeqLabel => {
            let n = task.head_outputs();
            store.insert("task.tok.w", vec![hidden, n], init(&mut head_rng, hidden * n), true);
            store.insert("task.tok.b", vec![n], vec![0.0; n], false);
        }
        TaskKind::SpanQa => {
            store.insert("task.qa.start.w", vec![hidden, 1], init(&mut head_rng, hidden), true);
            store.insert("task.qa.start.b", vec![1], vec![0.0], false);
            store.insert("task.qa.end.w", vec![hidden, 1], init(&mut head_rng, hidden), true);
            store.insert("task.qa.end.b", vec![1], vec![0.0], false);
        }
    }
}

struct PaddedBatch {
    ids: Vec<u32>,
    segment_ids: Vec<u32>,
    attention_mask: Vec<u8>,
    batch: usize,
    len: usize,
}

fn pad_batch(rows: &[(&[u32], Option<&[u32]>)]) -> PaddedBatch {
    let batch = rows.len();
    let len = rows.iter().map(|(ids, _)| ids.len()).max().unwrap_or(0);
    let mut ids = vec![PAD_ID; batch * len];
    let mut segment_ids = vec![0u32; batch * len];
    let mut attention_mask = vec![0u8; batch * len];
    for (b, (row_ids, row_segs)) in rows.iter().enumerate() {
        for (t, &id) in row_ids.iter().enumerate() {
            ids[b * len + t] = id;
            attention_mask[b * len + t] = 1;
            if let Some(segs) = row_segs {
                segment_ids[b * len + t] = segs[t];
            }
        }
    }
    PaddedBatch {
        ids,
        segment_ids,
        attention_mask,
        batch,
        len,
    }
}

/// One seed's selected model.
pub struct SeedRun {
    pub seed: u64,
    pub lr: f64,
    pub best_epoch: usize,
    pub dev_score: f64,
    /// Dev score after each epoch, in epoch order.
    pub epoch_scores: Vec<f64>,
    pub store: ParamStore<f32>,
    /// Dev-tuned null threshold (QA only).
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailedRun {
    pub seed: u64,
    pub lr: f64,
    pub reason: String,
}

pub struct FinetuneOutcome {
    pub best_lr: f64,
    /// Seed runs at the best learning rate.
    pub runs: Vec<SeedRun>,
    pub mean_dev_score: f64,
    pub failed: Vec<FailedRun>,
    /// Every (lr, seed, dev score) tried.
    pub grid_results: Vec<(f64, u64, f64)>,
}

/// Dev-selected fine-tuning: for every grid learning rate and seed, train
/// for the configured epochs keeping the best-dev epoch's parameters, then
/// pick the learning rate with the best mean dev score across seeds.
/// Diverged runs are excluded and reported.
pub fn finetune(
    model_config: &ModelConfig,
    base_store: &ParamStore<f32>,
    task: &TaskSpec,
    config: &FinetuneConfig,
    train: &TaskData,
    dev: &TaskData,
) -> Result<FinetuneOutcome> {
    task.validate()?;
    config.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Finetune("empty train or dev set".into()));
    }

    let mut grid_results = Vec::new();
    let mut failed = Vec::new();
    let mut runs_by_lr: HashMap<u64, Vec<SeedRun>> = HashMap::new();

    for &lr in &config.lr_grid {
        for &seed in &config.seeds {
            match train_single(model_config, base_store, task, config, train, dev, lr, seed) {
                Ok(run) => {
                    grid_results.push((lr, seed, run.dev_score));
                    runs_by_lr.entry(lr.to_bits()).or_default().push(run);
                }
                Err(e) => failed.push(FailedRun {
                    seed,
                    lr,
                    reason: e.to_string(),
                }),
            }
        }
    }

    let mut ranked: Vec<(f64, f64, Vec<SeedRun>)> = runs_by_lr
        .into_values()
        .map(|runs| {
            let lr = runs[0].lr;
            let mean = runs.iter().map(|r| r.dev_score).sum::<f64>() / runs.len() as f64;
            (lr, mean, runs)
        })
        .collect();
    if ranked.is_empty() {
        return Err(Error::Finetune("every (lr, seed) run diverged".into()));
    }
    // best mean dev; exact ties go to the smaller rate
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal))
    });
    let (best_lr, mean_dev_score, runs) = ranked.swap_remove(0);
    Ok(FinetuneOutcome {
        best_lr,
        runs,
        mean_dev_score,
        failed,
        grid_results,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_single(
    model_config: &ModelConfig,
    base_store: &ParamStore<f32>,
    task: &TaskSpec,
    config: &FinetuneConfig,
    train: &TaskData,
    dev: &TaskData,
    lr: f64,
    seed: u64,
) -> Result<SeedRun> {
    let mut store = base_store.clone();
    add_task_head(&mut store, model_config.hidden, task, seed);
    let mut adam: AdamState<f32> = AdamState::new(config.weight_decay);

    let n = train.len();
    let mut best: Option<(usize, f64, ParamStore<f32>, Option<f64>)> = None;
    let mut epoch_scores = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = rng::derive(seed, 0x5481 ^ epoch as u64);
        for i in (1..order.len()).rev() {
            let j = rng::below(&mut shuffle_rng, i + 1);
            order.swap(i, j);
        }
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let dropout_seed = rng::mix(seed ^ ((epoch as u64) << 32) ^ batch_idx as u64);
            let grads = match training_step(
                model_config,
                &store,
                task,
                config,
                train,
                chunk,
                dropout_seed,
            )? {
                Some(g) => g,
                None => continue, // batch had no usable training signal
            };
            adam_step(&mut store, &grads, &mut adam, lr)?;
        }
        let eval = evaluate_model(model_config, &store, task, config, dev, None)?;
        epoch_scores.push(eval.scalar);
        if best.as_ref().map_or(true, |(_, s, _, _)| eval.scalar > *s) {
            best = Some((epoch, eval.scalar, store.clone(), eval.tuned_tau));
        }
    }

    let (best_epoch, dev_score, store, tau) = best.expect("epochs >= 3 guarantees an eval");
    Ok(SeedRun {
        seed,
        lr,
        best_epoch,
        dev_score,
        epoch_scores,
        store,
        tau,
    })
}

/// Forward/backward for one batch; returns parameter gradients, or None if
/// the batch contributes no loss terms.
fn training_step(
    model_config: &ModelConfig,
    store: &ParamStore<f32>,
    task: &TaskSpec,
    config: &FinetuneConfig,
    data: &TaskData,
    chunk: &[usize],
    dropout_seed: u64,
) -> Result<Option<HashMap<String, Vec<f32>>>> {
    let mut tape: Tape<f32> = Tape::with_dropout_seed(dropout_seed);
    // divergence surfaces through Adam's non-finite gradient guard
    tape.set_check_finite(false);
    let bound = bind(store, &mut tape, true);

    let loss = match data {
        TaskData::Cls(examples) => {
            let rows: Vec<(&[u32], Option<&[u32]>)> = chunk
                .iter()
                .map(|&i| {
                    (
                        examples[i].input.ids.as_slice(),
                        Some(examples[i].input.segment_ids.as_slice()),
                    )
                })
                .collect();
            let padded = pad_batch(&rows);
            let hidden = forward_encoder(
                &mut tape,
                &bound,
                model_config,
                "disc",
                &EncoderInput {
                    ids: &padded.ids,
                    batch: padded.batch,
                    len: padded.len,
                    attention_mask: &padded.attention_mask,
                    segment_ids: Some(&padded.segment_ids),
                    dropout: config.dropout,
                },
            )?;
            let logits = cls_logits(&mut tape, &bound, hidden, config.dropout)?;
            let targets: Vec<u32> = chunk.iter().map(|&i| examples[i].label as u32).collect();
            tape.cross_entropy(logits, &targets)?
        }
        TaskData::Tagged(examples) => {
            let rows: Vec<(&[u32], Option<&[u32]>)> = chunk
                .iter()
                .map(|&i| (examples[i].ids.as_slice(), None))
                .collect();
            let padded = pad_batch(&rows);
            let hidden = forward_encoder(
                &mut tape,
                &bound,
                model_config,
                "disc",
                &EncoderInput {
                    ids: &padded.ids,
                    batch: padded.batch,
                    len: padded.len,
                    attention_mask: &padded.attention_mask,
                    segment_ids: None,
                    dropout: config.dropout,
                },
            )?;
            let logits = token_logits(&mut tape, &bound, hidden, config.dropout)?;
            let n_tags = task.labels.len();
            let flat = tape.reshape(logits, &[padded.batch * padded.len, n_tags])?;
            let mut positions = Vec::new();
            let mut targets = Vec::new();
            for (b, &i) in chunk.iter().enumerate() {
                for (t, label) in examples[i].labels.iter().enumerate() {
                    if let Some(l) = label {
                        positions.push(b * padded.len + t);
                        targets.push(*l as u32);
                    }
                }
            }
            if positions.is_empty() {
                return Ok(None);
            }
            let picked = tape.gather_rows(flat, &positions)?;
            tape.cross_entropy(picked, &targets)?
        }
        TaskData::Qa { examples, .. } => {
            let usable: Vec<usize> = chunk
                .iter()
                .copied()
                .filter(|&i| examples[i].span.is_some() || !examples[i].example.is_answerable)
                .collect();
            if usable.is_empty() {
                return Ok(None);
            }
            let rows: Vec<(&[u32], Option<&[u32]>)> = usable
                .iter()
                .map(|&i| {
                    (
                        examples[i].encoding.ids.as_slice(),
                        Some(examples[i].encoding.segment_ids.as_slice()),
                    )
                })
                .collect();
            let padded = pad_batch(&rows);
            let hidden = forward_encoder(
                &mut tape,
                &bound,
                model_config,
                "disc",
                &EncoderInput {
                    ids: &padded.ids,
                    batch: padded.batch,
                    len: padded.len,
                    attention_mask: &padded.attention_mask,
                    segment_ids: Some(&padded.segment_ids),
                    dropout: config.dropout,
                },
            )?;
            let (start_logits, end_logits) = qa_logits(&mut tape, &bound, hidden, config.dropout)?;
            // positions outside CLS + context cannot be targets; suppress them
            let mut suppress = vec![-1e9f32; padded.batch * padded.len];
            for (b, &i) in usable.iter().enumerate() {
                suppress[b * padded.len] = 0.0;
                let (cs, ce) = examples[i].encoding.context_range;
                for t in cs..ce {
                    suppress[b * padded.len + t] = 0.0;
                }
            }
            let mask_tensor = tape.constant(suppress, &[padded.batch, padded.len]);
            let start_masked = tape.add(start_logits, mask_tensor)?;
            let end_masked = tape.add(end_logits, mask_tensor)?;
            let mut start_targets = Vec::with_capacity(usable.len());
            let mut end_targets = Vec::with_capacity(usable.len());
            for &i in &usable {
                match examples[i].span {
                    Some((s, e)) => {
                        start_targets.push(s as u32);
                        end_targets.push(e as u32);
                    }
                    None => {
                        start_targets.push(0);
                        end_targets.push(0);
                    }
                }
            }
            let loss_start = tape.cross_entropy(start_masked, &start_targets)?;
            let loss_end = tape.cross_entropy(end_masked, &end_targets)?;
            let summed = tape.add(loss_start, loss_end)?;
            tape.scale(summed, 0.5)?
        }
    };

    tape.backward(loss)?;
    Ok(Some(collect_grads(store, &bound, &tape)))
}

/// Task predictions in their natural shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Predictions {
    Labels(Vec<String>),
    Tags(Vec<Vec<String>>),
    Answers(Vec<String>),
}

pub struct EvalOutcome {
    /// Selection scalar: the metric itself, or (EM + F1) / 2 for QA.
    pub scalar: f64,
    pub report: MetricReport,
    pub predictions: Predictions,
    /// Dev-tuned threshold (QA with `fixed_tau = None`).
    pub tuned_tau: Option<f64>,
}

/// Evaluate a fine-tuned model (dropout off). For QA, a `fixed_tau` of None
/// tunes the null threshold on this set by best EM; passing a dev-tuned tau
/// freezes it (the test-set convention).
pub fn evaluate_model(
    model_config: &ModelConfig,
    store: &ParamStore<f32>,
    task: &TaskSpec,
    config: &FinetuneConfig,
    data: &TaskData,
    fixed_tau: Option<f64>,
) -> Result<EvalOutcome> {
    match data {
        TaskData::Cls(examples) => {
            let mut predictions = Vec::with_capacity(examples.len());
            for chunk in (0..examples.len()).collect::<Vec<_>>().chunks(config.batch_size) {
                let rows: Vec<(&[u32], Option<&[u32]>)> = chunk
                    .iter()
                    .map(|&i| {
                        (
                            examples[i].input.ids.as_slice(),
                            Some(examples[i].input.segment_ids.as_slice()),
                        )
                    })
                    .collect();
                let padded = pad_batch(&rows);
                let mut tape: Tape<f32> = Tape::new();
                let bound = bind(store, &mut tape, false);
                let hidden = forward_encoder(
                    &mut tape,
                    &bound,
                    model_config,
                    "disc",
                    &EncoderInput {
                        ids: &padded.ids,
                        batch: padded.batch,
                        len: padded.len,
                        attention_mask: &padded.attention_mask,
                        segment_ids: Some(&padded.segment_ids),
                        dropout: 0.0,
                    },
                )?;
                let logits = cls_logits(&mut tape, &bound, hidden, 0.0)?;
                let values = tape.values(logits);
                let k = task.labels.len();
                for (b, _) in chunk.iter().enumerate() {
                    let row = &values[b * k..(b + 1) * k];
                    let mut argmax = 0usize;
                    for c in 1..k {
                        if row[c] > row[argmax] {
                            argmax = c;
                        }
                    }
                    predictions.push(task.labels[argmax].clone());
                }
            }
            let gold: Vec<String> = examples.iter().map(|e| e.gold_label.clone()).collect();
            let value = match task.metric {
                MetricKind::MacroF1 => macro_f1(&gold, &predictions)?,
                MetricKind::Accuracy => accuracy(&gold, &predictions)?,
                _ => unreachable!("validated task"),
            };
            Ok(EvalOutcome {
                scalar: value,
                report: MetricReport {
                    task: format!("{:?}", task.kind),
                    metric: format!("{:?}", task.metric),
                    value: MetricValue::Single(value),
                },
                predictions: Predictions::Labels(predictions),
                tuned_tau: None,
            })
        }
        TaskData::Tagged(examples) => {
            let mut pred_tags: Vec<Vec<String>> = Vec::with_capacity(examples.len());
            for chunk in (0..examples.len()).collect::<Vec<_>>().chunks(config.batch_size) {
                let rows: Vec<(&[u32], Option<&[u32]>)> = chunk
                    .iter()
                    .map(|&i| (examples[i].ids.as_slice(), None))
                    .collect();
                let padded = pad_batch(&rows);
                let mut tape: Tape<f32> = Tape::new();
                let bound = bind(store, &mut tape, false);
                let hidden = forward_encoder(
                    &mut tape,
                    &bound,
                    model_config,
                    "disc",
                    &EncoderInput {
                        ids: &padded.ids,
                        batch: padded.batch,
                        len: padded.len,
                        attention_mask: &padded.attention_mask,
                        segment_ids: None,
                        dropout: 0.0,
                    },
                )?;
                let logits = token_logits(&mut tape, &bound, hidden, 0.0)?;
                let values = tape.values(logits);
                let k = task.labels.len();
                for (b, &i) in chunk.iter().enumerate() {
                    let ex = &examples[i];
                    // per-token argmax over positions between CLS and SEP:
                    // exactly the aligned subword tokens kept at encoding time
                    let mut token_preds = Vec::with_capacity(ex.ids.len() - 2);
                    for t in 1..ex.ids.len() - 1 {
                        let row = &values[(b * padded.len + t) * k..(b * padded.len + t) * k + k];
                        let mut argmax = 0usize;
                        for c in 1..k {
                            if row[c] > row[argmax] {
                                argmax = c;
                            }
                        }
                        token_preds.push(argmax);
                    }
                    let word_preds =
                        recover_word_predictions(&token_preds, &ex.tokens_per_word)?;
                    let mut tags: Vec<String> =
                        word_preds.into_iter().map(|p| task.labels[p].clone()).collect();
                    // words truncated away predict O
                    while tags.len() < ex.gold_tags.len() {
                        tags.push("O".to_string());
                    }
                    pred_tags.push(tags);
                }
            }
            let gold: Vec<Vec<String>> = examples.iter().map(|e| e.gold_tags.clone()).collect();
            let value = entity_micro_f1(&gold, &pred_tags)?;
            Ok(EvalOutcome {
                scalar: value,
                report: MetricReport {
                    task: format!("{:?}", task.kind),
                    metric: format!("{:?}", task.metric),
                    value: MetricValue::Single(value),
                },
                predictions: Predictions::Tags(pred_tags),
                tuned_tau: None,
            })
        }
        TaskData::Qa {
            examples, golds, ..
        } => {
            // collect per-example best span and null delta
            let mut spans: Vec<(f64, String)> = Vec::with_capacity(examples.len());
            for chunk in (0..examples.len()).collect::<Vec<_>>().chunks(config.batch_size) {
                let rows: Vec<(&[u32], Option<&[u32]>)> = chunk
                    .iter()
                    .map(|&i| {
                        (
                            examples[i].encoding.ids.as_slice(),
                            Some(examples[i].encoding.segment_ids.as_slice()),
                        )
                    })
                    .collect();
                let padded = pad_batch(&rows);
                let mut tape: Tape<f32> = Tape::new();
                let bound = bind(store, &mut tape, false);
                let hidden = forward_encoder(
                    &mut tape,
                    &bound,
                    model_config,
                    "disc",
                    &EncoderInput {
                        ids: &padded.ids,
                        batch: padded.batch,
                        len: padded.len,
                        attention_mask: &padded.attention_mask,
                        segment_ids: Some(&padded.segment_ids),
                        dropout: 0.0,
                    },
                )?;
                let (start_logits, end_logits) = qa_logits(&mut tape, &bound, hidden, 0.0)?;
                let sv = tape.values(start_logits);
                let ev = tape.values(end_logits);
                for (b, &i) in chunk.iter().enumerate() {
                    let ex = &examples[i];
                    let n = ex.encoding.ids.len();
                    let start: Vec<f64> = (0..n).map(|t| sv[b * padded.len + t] as f64).collect();
                    let end: Vec<f64> = (0..n).map(|t| ev[b * padded.len + t] as f64).collect();
                    // delta = null - best; spans keep their text for scoring
                    let pred = predict_span(&start, &end, &ex.encoding, f64::INFINITY, config.max_answer_tokens)?;
                    match pred {
                        SpanPrediction::Span { start: s, end: e, score } => {
                            let null = start[0] + end[0];
                            spans.push((null - score, span_text(&ex.encoding, &ex.example.context, s, e)));
                        }
                        SpanPrediction::Unanswerable => {
                            spans.push((f64::INFINITY, String::new()));
                        }
                    }
                }
            }

            let score_at = |tau: f64| -> Result<(f64, f64, Vec<String>)> {
                let preds: Vec<String> = spans
                    .iter()
                    .map(|(delta, text)| {
                        if *delta > tau {
                            String::new()
                        } else {
                            text.clone()
                        }
                    })
                    .collect();
                let (em, f1) = squad_em_f1(golds, &preds)?;
                Ok((em, f1, preds))
            };

            let tau = match fixed_tau {
                Some(t) => t,
                None => {
                    // sweep candidate thresholds over observed deltas
                    let mut candidates: Vec<f64> = spans
                        .iter()
                        .map(|(d, _)| *d)
                        .filter(|d| d.is_finite())
                        .collect();
                    candidates.push(f64::NEG_INFINITY);
                    candidates.push(f64::INFINITY);
                    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    candidates.dedup();
                    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
                    for &c in &candidates {
                        let (em, _, _) = score_at(c)?;
                        if em > best.0 {
                            best = (em, c);
                        }
                    }
                    best.1
                }
            };
            let (em, f1, preds) = score_at(tau)?;
            Ok(EvalOutcome {
                scalar: (em + f1) / 2.0,
                report: MetricReport {
                    task: format!("{:?}", task.kind),
                    metric: format!("{:?}", task.metric),
                    value: MetricValue::EmF1 { em, f1 },
                },
                predictions: Predictions::Answers(preds),
                tuned_tau: Some(tau),
            })
        }
    }
}
