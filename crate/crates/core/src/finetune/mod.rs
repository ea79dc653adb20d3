//! Task heads and the fine-tuning protocol: grid-and-seed training with
//! dev-based epoch selection for classification, NLI, sequence labeling,
//! and span QA.

mod data;
mod inputs;
mod labels;
mod protocol;
mod qa;

pub use data::{
    parse_conll, read_cls_jsonl, read_conll, read_pair_jsonl, read_squad, read_squad_golds,
    write_cls_jsonl, write_conll, ClsRecord, PairRecord, TaggedSentence,
};
pub use inputs::{encode_pair, encode_single, EncodedInput};
pub use labels::{align_labels_to_subwords, recover_word_predictions, AlignedLabels};
pub use protocol::{
    add_task_head, evaluate_model, finetune, prepare_pair_cls, prepare_qa, prepare_single_cls,
    prepare_tagged, ClsExample, EvalOutcome, FailedRun, FinetuneConfig, FinetuneOutcome,
    MetricKind, Predictions, QaTrainExample, SeedRun, TaggedExample, TaskData, TaskKind, TaskSpec,
    DEFAULT_FINETUNE_BATCH, DEFAULT_LR_GRID,
};
pub use qa::{
    char_span_to_token_span, encode_qa, predict_span, span_text, QaEncoding, QaExample,
    SpanPrediction, DEFAULT_MAX_ANSWER_TOKENS,
};
