//! Replaced-token-detection pretraining: mask planning, generator sampling,
//! label construction, joint loss, Adam with linear warmup, and bilingual
//! corpus mixing.

mod adam;
mod batch;
mod masking;
mod sampler;
mod schedule;
pub mod synth;
mod trainer;

pub use adam::{adam_step, AdamState};
pub use batch::{
    assemble_rows, build_rtd_batch, complete_batch, sample_replacements, AssembledRows, DiscLabel,
    RtdBatch,
};
pub use masking::{plan_masking, MaskPlan, DEFAULT_MASK_FRACTION};
pub use sampler::{sample_mono, BilingualSampler};
pub use schedule::{
    LrSchedule, REFERENCE_BATCH_SIZE, REFERENCE_PEAK_LR, REFERENCE_TOTAL_STEPS,
    REFERENCE_WARMUP_STEPS,
};
pub use trainer::{
    disc_auc, pretrain, rtd_loss, write_trace_csv, PretrainConfig, PretrainData, PretrainOutcome,
    TraceRow, DEFAULT_RTD_LAMBDA,
};
