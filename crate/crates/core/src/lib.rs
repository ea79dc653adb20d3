//! Low-resource language model toolkit.
//!
//! End-to-end pipeline for pretraining and evaluating small BERT-style
//! encoders on low-resource languages:
//!
//! - **corpus**: ingestion, markup stripping, exact + MinHash deduplication,
//!   language-ID filtering, parallel-pair similarity filtering, statistics.
//! - **tokenizer**: WordPiece vocabulary training with a bounded character
//!   alphabet, greedy encoding, and fixed-length sequence packing.
//! - **autograd**: reverse-mode automatic differentiation over dense tensors,
//!   just enough for a transformer encoder.
//! - **model**: configurable encoder with generator (MLM) and discriminator
//!   (replaced-token) heads sharing one embedding table.
//! - **pretrain**: replaced-token-detection training loop with Adam, a linear
//!   warmup/decay schedule, and bilingual corpus mixing.
//! - **finetune**: task heads and the fine-tuning protocol for classification,
//!   NLI, sequence labeling, and span QA.
//! - **benchmark**: metric kernels, benchmark-score aggregation, paired
//!   bootstrap significance, sample-efficiency curves, and resource profiling.

pub mod autograd;
pub mod benchmark;
pub mod corpus;
pub mod error;
pub mod finetune;
pub mod model;
pub mod pretrain;
pub mod rng;
pub mod tokenizer;

pub use error::{Error, Result};
