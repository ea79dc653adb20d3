use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lrlm_core::finetune::{FinetuneConfig, TaskKind, TaskSpec};
use lrlm_core::pretrain::PretrainConfig;

use crate::CliError;

/// Violations collected by config validation; any entry means exit code 2.
pub type Violations = Vec<String>;

pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
}

/// Pretraining stage config: core hyperparameters plus data/artifact paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainStage {
    /// Core training hyperparameters (model, steps, schedule, ...).
    #[serde(rename = "pretrain")]
    pub core: PretrainConfig,
    pub data: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_b: Option<PathBuf>,
    #[serde(default = "default_weights")]
    pub corpus_weights: (f64, f64),
    #[serde(default = "default_precision")]
    pub precision: Precision,
    pub checkpoint_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_csv: Option<PathBuf>,
}

fn default_weights() -> (f64, f64) {
    (0.5, 0.5)
}

fn default_precision() -> Precision {
    Precision::F32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl PretrainStage {
    pub fn validate(&self) -> Violations {
        let mut v = Violations::new();
        if !(0.0 < self.core.mask_fraction && self.core.mask_fraction < 1.0) {
            v.push(format!(
                "mask_fraction = {} outside (0, 1)",
                self.core.mask_fraction
            ));
        }
        if self.core.lambda < 0.0 {
            v.push(format!("lambda = {} negative", self.core.lambda));
        }
        if self.core.steps == 0 {
            v.push("steps = 0".into());
        }
        if self.core.batch_size == 0 {
            v.push("batch_size = 0".into());
        }
        if self.core.schedule.warmup_steps >= self.core.schedule.total_steps {
            v.push(format!(
                "schedule.warmup_steps {} must be below schedule.total_steps {}",
                self.core.schedule.warmup_steps, self.core.schedule.total_steps
            ));
        }
        if let Err(e) = self.core.model.validate() {
            v.push(e.to_string());
        }
        if !self.data.exists() {
            v.push(format!("data path {} does not exist", self.data.display()));
        }
        if let Some(b) = &self.data_b {
            if !b.exists() {
                v.push(format!("data_b path {} does not exist", b.display()));
            }
        }
        v
    }
}

/// Fine-tuning stage config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneStage {
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub task: TaskStage,
    /// Protocol hyperparameters (epochs, grid, seeds, ...).
    #[serde(rename = "finetune")]
    pub core: FinetuneConfig,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub output_dir: PathBuf,
}

/// Task description as written in configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskStage {
    pub kind: TaskKind,
    #[serde(default)]
    pub labels: Vec<String>,
}

impl TaskStage {
    pub fn to_spec(&self) -> TaskSpec {
        match self.kind {
            TaskKind::SingleSeqCls => TaskSpec::single_cls(self.labels.clone()),
            TaskKind::PairCls => {
                if self.labels.is_empty() {
                    TaskSpec::nli()
                } else {
                    TaskSpec::pair_cls(self.labels.clone())
                }
            }
            TaskKind::SeqLabel => TaskSpec::seq_label(self.labels.clone()),
            TaskKind::SpanQa => TaskSpec::span_qa(),
        }
    }
}

impl FinetuneStage {
    pub fn validate(&self) -> Violations {
        let mut v = Violations::new();
        if let Err(e) = self.core.validate() {
            v.push(e.to_string());
        }
        if let Err(e) = self.task.to_spec().validate() {
            v.push(e.to_string());
        }
        for (name, p) in [
            ("checkpoint", &self.checkpoint),
            ("vocab", &self.vocab),
            ("train", &self.train),
            ("dev", &self.dev),
        ] {
            if !p.exists() {
                v.push(format!("{name} path {} does not exist", p.display()));
            }
        }
        v
    }
}

/// Sample-efficiency stage config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEfficiencyStage {
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub task: TaskStage,
    /// Protocol hyperparameters reused per subsample run.
    #[serde(rename = "finetune")]
    pub core: FinetuneConfig,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    #[serde(default = "default_sizes")]
    pub sizes: Vec<usize>,
    pub output_csv: PathBuf,
}

fn default_sizes() -> Vec<usize> {
    lrlm_core::benchmark::DEFAULT_SIZE_GRID.to_vec()
}

impl SampleEfficiencyStage {
    pub fn validate(&self) -> Violations {
        let mut v = Violations::new();
        if let Err(e) = self.core.validate() {
            v.push(e.to_string());
        }
        if self.sizes.is_empty() {
            v.push("sizes grid is empty".into());
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            v.push(format!("sizes {:?} not strictly ascending", self.sizes));
        }
        for (name, p) in [
            ("checkpoint", &self.checkpoint),
            ("vocab", &self.vocab),
            ("train", &self.train),
            ("dev", &self.dev),
            ("test", &self.test),
        ] {
            if !p.exists() {
                v.push(format!("{name} path {} does not exist", p.display()));
            }
        }
        v
    }
}

/// Profiling stage config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileStage {
    pub name: String,
    pub workload: Workload,
    #[serde(default)]
    pub layers: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default)]
    pub ffn: usize,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_len")]
    pub len: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_hidden() -> usize {
    64
}
fn default_heads() -> usize {
    4
}
fn default_vocab() -> usize {
    200
}
fn default_batch() -> usize {
    8
}
fn default_len() -> usize {
    64
}
fn default_reps() -> usize {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Workload {
    EncoderForward,
    PretrainSteps,
}

impl ProfileStage {
    pub fn validate(&self) -> Violations {
        let mut v = Violations::new();
        if self.layers == 0 {
            v.push("layers = 0".into());
        }
        if self.hidden % self.heads != 0 {
            v.push(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        v
    }
}
