//! Fine-tuning configuration, schedule and orchestration.
//!
//! [`run_finetune`] validates the configuration, loads the instruction
//! dataset, plans the run and hands everything to a [`TrainerBackend`]. The
//! backend owns the model and any training parallelism; the orchestrator only
//! serializes progress into the run log and writes the checkpoint manifest.

mod backend;
mod schedule;
pub mod tiny;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::instruction::{approx_tokens, InstructionInstance};
use crate::jsonl::{self, JsonlError};
pub use backend::{CommandBackend, RecordingBackend, StepCallback, TrainJob, TrainOutcome, TrainerBackend};
pub use schedule::{lr_at_step, schedule_for, ScheduleConfig};
pub use tiny::{TinyLoraBackend, TinyModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub name: String,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { name: "adamw".into(), beta1: 0.9, beta2: 0.95, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub micro_batch_size: usize,
    pub epochs: usize,
    #[serde(alias = "peak_lr")]
    pub learning_rate: f64,
    pub lora_r: usize,
    pub lora_alpha: f64,
    pub lora_dropout: f64,
    pub cutoff_length: usize,
    pub max_context_length: usize,
    pub optimizer: OptimizerConfig,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub schedule: ScheduleConfig,
    /// Passed through to the backend untouched.
    pub activation: String,
    pub base_model: String,
    /// Weight matrices that receive low-rank updates.
    pub adapter_targets: Vec<String>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            micro_batch_size: 8,
            epochs: 5,
            learning_rate: 3e-4,
            lora_r: 4,
            lora_alpha: 16.0,
            lora_dropout: 0.05,
            cutoff_length: 256,
            max_context_length: 4096,
            optimizer: OptimizerConfig::default(),
            weight_decay: 0.1,
            grad_clip_norm: 1.0,
            schedule: ScheduleConfig::default(),
            activation: "SwiGLU".into(),
            base_model: "meta-llama/Llama-2-7b-hf".into(),
            adapter_targets: vec!["q_proj".into(), "v_proj".into()],
            seed: 42,
        }
    }
}

pub fn default_config() -> TrainConfig {
    TrainConfig::default()
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| TrainError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Invalid(m));
        if self.micro_batch_size == 0 || self.batch_size == 0 || !self.batch_size.is_multiple_of(self.micro_batch_size) {
            return bad(format!(
                "batch_size {} must be a positive multiple of micro_batch_size {}",
                self.batch_size, self.micro_batch_size
            ));
        }
        if !(0.0..1.0).contains(&self.lora_dropout) {
            return bad(format!("lora_dropout {} must be in [0, 1)", self.lora_dropout));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.cutoff_length < 1 || self.cutoff_length > self.max_context_length {
            return bad(format!(
                "cutoff_length {} must be in [1, max_context_length {}]",
                self.cutoff_length, self.max_context_length
            ));
        }
        let floor = self.schedule.floor_ratio;
        if !(floor > 0.0 && floor <= 1.0) {
            return bad(format!("schedule.floor_ratio {floor} must be in (0, 1]"));
        }
        if self.schedule.name != "cosine" {
            return bad(format!("unsupported schedule '{}'", self.schedule.name));
        }
        if self.optimizer.name != "adamw" {
            return bad(format!("unsupported optimizer '{}'", self.optimizer.name));
        }
        if self.lora_r == 0 {
            return bad("lora_r must be at least 1".into());
        }
        Ok(())
    }

    pub fn grad_accumulation(&self) -> usize {
        self.batch_size / self.micro_batch_size
    }

    pub fn lora_scaling(&self) -> f64 {
        self.lora_alpha / self.lora_r as f64
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        jsonl::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Adapter size for a decoder whose targeted projections are all
/// `hidden x hidden`: each target adds `r * (hidden + hidden)` per layer.
pub fn lora_param_count(r: usize, hidden: usize, layers: usize, targets: usize) -> usize {
    layers * targets * r * (hidden + hidden)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunPlan {
    pub steps_per_epoch: usize,
    pub total_steps: usize,
    pub grad_accumulation: usize,
}

pub fn plan_run(dataset_size: usize, cfg: &TrainConfig) -> Result<RunPlan, TrainError> {
    if dataset_size == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let steps_per_epoch = dataset_size.div_ceil(cfg.batch_size);
    Ok(RunPlan { steps_per_epoch, total_steps: steps_per_epoch * cfg.epochs, grad_accumulation: cfg.grad_accumulation() })
}

/// Manifest describing a trained adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub path: String,
    pub base_model: String,
    pub adapter_params_count: usize,
    pub train_config_hash: String,
    pub final_loss: f64,
}

impl CheckpointRef {
    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|e| TrainError::Invalid(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub instances: usize,
    pub plan: RunPlan,
    /// Approximate tokens processed across all epochs; informational only.
    pub tokens_seen: u64,
    pub runtime_secs: f64,
    pub first_loss: Option<f64>,
    pub final_loss: f64,
    pub train_config_hash: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Invalid(String),
    #[error("training dataset {}: {source}", .path.display())]
    Dataset {
        path: PathBuf,
        #[source]
        source: JsonlError,
    },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("step {step} outside schedule of {total_steps} steps")]
    StepOutOfRange { step: usize, total_steps: usize },
    #[error("trainer backend '{backend}' failed: {message}")]
    Backend { backend: String, message: String },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

pub struct FinetuneOutput {
    pub checkpoint: CheckpointRef,
    pub summary: RunSummary,
    pub steps: Vec<StepRecord>,
}

struct RunLog {
    path: PathBuf,
    writer: Mutex<(BufWriter<File>, Vec<StepRecord>, Option<std::io::Error>)>,
}

impl StepCallback for RunLog {
    fn on_step(&self, record: StepRecord) {
        let mut guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let (w, steps, err) = &mut *guard;
        steps.push(record);
        if err.is_none() {
            let line = serde_json::to_string(&record).expect("step record serializes");
            if let Err(e) = writeln!(w, "{line}") {
                *err = Some(e);
            }
        }
    }
}

/// Trains an adapter on the instruction dataset at `dataset`.
///
/// Writes `run_log.jsonl`, `checkpoint.json` and `run_summary.json` into
/// `output_dir`. The dataset is read and validated before the backend runs.
pub fn run_finetune(
    dataset: &Path,
    cfg: &TrainConfig,
    backend: &dyn TrainerBackend,
    output_dir: &Path,
) -> Result<FinetuneOutput, TrainError> {
    cfg.validate()?;
    let instances: Vec<InstructionInstance> =
        jsonl::read(dataset).map_err(|source| TrainError::Dataset { path: dataset.into(), source })?;
    let plan = plan_run(instances.len(), cfg)?;
    let schedule = schedule_for(plan.total_steps, cfg)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TrainError::Io { path, source }
    };
    std::fs::create_dir_all(output_dir).map_err(io(output_dir))?;

    let log_path = output_dir.join("run_log.jsonl");
    let log = RunLog {
        writer: Mutex::new((BufWriter::new(File::create(&log_path).map_err(io(&log_path))?), Vec::new(), None)),
        path: log_path,
    };
    let job = TrainJob { dataset: dataset.to_path_buf(), instances: &instances, config: cfg, plan, schedule, output_dir };

    let started = Instant::now();
    log::info!("training {} instances: {} steps via {}", instances.len(), plan.total_steps, backend.name());
    let outcome = backend.train(&job, &log)?;
    let runtime_secs = started.elapsed().as_secs_f64();

    let (mut writer, steps, err) = log.writer.into_inner().unwrap_or_else(|e| e.into_inner());
    if let Some(e) = err {
        return Err(TrainError::Io { path: log.path, source: e });
    }
    writer.flush().map_err(io(&log.path))?;

    let hash = cfg.config_hash();
    let checkpoint = CheckpointRef {
        path: outcome.checkpoint_path.to_string_lossy().into_owned(),
        base_model: cfg.base_model.clone(),
        adapter_params_count: outcome.adapter_params_count,
        train_config_hash: hash.clone(),
        final_loss: outcome.final_loss,
    };
    let tokens: u64 = instances.iter().map(|i| approx_tokens(i) as u64).sum();
    let summary = RunSummary {
        instances: instances.len(),
        plan,
        tokens_seen: tokens * cfg.epochs as u64,
        runtime_secs,
        first_loss: steps.first().map(|s| s.loss),
        final_loss: outcome.final_loss,
        train_config_hash: hash,
    };
    jsonl::write_json(&checkpoint, &output_dir.join("checkpoint.json"))?;
    jsonl::write_json(&summary, &output_dir.join("run_summary.json"))?;
    Ok(FinetuneOutput { checkpoint, summary, steps })
}
