use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{lora_param_count, RunPlan, StepRecord, TrainConfig, TrainError};
use crate::instruction::InstructionInstance;

/// Everything a backend needs for one run.
pub struct TrainJob<'a> {
    pub dataset: PathBuf,
    pub instances: &'a [InstructionInstance],
    pub config: &'a TrainConfig,
    pub plan: RunPlan,
    /// Learning rate for each optimizer update, in order.
    pub schedule: Vec<f64>,
    pub output_dir: &'a Path,
}

/// Receives per-step progress. May be called from backend worker threads.
pub trait StepCallback: Sync {
    fn on_step(&self, record: StepRecord);
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub adapter_params_count: usize,
    pub final_loss: f64,
}

pub trait TrainerBackend: Send + Sync {
    fn name(&self) -> &str;
    fn train(&self, job: &TrainJob<'_>, callbacks: &dyn StepCallback) -> Result<TrainOutcome, TrainError>;
}

/// Captures what it was asked to do and reports a synthetic falling loss.
#[derive(Debug, Default)]
pub struct RecordingBackend {
    captured: Mutex<Option<Recorded>>,
    calls: Mutex<usize>,
    fail_with: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recorded {
    pub config: TrainConfig,
    pub schedule: Vec<f64>,
    pub plan: RunPlan,
    pub instances: usize,
}

impl RecordingBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn failing(message: impl Into<String>) -> Self {
        RecordingBackend { fail_with: Some(message.into()), ..Self::default() }
    }

    pub fn recorded(&self) -> Option<Recorded> {
        self.captured.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl TrainerBackend for RecordingBackend {
    fn name(&self) -> &str {
        "recording"
    }

    fn train(&self, job: &TrainJob<'_>, callbacks: &dyn StepCallback) -> Result<TrainOutcome, TrainError> {
        *self.calls.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        *self.captured.lock().unwrap_or_else(|e| e.into_inner()) = Some(Recorded {
            config: job.config.clone(),
            schedule: job.schedule.clone(),
            plan: job.plan,
            instances: job.instances.len(),
        });
        if let Some(message) = &self.fail_with {
            return Err(TrainError::Backend { backend: self.name().into(), message: message.clone() });
        }
        let mut loss = 0.0;
        for (i, &lr) in job.schedule.iter().enumerate() {
            loss = 2.0 / (i + 1) as f64;
            callbacks.on_step(StepRecord { step: i + 1, lr, loss });
        }
        let cfg = job.config;
        Ok(TrainOutcome {
            checkpoint_path: job.output_dir.join("adapter"),
            adapter_params_count: lora_param_count(cfg.lora_r, 4096, 32, cfg.adapter_targets.len()),
            final_loss: loss,
        })
    }
}

/// Runs an external trainer program.
///
/// The program is called as `program [args...] <job.json>` where the job
/// file holds the dataset path, output directory, config, plan and
/// schedule. It reports progress on stdout, one JSON object per line:
/// `{"step", "lr", "loss"}` per update and a final
/// `{"checkpoint", "adapter_params_count", "final_loss"}`. Other lines are
/// logged and ignored.
#[derive(Debug, Clone)]
pub struct CommandBackend {
    pub program: PathBuf,
    pub args: Vec<String>,
}

#[derive(Serialize)]
struct JobFile<'a> {
    dataset: &'a Path,
    output_dir: &'a Path,
    config: &'a TrainConfig,
    plan: RunPlan,
    schedule: &'a [f64],
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TrainerLine {
    Step(StepRecord),
    Done { checkpoint: String, adapter_params_count: usize, final_loss: f64 },
}

impl TrainerBackend for CommandBackend {
    fn name(&self) -> &str {
        "command"
    }

    fn train(&self, job: &TrainJob<'_>, callbacks: &dyn StepCallback) -> Result<TrainOutcome, TrainError> {
        let fail = |message: String| TrainError::Backend { backend: self.program.display().to_string(), message };
        let job_path = job.output_dir.join("job.json");
        crate::jsonl::write_json(
            &JobFile {
                dataset: &job.dataset,
                output_dir: job.output_dir,
                config: job.config,
                plan: job.plan,
                schedule: &job.schedule,
            },
            &job_path,
        )?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .arg(&job_path)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(format!("could not start: {e}")))?;
        let mut stderr = child.stderr.take().expect("stderr piped");
        let stderr_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });
        let mut done = None;
        for line in BufReader::new(child.stdout.take().expect("stdout piped")).lines() {
            let line = line.map_err(|e| fail(format!("reading output: {e}")))?;
            match serde_json::from_str::<TrainerLine>(&line) {
                Ok(TrainerLine::Step(s)) => callbacks.on_step(s),
                Ok(TrainerLine::Done { checkpoint, adapter_params_count, final_loss }) => {
                    done = Some(TrainOutcome { checkpoint_path: checkpoint.into(), adapter_params_count, final_loss })
                }
                Err(_) => log::debug!("trainer: {line}"),
            }
        }
        let status = child.wait().map_err(|e| fail(e.to_string()))?;
        let stderr = stderr_reader.join().unwrap_or_default();
        if !status.success() {
            let tail: Vec<&str> = stderr.lines().rev().take(20).collect();
            let tail: Vec<&str> = tail.into_iter().rev().collect();
            return Err(fail(format!("exited with {status}\n{}", tail.join("\n"))));
        }
        done.ok_or_else(|| fail("finished without reporting a checkpoint".into()))
    }
}
