//! Generation backends and label parsing.

use std::path::Path;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::enrich::RetryPolicy;
use crate::http::{self, HttpFailure};
use crate::instruction::{render_prompt, InstanceMeta, InstructionInstance};
use crate::jsonl::{self, FileManifest, JsonlError};
use crate::par::{self, Execution};
use crate::train::{CheckpointRef, TinyModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Exact,
    Substring,
    Fallback,
    Unparsed,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ParsePolicy {
    #[default]
    Strict,
    /// Unmatched generations get `default_label` with status `fallback`.
    Lenient { default_label: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub meta: InstanceMeta,
    pub generation: String,
    pub parsed_label: Option<String>,
    pub parse_status: ParseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Greedy,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { strategy: Strategy::Greedy, max_new_tokens: 16, seed: 0 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("backend '{backend}' could not load checkpoint {checkpoint}: {message}")]
    Load { backend: String, checkpoint: String, message: String },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

pub trait GenerationBackend: Send + Sync {
    fn name(&self) -> &str;
    fn load(&mut self, checkpoint: &CheckpointRef) -> Result<(), String>;
    fn generate(&self, instance: &InstructionInstance, prompt: &str, decode: &DecodeConfig) -> Result<String, String>;
}

/// Answers with each instance's gold label.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoBackend;

impl GenerationBackend for EchoBackend {
    fn name(&self) -> &str {
        "echo"
    }
    fn load(&mut self, _: &CheckpointRef) -> Result<(), String> {
        Ok(())
    }
    fn generate(&self, instance: &InstructionInstance, _: &str, _: &DecodeConfig) -> Result<String, String> {
        Ok(instance.output.clone())
    }
}

/// Answers every prompt with the same text.
#[derive(Debug, Clone)]
pub struct FixedBackend(pub String);

impl GenerationBackend for FixedBackend {
    fn name(&self) -> &str {
        "fixed"
    }
    fn load(&mut self, _: &CheckpointRef) -> Result<(), String> {
        Ok(())
    }
    fn generate(&self, _: &InstructionInstance, _: &str, _: &DecodeConfig) -> Result<String, String> {
        Ok(self.0.clone())
    }
}

/// Scores labels with an adapter written by the tiny trainer.
#[derive(Debug, Default)]
pub struct TinyBackend {
    model: Option<TinyModel>,
}

impl GenerationBackend for TinyBackend {
    fn name(&self) -> &str {
        "tiny-lora"
    }

    fn load(&mut self, checkpoint: &CheckpointRef) -> Result<(), String> {
        self.model = Some(TinyModel::load(Path::new(&checkpoint.path))?);
        Ok(())
    }

    fn generate(&self, instance: &InstructionInstance, _: &str, decode: &DecodeConfig) -> Result<String, String> {
        let model = self.model.as_ref().ok_or("no checkpoint loaded")?;
        let label = match decode.strategy {
            Strategy::Greedy => model.predict(instance),
            Strategy::Sample => {
                let scores = model.scores(instance);
                let max = scores.iter().map(|(_, z)| *z).fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = scores.iter().map(|(_, z)| (z - max).exp()).collect();
                let digest = jsonl::sha256_hex(format!("{:?}", instance.meta).as_bytes());
                let seed = decode.seed ^ u64::from_str_radix(&digest[..16], 16).unwrap_or(0);
                let mut u = ChaCha8Rng::seed_from_u64(seed).random::<f64>() * weights.iter().sum::<f64>();
                let mut pick = scores.last().map(|(l, _)| l.clone());
                for ((l, _), w) in scores.iter().zip(&weights) {
                    if u < *w {
                        pick = Some(l.clone());
                        break;
                    }
                    u -= w;
                }
                pick
            }
        };
        label.ok_or_else(|| "model knows no labels".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionServiceConfig {
    /// An OpenAI-compatible `/v1/completions` URL, e.g. a local vLLM server
    /// hosting the merged adapter.
    pub endpoint: String,
    /// Served model name; defaults to the checkpoint path.
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for CompletionServiceConfig {
    fn default() -> Self {
        CompletionServiceConfig {
            endpoint: "http://127.0.0.1:8000/v1/completions".into(),
            model: None,
            api_key_env: None,
            timeout_secs: 60,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct HttpCompletionBackend {
    config: CompletionServiceConfig,
    api_key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl HttpCompletionBackend {
    pub fn new(config: CompletionServiceConfig) -> Result<Self, String> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| format!("environment variable {var} is not set"))?),
            None => None,
        };
        let agent = http::agent(Duration::from_secs(config.timeout_secs));
        Ok(HttpCompletionBackend { model: config.model.clone().unwrap_or_default(), config, api_key, agent })
    }
}

impl GenerationBackend for HttpCompletionBackend {
    fn name(&self) -> &str {
        "http-completions"
    }

    fn load(&mut self, checkpoint: &CheckpointRef) -> Result<(), String> {
        if self.config.model.is_none() {
            self.model = checkpoint.path.clone();
        }
        Ok(())
    }

    fn generate(&self, _: &InstructionInstance, prompt: &str, decode: &DecodeConfig) -> Result<String, String> {
        let temperature = match decode.strategy {
            Strategy::Greedy => 0.0,
            Strategy::Sample => 1.0,
        };
        let body = json!({
            "model": self.model,
            "prompt": prompt,
            "max_tokens": decode.max_new_tokens,
            "temperature": temperature,
            "seed": decode.seed,
        });
        let mut attempt = 0;
        loop {
            match http::post_json(&self.agent, &self.config.endpoint, self.api_key.as_deref(), &body) {
                Ok(v) => {
                    return v
                        .pointer("/choices/0/text")
                        .and_then(|t| t.as_str())
                        .map(str::to_string)
                        .ok_or_else(|| "response has no choices[0].text".into())
                }
                Err(e) if e.retryable() && attempt < self.config.retry.max_retries => {
                    std::thread::sleep(self.config.retry.backoff(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(HttpFailure::to_string(&e)),
            }
        }
    }
}

/// Earliest whole-word, case-insensitive occurrence of `needle` in `hay`.
fn word_position(hay: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let mut from = 0;
    while let Some(off) = hay[from..].find(needle) {
        let start = from + off;
        let end = start + needle.len();
        let before_ok = hay[..start].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = hay[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return Some(start);
        }
        from = start + hay[start..].chars().next().map_or(1, char::len_utf8);
    }
    None
}

/// Maps a free-text generation to a label of `label_space`.
///
/// Rules, in order: the trimmed text equals a label (case-insensitive); the
/// text names labels as whole words, earliest first and ties to the earlier
/// label in `label_space`; otherwise the policy decides.
pub fn parse_label(generation: &str, label_space: &[String], policy: &ParsePolicy) -> (Option<String>, ParseStatus) {
    let text = generation.trim().to_lowercase();
    if let Some(l) = label_space.iter().find(|l| l.to_lowercase() == text) {
        return (Some(l.clone()), ParseStatus::Exact);
    }
    let mut best: Option<(usize, &String)> = None;
    for label in label_space {
        if let Some(pos) = word_position(&text, &label.to_lowercase()) {
            if best.is_none_or(|(b, _)| pos < b) {
                best = Some((pos, label));
            }
        }
    }
    if let Some((_, l)) = best {
        return (Some(l.clone()), ParseStatus::Substring);
    }
    match policy {
        ParsePolicy::Lenient { default_label } if label_space.contains(default_label) => {
            (Some(default_label.clone()), ParseStatus::Fallback)
        }
        _ => (None, ParseStatus::Unparsed),
    }
}

pub fn classify_instances(
    instances: &[InstructionInstance],
    checkpoint: &CheckpointRef,
    backend: &mut dyn GenerationBackend,
    decode: &DecodeConfig,
    policy: &ParsePolicy,
) -> Result<Vec<Prediction>, InferenceError> {
    classify_with(Execution::default(), instances, checkpoint, backend, decode, policy)
}

/// One prediction per instance, in input order. Generation failures become
/// unparsed predictions carrying the error text.
pub fn classify_with(
    exec: Execution,
    instances: &[InstructionInstance],
    checkpoint: &CheckpointRef,
    backend: &mut dyn GenerationBackend,
    decode: &DecodeConfig,
    policy: &ParsePolicy,
) -> Result<Vec<Prediction>, InferenceError> {
    backend.load(checkpoint).map_err(|message| InferenceError::Load {
        backend: backend.name().into(),
        checkpoint: checkpoint.path.clone(),
        message,
    })?;
    let backend: &dyn GenerationBackend = backend;
    Ok(par::map(exec, instances, |inst| {
        let space = inst.label_space();
        match backend.generate(inst, &render_prompt(inst), decode) {
            Ok(generation) => {
                let (parsed_label, parse_status) = parse_label(&generation, &space, policy);
                Prediction { meta: inst.meta.clone(), generation, parsed_label, parse_status, diagnostic: None }
            }
            Err(e) => Prediction {
                meta: inst.meta.clone(),
                generation: String::new(),
                parsed_label: None,
                parse_status: ParseStatus::Unparsed,
                diagnostic: Some(e),
            },
        }
    }))
}

pub fn write_predictions(preds: &[Prediction], path: &Path) -> Result<FileManifest, InferenceError> {
    Ok(jsonl::write_atomic(preds, path)?)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, InferenceError> {
    Ok(jsonl::read(path)?)
}
