//! Wiring of the stages into a runnable local pipeline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{self, Corpus, CorpusDescriptor, CorpusError, Dataset, Split, Violation};
use crate::enrich::{DescriptionCache, EnrichOptions, ServiceConfig};
use crate::eval::{BuildOutcome, PipelineHandles, RunTag, VariantData};
use crate::inference::{classify_instances, CompletionServiceConfig, DecodeConfig, GenerationBackend, ParsePolicy, Prediction};
use crate::instruction::{build_dataset, emit_jsonl, BuildConfig, InstructionInstance, LabelSpaceMode, UNIFIED_SEVEN};
use crate::labels::{LabelConfig, LabelError};
use crate::train::{run_finetune, CheckpointRef, TrainConfig, TrainerBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub dataset: Dataset,
    pub root: PathBuf,
    /// Format overrides, same keys as the dataset's section in the format
    /// manifest.
    #[serde(default)]
    pub options: Option<toml::Table>,
    /// Moves this fraction of training conversations to validation, for
    /// releases without a validation split.
    #[serde(default)]
    pub validation_fraction: Option<f64>,
}

/// Everything the command-line tool reads from `--config`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub work_dir: Option<PathBuf>,
    /// Replaces the shipped label configuration.
    pub labels: Option<PathBuf>,
    pub media_root: Option<PathBuf>,
    pub corpora: Vec<CorpusEntry>,
    pub enrich: EnrichOptions,
    pub service: ServiceConfig,
    pub build: BuildConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub parse: ParsePolicy,
    pub completion: CompletionServiceConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config {}: {message}", .path.display())]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Labels(#[from] LabelError),
    #[error("{dataset}: {} integrity violation(s), first: {}", .violations.len(), first_violation(.violations))]
    Integrity { dataset: Dataset, violations: Vec<Violation> },
}

fn first_violation(v: &[Violation]) -> String {
    v.first().map(|x| format!("{x:?}")).unwrap_or_default()
}

impl PipelineConfig {
    /// Parses a TOML config; relative paths are resolved against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let err = |message: String| PipelineError::Config { path: path.to_path_buf(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut cfg: PipelineConfig = toml::from_str(&text).map_err(|e| err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.work_dir.as_mut().map(fix);
        cfg.labels.as_mut().map(fix);
        cfg.media_root.as_mut().map(fix);
        for c in &mut cfg.corpora {
            fix(&mut c.root);
        }
        Ok(cfg)
    }

    pub fn label_config(&self) -> Result<LabelConfig, PipelineError> {
        Ok(match &self.labels {
            Some(p) => LabelConfig::from_path(p)?,
            None => LabelConfig::default(),
        })
    }
}

/// Parses, normalizes and validates one corpus.
pub fn ingest(entry: &CorpusEntry, labels: &LabelConfig, seed: u64) -> Result<Corpus, PipelineError> {
    let desc = CorpusDescriptor { dataset: entry.dataset, root: entry.root.clone(), options: entry.options.clone() };
    let parsed = corpus::parse_corpus(&desc, labels)?;
    let map = labels.label_map(entry.dataset)?;
    let mut normalized = crate::labels::normalize_corpus(&parsed, &map)?;
    if let Some(f) = entry.validation_fraction {
        normalized = corpus::carve_validation(&normalized, f, seed)?;
    }
    let violations = corpus::validate_corpus(&normalized);
    if !violations.is_empty() {
        return Err(PipelineError::Integrity { dataset: entry.dataset, violations });
    }
    Ok(normalized)
}

/// File name of a dataset's canonical corpus inside a work directory.
pub fn corpus_file(dir: &Path, dataset: Dataset) -> PathBuf {
    dir.join(format!("{}.jsonl", dataset.as_str().to_lowercase()))
}

/// Runs the stages in-process over already ingested corpora.
pub struct LocalPipeline<'a> {
    pub corpora: &'a [Corpus],
    pub cache: &'a DescriptionCache,
    pub trainer: &'a dyn TrainerBackend,
    pub generator: Box<dyn Fn() -> Box<dyn GenerationBackend> + Sync + 'a>,
    pub work_dir: PathBuf,
    pub eval_split: Split,
    pub decode: DecodeConfig,
    pub policy: ParsePolicy,
}

impl LocalPipeline<'_> {
    fn run_dir(&self, tag: RunTag) -> PathBuf {
        self.work_dir
            .join(tag.dataset.as_str().to_lowercase())
            .join(tag.variant.to_string())
            .join(format!("seed-{}", tag.seed))
    }
}

impl PipelineHandles for LocalPipeline<'_> {
    fn build(&self, dataset: Dataset, cfg: &BuildConfig) -> Result<BuildOutcome, String> {
        let corpus = self
            .corpora
            .iter()
            .find(|c| c.name == dataset)
            .ok_or_else(|| format!("{dataset} was not ingested"))?;
        let has_video = corpus.conversations.iter().flat_map(|c| &c.utterances).any(|u| u.video_ref.is_some());
        if cfg.include_video_description && !has_video {
            return Ok(BuildOutcome::Skipped(format!("{dataset} has no per-utterance video")));
        }
        let one = std::slice::from_ref(corpus);
        let train = build_dataset(one, cfg, self.cache).map_err(|e| e.to_string())?.instances;
        let test_cfg = BuildConfig { splits: vec![self.eval_split], ..cfg.clone() };
        let test = build_dataset(one, &test_cfg, self.cache).map_err(|e| e.to_string())?.instances;
        let label_space = match cfg.label_space_mode {
            LabelSpaceMode::PerDataset => corpus.label_space.clone(),
            LabelSpaceMode::UnifiedSeven => UNIFIED_SEVEN.iter().map(|s| s.to_string()).collect(),
        };
        Ok(BuildOutcome::Ready(VariantData { train, test, label_space }))
    }

    fn train(&self, tag: RunTag, data: &[InstructionInstance], cfg: &TrainConfig) -> Result<CheckpointRef, String> {
        let dir = self.run_dir(tag);
        let path = dir.join("train.jsonl");
        emit_jsonl(data, &path).map_err(|e| e.to_string())?;
        run_finetune(&path, cfg, self.trainer, &dir).map(|out| out.checkpoint).map_err(|e| e.to_string())
    }

    fn predict(&self, _tag: RunTag, checkpoint: &CheckpointRef, data: &[InstructionInstance]) -> Result<Vec<Prediction>, String> {
        let mut backend = (self.generator)();
        classify_instances(data, checkpoint, backend.as_mut(), &self.decode, &self.policy).map_err(|e| e.to_string())
    }
}
