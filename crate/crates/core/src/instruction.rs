//! Instruction-tuning records.
//!
//! Each utterance becomes one record holding the task statement, an optional
//! video description, the `k` preceding turns, the target turn and its gold
//! label. Context turns carry speaker and text only; their labels never reach
//! the prompt.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Corpus, Dataset, Split};
use crate::enrich::{DescriptionCache, DescriptionKey};
use crate::jsonl::{self, FileManifest, JsonlError};
use crate::par::{self, Execution};

/// The unified seven-emotion space, in the order the instruction lists it.
pub const UNIFIED_SEVEN: [&str; 7] = ["happiness", "anger", "fear", "sadness", "disgust", "surprise", "neutral"];

pub const TEMPLATE_V1: &str = "v1";

const V1_PREFIX: &str =
    "Given the Video Description and Context, detect the emotion of the input, and assign an accuracy label from [";
const V1_SUFFIX: &str = "].";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub source_dataset: Dataset,
    pub conversation_id: String,
    pub turn_index: usize,
    pub split: Split,
}

impl InstanceMeta {
    pub fn description_key(&self) -> DescriptionKey {
        DescriptionKey {
            source_dataset: self.source_dataset,
            conversation_id: self.conversation_id.clone(),
            turn_index: self.turn_index,
        }
    }
}

/// One supervised record. Field order is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionInstance {
    pub instruction: String,
    pub video_description: Option<String>,
    pub context: Vec<Turn>,
    pub input: Turn,
    pub output: String,
    pub meta: InstanceMeta,
}

impl InstructionInstance {
    /// Labels named in the instruction's bracketed list.
    pub fn label_space(&self) -> Vec<String> {
        instruction_label_space(&self.instruction).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpaceMode {
    /// Each dataset lists its own configured label space.
    #[default]
    PerDataset,
    /// Every record lists the seven unified emotions; utterances labelled
    /// outside them are skipped.
    UnifiedSeven,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildConfig {
    pub context_window: usize,
    pub include_video_description: bool,
    pub label_space_mode: LabelSpaceMode,
    pub template_version: String,
    pub splits: Vec<Split>,
    /// Only used to report how many prompts exceed the trainer's cutoff.
    pub cutoff_length: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            context_window: 1,
            include_video_description: false,
            label_space_mode: LabelSpaceMode::PerDataset,
            template_version: TEMPLATE_V1.into(),
            splits: vec![Split::Train],
            cutoff_length: 256,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum InstructionError {
    #[error("utterance index {index} out of range for a conversation of {len} turns")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{0:?} has no canonical label; normalize the corpus first")]
    MissingLabel(InstanceMeta),
    #[error("label space is empty")]
    EmptyLabelSpace,
    #[error("unknown instruction template version '{0}'")]
    UnknownTemplate(String),
    #[error("{} utterance(s) with video have no cached description (run enrich first): {}", .0.len(), preview(.0))]
    MissingDescriptions(Vec<DescriptionKey>),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

fn preview(keys: &[DescriptionKey]) -> String {
    let mut shown: Vec<String> = keys.iter().take(10).map(|k| k.to_string()).collect();
    if keys.len() > 10 {
        shown.push(format!("... {} more", keys.len() - 10));
    }
    shown.join(", ")
}

/// The `min(k, index)` turns immediately before `index`, oldest first.
pub fn build_context(conversation: &Conversation, index: usize, k: usize) -> Result<Vec<Turn>, InstructionError> {
    let len = conversation.utterances.len();
    if index >= len {
        return Err(InstructionError::IndexOutOfRange { index, len });
    }
    let start = index - k.min(index);
    Ok(conversation.utterances[start..index]
        .iter()
        .map(|u| Turn { speaker: u.speaker.clone(), text: u.text.clone() })
        .collect())
}

/// Task statement naming `label_space` in order, e.g. `['a', 'b']`.
pub fn instruction_text(label_space: &[impl AsRef<str>], template_version: &str) -> Result<String, InstructionError> {
    if template_version != TEMPLATE_V1 {
        return Err(InstructionError::UnknownTemplate(template_version.into()));
    }
    if label_space.is_empty() {
        return Err(InstructionError::EmptyLabelSpace);
    }
    let list: Vec<String> = label_space.iter().map(|l| format!("'{}'", l.as_ref())).collect();
    Ok(format!("{V1_PREFIX}{}{V1_SUFFIX}", list.join(", ")))
}

/// Parses the bracketed label list back out of an instruction.
pub fn instruction_label_space(instruction: &str) -> Option<Vec<String>> {
    let open = instruction.rfind('[')?;
    let close = open + instruction[open..].find(']')?;
    let inner = &instruction[open + 1..close];
    let labels: Vec<String> = inner
        .split(',')
        .map(|s| s.trim().trim_matches('\'').to_string())
        .filter(|s| !s.is_empty())
        .collect();
    (!labels.is_empty()).then_some(labels)
}

/// Renders the record for utterance `index` of `conversation`.
pub fn render_instruction(
    conversation: &Conversation,
    index: usize,
    context: Vec<Turn>,
    description: Option<String>,
    label_space: &[impl AsRef<str>],
    template_version: &str,
) -> Result<InstructionInstance, InstructionError> {
    let len = conversation.utterances.len();
    let utterance = conversation.utterances.get(index).ok_or(InstructionError::IndexOutOfRange { index, len })?;
    let meta = InstanceMeta {
        source_dataset: conversation.source_dataset,
        conversation_id: conversation.conversation_id.clone(),
        turn_index: utterance.turn_index,
        split: conversation.split,
    };
    let output = utterance.canonical_label.clone().ok_or_else(|| InstructionError::MissingLabel(meta.clone()))?;
    Ok(InstructionInstance {
        instruction: instruction_text(label_space, template_version)?,
        video_description: description,
        context,
        input: Turn { speaker: utterance.speaker.clone(), text: utterance.text.clone() },
        output,
        meta,
    })
}

/// Prompt text up to and including the response header. Training appends the
/// gold label; inference asks the model to continue.
pub fn render_prompt(instance: &InstructionInstance) -> String {
    let mut out = String::new();
    out.push_str("### Instruction:\n");
    out.push_str(&instance.instruction);
    out.push_str("\n\n### Video Description:\n");
    if let Some(d) = &instance.video_description {
        out.push_str(d);
    }
    out.push_str("\n\n### Context:\n");
    for turn in &instance.context {
        out.push_str(&turn.speaker);
        out.push_str(": ");
        out.push_str(&turn.text);
        out.push('\n');
    }
    out.push_str("\n### Input:\n");
    out.push_str(&instance.input.speaker);
    out.push_str(": ");
    out.push_str(&instance.input.text);
    out.push_str("\n\n### Response:\n");
    out
}

/// Whitespace token count of prompt plus label, a cheap stand-in for the
/// trainer's tokenizer.
pub fn approx_tokens(instance: &InstructionInstance) -> usize {
    render_prompt(instance).split_whitespace().count() + instance.output.split_whitespace().count()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub instances: usize,
    pub over_cutoff: usize,
    /// Utterances dropped because their label is outside the listed space.
    pub outside_label_space: usize,
    pub per_dataset: std::collections::BTreeMap<Dataset, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltDataset {
    pub instances: Vec<InstructionInstance>,
    pub report: BuildReport,
}

pub fn build_dataset(
    corpora: &[Corpus],
    cfg: &BuildConfig,
    cache: &DescriptionCache,
) -> Result<BuiltDataset, InstructionError> {
    build_dataset_with(Execution::default(), corpora, cfg, cache)
}

/// One record per utterance of the selected splits, ordered by
/// (dataset, conversation id, turn index).
pub fn build_dataset_with(
    exec: Execution,
    corpora: &[Corpus],
    cfg: &BuildConfig,
    cache: &DescriptionCache,
) -> Result<BuiltDataset, InstructionError> {
    let unified: Vec<String> = UNIFIED_SEVEN.iter().map(|s| s.to_string()).collect();
    let work: Vec<(&Conversation, &[String])> = corpora
        .iter()
        .flat_map(|c| {
            let space: &[String] = match cfg.label_space_mode {
                LabelSpaceMode::PerDataset => &c.label_space,
                LabelSpaceMode::UnifiedSeven => &unified,
            };
            c.conversations.iter().filter(|conv| cfg.splits.contains(&conv.split)).map(move |conv| (conv, space))
        })
        .collect();

    struct Part {
        instances: Vec<InstructionInstance>,
        skipped: usize,
        missing: Vec<DescriptionKey>,
    }

    let parts = par::try_map(exec, &work, |(conv, space)| -> Result<Part, InstructionError> {
        let mut part = Part { instances: Vec::with_capacity(conv.utterances.len()), skipped: 0, missing: Vec::new() };
        for (i, u) in conv.utterances.iter().enumerate() {
            if let Some(label) = &u.canonical_label {
                if !space.contains(label) {
                    part.skipped += 1;
                    continue;
                }
            }
            let description = if cfg.include_video_description && u.video_ref.is_some() {
                let key = DescriptionKey {
                    source_dataset: conv.source_dataset,
                    conversation_id: conv.conversation_id.clone(),
                    turn_index: u.turn_index,
                };
                match cache.get_by_key(&key) {
                    Some(d) => Some(d.description),
                    None => {
                        part.missing.push(key);
                        continue;
                    }
                }
            } else {
                None
            };
            let context = build_context(conv, i, cfg.context_window)?;
            part.instances.push(render_instruction(conv, i, context, description, space, &cfg.template_version)?);
        }
        Ok(part)
    })?;

    let mut report = BuildReport::default();
    let mut instances = Vec::new();
    let mut missing = Vec::new();
    for part in parts {
        report.outside_label_space += part.skipped;
        instances.extend(part.instances);
        missing.extend(part.missing);
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(InstructionError::MissingDescriptions(missing));
    }
    instances.sort_by(|a, b| {
        (a.meta.source_dataset, &a.meta.conversation_id, a.meta.turn_index).cmp(&(
            b.meta.source_dataset,
            &b.meta.conversation_id,
            b.meta.turn_index,
        ))
    });
    report.instances = instances.len();
    report.over_cutoff = par::map(exec, &instances, |inst| approx_tokens(inst) > cfg.cutoff_length)
        .into_iter()
        .filter(|&over| over)
        .count();
    for inst in &instances {
        *report.per_dataset.entry(inst.meta.source_dataset).or_default() += 1;
    }
    Ok(BuiltDataset { instances, report })
}

/// Checks the record-level invariants for window size `k`.
pub fn check_instance(instance: &InstructionInstance, k: usize) -> Result<(), String> {
    let expected = k.min(instance.meta.turn_index);
    if instance.context.len() != expected {
        return Err(format!("context has {} turns, expected {expected}", instance.context.len()));
    }
    let space = instruction_label_space(&instance.instruction).ok_or("instruction has no label list")?;
    if !space.contains(&instance.output) {
        return Err(format!("output '{}' is not in the listed labels", instance.output));
    }
    let unique: BTreeSet<&String> = space.iter().collect();
    if unique.len() != space.len() {
        return Err("label list repeats a label".into());
    }
    Ok(())
}

pub fn emit_jsonl(instances: &[InstructionInstance], path: &Path) -> Result<FileManifest, InstructionError> {
    Ok(jsonl::write_atomic(instances, path)?)
}

pub fn load_instances(path: &Path) -> Result<Vec<InstructionInstance>, InstructionError> {
    Ok(jsonl::read(path)?)
}

/// A gold label keyed by instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub meta: InstanceMeta,
    pub label: String,
}

pub fn gold_records(instances: &[InstructionInstance]) -> Vec<GoldRecord> {
    instances.iter().map(|i| GoldRecord { meta: i.meta.clone(), label: i.output.clone() }).collect()
}

pub fn emit_gold(instances: &[InstructionInstance], path: &Path) -> Result<FileManifest, InstructionError> {
    Ok(jsonl::write_atomic(&gold_records(instances), path)?)
}
