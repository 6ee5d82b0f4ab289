use std::fmt;

use serde::{Deserialize, Serialize};

use super::{aggregate_seeds, confusion_matrix, EvalReport};
use crate::corpus::Dataset;
use crate::inference::Prediction;
use crate::instruction::{gold_records, BuildConfig, InstructionInstance};
use crate::par::{self, Execution};
use crate::train::{CheckpointRef, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    NoContext,
    AddVideoDescription,
    Full,
}

impl AblationVariant {
    /// Row order of the rendered table.
    pub const ALL: [AblationVariant; 3] =
        [AblationVariant::NoContext, AblationVariant::AddVideoDescription, AblationVariant::Full];

    pub fn title(self) -> &'static str {
        match self {
            AblationVariant::NoContext => "No Context",
            AblationVariant::AddVideoDescription => "Add Video Description",
            AblationVariant::Full => "Full",
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationVariant::NoContext => "no_context",
            AblationVariant::AddVideoDescription => "add_video_description",
            AblationVariant::Full => "full",
        })
    }
}

impl std::str::FromStr for AblationVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(AblationVariant::Full),
            "no_context" => Ok(AblationVariant::NoContext),
            "add_video_description" => Ok(AblationVariant::AddVideoDescription),
            _ => Err(format!("unknown variant '{s}' (expected full, no_context or add_video_description)")),
        }
    }
}

/// A variant with the configs it builds and trains with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub variant: AblationVariant,
    pub build: BuildConfig,
    pub train: TrainConfig,
}

impl AblationSpec {
    /// Applies the variant's override to otherwise shared configs.
    pub fn new(variant: AblationVariant, base_build: &BuildConfig, base_train: &TrainConfig) -> Self {
        let mut build = base_build.clone();
        match variant {
            AblationVariant::Full => {}
            AblationVariant::NoContext => build.context_window = 0,
            AblationVariant::AddVideoDescription => build.include_video_description = true,
        }
        AblationSpec { variant, build, train: base_train.clone() }
    }

    pub fn standard(base_build: &BuildConfig, base_train: &TrainConfig) -> Vec<AblationSpec> {
        AblationVariant::ALL.iter().map(|&v| AblationSpec::new(v, base_build, base_train)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTag {
    pub dataset: Dataset,
    pub variant: AblationVariant,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantData {
    pub train: Vec<InstructionInstance>,
    pub test: Vec<InstructionInstance>,
    pub label_space: Vec<String>,
}

pub enum BuildOutcome {
    Ready(VariantData),
    /// The variant does not apply to this dataset; rendered as a dash.
    Skipped(String),
}

/// The three pipeline stages an ablation run drives.
pub trait PipelineHandles: Sync {
    fn build(&self, dataset: Dataset, cfg: &BuildConfig) -> Result<BuildOutcome, String>;
    fn train(&self, tag: RunTag, data: &[InstructionInstance], cfg: &TrainConfig) -> Result<CheckpointRef, String>;
    fn predict(&self, tag: RunTag, checkpoint: &CheckpointRef, data: &[InstructionInstance]) -> Result<Vec<Prediction>, String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dataset: Dataset,
    pub variant: AblationVariant,
    /// Absent when the variant was skipped for this dataset.
    pub report: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub datasets: Vec<Dataset>,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, dataset: Dataset, variant: AblationVariant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.dataset == dataset && r.variant == variant)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{dataset} / {variant}: {message}")]
pub struct AblationError {
    pub dataset: Dataset,
    pub variant: AblationVariant,
    pub message: String,
}

pub fn run_ablation(
    specs: &[AblationSpec],
    datasets: &[Dataset],
    seeds: &[u64],
    handles: &dyn PipelineHandles,
) -> Result<AblationReport, AblationError> {
    run_ablation_with(Execution::default(), specs, datasets, seeds, handles)
}

/// Builds, trains and scores every (dataset, variant) cell, once per seed.
/// Cells are independent and may run concurrently; rows come back in
/// dataset order, then [`AblationVariant::ALL`] order.
pub fn run_ablation_with(
    exec: Execution,
    specs: &[AblationSpec],
    datasets: &[Dataset],
    seeds: &[u64],
    handles: &dyn PipelineHandles,
) -> Result<AblationReport, AblationError> {
    let seeds: Vec<u64> = if seeds.is_empty() { specs.first().map(|s| vec![s.train.seed]).unwrap_or_default() } else { seeds.to_vec() };
    let mut cells: Vec<(Dataset, &AblationSpec)> =
        datasets.iter().flat_map(|&d| specs.iter().map(move |s| (d, s))).collect();
    cells.sort_by_key(|(d, s)| (datasets.iter().position(|x| x == d), s.variant));

    let rows = par::try_map(exec, &cells, |&(dataset, spec)| {
        let fail = |message: String| AblationError { dataset, variant: spec.variant, message };
        let data = match handles.build(dataset, &spec.build).map_err(fail)? {
            BuildOutcome::Skipped(reason) => {
                return Ok(AblationRow { dataset, variant: spec.variant, report: None, note: Some(reason) })
            }
            BuildOutcome::Ready(d) => d,
        };
        let gold = gold_records(&data.test);
        let mut reports = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            let tag = RunTag { dataset, variant: spec.variant, seed };
            let train_cfg = TrainConfig { seed, ..spec.train.clone() };
            let checkpoint = handles.train(tag, &data.train, &train_cfg).map_err(fail)?;
            let preds = handles.predict(tag, &checkpoint, &data.test).map_err(fail)?;
            let m = confusion_matrix(&preds, &gold, &data.label_space).map_err(|e| fail(e.to_string()))?;
            reports.push(EvalReport::from_confusion(dataset, m).map_err(|e| fail(e.to_string()))?);
        }
        let report = aggregate_seeds(&reports).map_err(|e| fail(e.to_string()))?;
        Ok(AblationRow { dataset, variant: spec.variant, report: Some(report), note: None })
    })?;
    Ok(AblationReport { datasets: datasets.to_vec(), seeds, rows })
}
