//! Per-release layout descriptions, loaded from the shipped format manifest.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use super::{Dataset, Split};

/// The format manifest shipped with the crate.
pub const DEFAULT_MANIFEST: &str = include_str!("../../config/formats.toml");

/// File name looked up in a corpus root for per-root overrides.
pub const ROOT_OVERRIDE_FILE: &str = "format.toml";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("format manifest: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{path}: {message}")]
    Override { path: String, message: String },
    #[error("format manifest has no section for {0}")]
    MissingSection(Dataset),
    #[error("{dataset}: {message}")]
    Invalid { dataset: Dataset, message: String },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitMap<T> {
    pub train: Option<T>,
    pub validation: Option<T>,
    pub test: Option<T>,
}

impl<T> SplitMap<T> {
    pub fn get(&self, split: Split) -> Option<&T> {
        match split {
            Split::Train => self.train.as_ref(),
            Split::Validation => self.validation.as_ref(),
            Split::Test => self.test.as_ref(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Split, &T)> {
        Split::ALL.into_iter().filter_map(move |s| self.get(s).map(|v| (s, v)))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeldColumns {
    pub text: String,
    pub speaker: String,
    pub label: String,
    pub dialogue: String,
    pub utterance: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeldFormat {
    pub delimiter: String,
    pub files: SplitMap<String>,
    pub columns: MeldColumns,
    #[serde(default)]
    pub video_dirs: Option<SplitMap<String>>,
    pub video_ext: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmoryColumns {
    pub text: String,
    pub speaker: String,
    pub label: String,
    pub season: String,
    pub episode: String,
    pub scene: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmoryFormat {
    pub delimiter: String,
    pub files: SplitMap<String>,
    pub columns: EmoryColumns,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeisdColumns {
    pub text: String,
    pub speaker: String,
    pub label: String,
    pub series: String,
    pub dialogue: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeisdFormat {
    pub delimiter: String,
    pub files: SplitMap<String>,
    pub columns: MeisdColumns,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IemocapFormat {
    pub session_prefix: String,
    pub test_sessions: Vec<String>,
    pub transcriptions: String,
    pub evaluations: String,
    #[serde(default)]
    pub skip_labels: Vec<String>,
    #[serde(default)]
    pub video_dir: Option<String>,
    pub video_ext: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueFiles {
    pub text: String,
    pub labels: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DailyDialogFormat {
    pub turn_delimiter: String,
    pub speakers: Vec<String>,
    pub files: SplitMap<DialogueFiles>,
}

#[derive(Debug, Clone)]
pub enum Resolved {
    Meld(MeldFormat),
    EmoryNlp(EmoryFormat),
    Meisd(MeisdFormat),
    Iemocap(IemocapFormat),
    DailyDialog(DailyDialogFormat),
}

/// Merges `overlay` into `base`, recursing into nested tables.
fn merge(base: &mut toml::Table, overlay: &toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn section(dataset: Dataset, table: &toml::Table) -> Option<toml::Table> {
    match table.get(dataset.as_str()) {
        Some(toml::Value::Table(t)) => Some(t.clone()),
        _ => None,
    }
}

fn typed<T: DeserializeOwned>(dataset: Dataset, table: toml::Table) -> Result<T, FormatError> {
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| FormatError::Invalid { dataset, message: e.to_string() })
}

fn check_delimiter(dataset: Dataset, d: &str) -> Result<(), FormatError> {
    if d.len() != 1 {
        return Err(FormatError::Invalid { dataset, message: format!("delimiter must be one byte, got {d:?}") });
    }
    Ok(())
}

/// Builds the effective format for `dataset` rooted at `root`.
pub fn resolve(dataset: Dataset, root: &Path, overrides: Option<&toml::Table>) -> Result<Resolved, FormatError> {
    let manifest: toml::Table = toml::from_str(DEFAULT_MANIFEST)?;
    let mut table = section(dataset, &manifest).ok_or(FormatError::MissingSection(dataset))?;

    let local = root.join(ROOT_OVERRIDE_FILE);
    if local.is_file() {
        let text = std::fs::read_to_string(&local).map_err(|e| FormatError::Override {
            path: local.display().to_string(),
            message: e.to_string(),
        })?;
        let parsed: toml::Table = toml::from_str(&text).map_err(|e| FormatError::Override {
            path: local.display().to_string(),
            message: e.to_string(),
        })?;
        if let Some(t) = section(dataset, &parsed) {
            merge(&mut table, &t);
        }
    }
    if let Some(o) = overrides {
        merge(&mut table, o);
    }

    Ok(match dataset {
        Dataset::Meld => {
            let f: MeldFormat = typed(dataset, table)?;
            check_delimiter(dataset, &f.delimiter)?;
            Resolved::Meld(f)
        }
        Dataset::EmoryNlp => {
            let f: EmoryFormat = typed(dataset, table)?;
            check_delimiter(dataset, &f.delimiter)?;
            Resolved::EmoryNlp(f)
        }
        Dataset::Meisd => {
            let f: MeisdFormat = typed(dataset, table)?;
            check_delimiter(dataset, &f.delimiter)?;
            Resolved::Meisd(f)
        }
        Dataset::Iemocap => Resolved::Iemocap(typed(dataset, table)?),
        Dataset::DailyDialog => {
            let f: DailyDialogFormat = typed(dataset, table)?;
            if f.speakers.is_empty() {
                return Err(FormatError::Invalid { dataset, message: "speakers must not be empty".into() });
            }
            Resolved::DailyDialog(f)
        }
    })
}
