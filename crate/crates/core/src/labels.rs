//! Raw-to-canonical emotion label normalization.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dataset};

/// The label configuration shipped with the crate.
pub const DEFAULT_LABELS: &str = include_str!("../config/labels.toml");

#[derive(Debug, thiserror::Error)]
pub enum LabelError {
    #[error("label config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("label config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("label config: {0}")]
    Config(String),
    #[error("{dataset}: no canonical label for raw label '{raw}'")]
    Unmapped { dataset: String, raw: String },
    #[error("{dataset} {conversation_id}#{turn_index}: no canonical label for raw label '{raw}'")]
    UnmappedAt { dataset: Dataset, conversation_id: String, turn_index: usize, raw: String },
    #[error("{dataset}: mapping '{raw}' -> '{target}' leaves the canonical set")]
    TargetOutsideSet { dataset: String, raw: String, target: String },
    #[error("{dataset}: canonical label '{label}' maps to '{target}', breaking idempotence")]
    NotIdempotent { dataset: String, label: String, target: String },
    #[error("{dataset}: label map is not total; unmapped raw labels: {missing:?}")]
    NotTotal { dataset: String, missing: Vec<String> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceSection {
    label_space: Vec<String>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetLabels {
    pub label_space: Vec<String>,
    #[serde(default)]
    pub raw_labels: Vec<String>,
    #[serde(default)]
    pub synonyms: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    unified: SpaceSection,
    #[serde(default)]
    synonyms: BTreeMap<String, String>,
    #[serde(default)]
    datasets: BTreeMap<String, DatasetLabels>,
}

/// Label spaces and synonym tables for every dataset.
#[derive(Debug, Clone)]
pub struct LabelConfig {
    unified: Vec<String>,
    synonyms: BTreeMap<String, String>,
    datasets: BTreeMap<Dataset, DatasetLabels>,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig::from_toml_str(DEFAULT_LABELS).expect("shipped label config is valid")
    }
}

impl LabelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, LabelError> {
        let raw: RawConfig = toml::from_str(text)?;
        let mut datasets = BTreeMap::new();
        for (name, labels) in raw.datasets {
            let dataset = Dataset::from_str(&name).map_err(LabelError::Config)?;
            if labels.label_space.is_empty() {
                return Err(LabelError::Config(format!("{dataset}: empty label_space")));
            }
            datasets.insert(dataset, labels);
        }
        if raw.unified.label_space.is_empty() {
            return Err(LabelError::Config("unified label_space is empty".into()));
        }
        let config = LabelConfig { unified: raw.unified.label_space, synonyms: raw.synonyms, datasets };
        for d in config.datasets.keys() {
            config.label_map(*d)?;
        }
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self, LabelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| LabelError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    /// The unified seven-emotion space, in instruction order.
    pub fn unified_space(&self) -> &[String] {
        &self.unified
    }

    /// Canonical label space of `dataset`, in instruction order. Falls back to
    /// the unified space for datasets the config does not list.
    pub fn label_space(&self, dataset: Dataset) -> &[String] {
        self.datasets.get(&dataset).map_or(&self.unified, |d| &d.label_space)
    }

    pub fn dataset(&self, dataset: Dataset) -> Option<&DatasetLabels> {
        self.datasets.get(&dataset)
    }

    /// The label map for `dataset`, checked for totality over the dataset's
    /// declared raw inventory.
    pub fn label_map(&self, dataset: Dataset) -> Result<LabelMap, LabelError> {
        let space = self.label_space(dataset).to_vec();
        let in_space: HashSet<&str> = space.iter().map(String::as_str).collect();
        let mut entries: BTreeMap<String, String> = self
            .synonyms
            .iter()
            .filter(|(_, target)| in_space.contains(target.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        if let Some(d) = self.datasets.get(&dataset) {
            entries.extend(d.synonyms.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
        let map = LabelMap::new(dataset.as_str(), space, entries)?;
        if let Some(d) = self.datasets.get(&dataset) {
            map.check_total(&d.raw_labels)?;
        }
        Ok(map)
    }
}

/// Case-insensitive mapping from raw labels to a canonical label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    name: String,
    entries: BTreeMap<String, String>,
    canonical: Vec<String>,
}

fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

impl LabelMap {
    /// Builds a map over `canonical`. Identity entries for every canonical
    /// label are added; an explicit entry that remaps a canonical label to a
    /// different one is rejected.
    pub fn new(
        name: impl Into<String>,
        canonical: Vec<String>,
        entries: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, LabelError> {
        let name = name.into();
        let set: HashSet<&str> = canonical.iter().map(String::as_str).collect();
        let mut map = BTreeMap::new();
        for (raw, target) in entries {
            if !set.contains(target.as_str()) {
                return Err(LabelError::TargetOutsideSet { dataset: name, raw, target });
            }
            map.insert(fold(&raw), target);
        }
        for label in &canonical {
            match map.get(&fold(label)) {
                Some(t) if t != label => {
                    return Err(LabelError::NotIdempotent { dataset: name, label: label.clone(), target: t.clone() });
                }
                _ => {
                    map.insert(fold(label), label.clone());
                }
            }
        }
        Ok(LabelMap { name, entries: map, canonical })
    }

    pub fn canonical_set(&self) -> &[String] {
        &self.canonical
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn normalize(&self, raw: &str) -> Result<&str, LabelError> {
        self.entries
            .get(&fold(raw))
            .map(String::as_str)
            .ok_or_else(|| LabelError::Unmapped { dataset: self.name.clone(), raw: raw.to_string() })
    }

    pub fn check_total(&self, raw_inventory: &[String]) -> Result<(), LabelError> {
        let missing: Vec<String> =
            raw_inventory.iter().filter(|r| !self.entries.contains_key(&fold(r))).cloned().collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(LabelError::NotTotal { dataset: self.name.clone(), missing })
        }
    }
}

/// Normalizes one raw label.
pub fn normalize_label<'m>(raw: &str, map: &'m LabelMap) -> Result<&'m str, LabelError> {
    map.normalize(raw)
}

/// Sets `canonical_label` on every utterance and replaces the label space with
/// the map's canonical set. Nothing else changes.
pub fn normalize_corpus(corpus: &Corpus, map: &LabelMap) -> Result<Corpus, LabelError> {
    let mut out = corpus.clone();
    for conv in &mut out.conversations {
        for u in &mut conv.utterances {
            let label = map.normalize(&u.raw_label).map_err(|_| LabelError::UnmappedAt {
                dataset: corpus.name,
                conversation_id: conv.conversation_id.clone(),
                turn_index: u.turn_index,
                raw: u.raw_label.clone(),
            })?;
            u.canonical_label = Some(label.to_string());
        }
    }
    out.label_space = map.canonical_set().to_vec();
    Ok(out)
}
