//! Canonical conversation model and corpus ingestion.
//!
//! Each supported release has its own parser module; [`parse_corpus`]
//! dispatches on [`Dataset`]. All parsers share the same text
//! canonicalization (NFC, trimmed) and the same rejection policy: rows with
//! empty text are counted in [`Corpus::rejected`], never silently dropped.

mod dailydialog;
mod emorynlp;
pub mod format;
mod iemocap;
mod meisd;
mod meld;
mod table;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::jsonl::{self, FileManifest, JsonlError};
use crate::labels::LabelConfig;
pub use format::FormatError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dataset {
    #[serde(rename = "MELD")]
    Meld,
    #[serde(rename = "IEMOCAP")]
    Iemocap,
    #[serde(rename = "EmoryNLP")]
    EmoryNlp,
    #[serde(rename = "DailyDialog")]
    DailyDialog,
    #[serde(rename = "MEISD")]
    Meisd,
}

impl Dataset {
    pub const ALL: [Dataset; 5] =
        [Dataset::Meld, Dataset::Iemocap, Dataset::EmoryNlp, Dataset::DailyDialog, Dataset::Meisd];

    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::Meld => "MELD",
            Dataset::Iemocap => "IEMOCAP",
            Dataset::EmoryNlp => "EmoryNLP",
            Dataset::DailyDialog => "DailyDialog",
            Dataset::Meisd => "MEISD",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dataset::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown dataset '{s}' (expected one of MELD, IEMOCAP, EmoryNLP, DailyDialog, MEISD)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split '{s}' (expected train, validation or test)")),
        }
    }
}

/// One speaker turn: the text modality, an optional opaque video reference
/// and its emotion label as written in the source and after normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub turn_index: usize,
    pub speaker: String,
    pub text: String,
    pub video_ref: Option<String>,
    pub raw_label: String,
    pub canonical_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub source_dataset: Dataset,
    pub split: Split,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    pub(crate) fn new(conversation_id: String, source_dataset: Dataset, split: Split) -> Self {
        Conversation { conversation_id, source_dataset, split, utterances: Vec::new() }
    }

    /// Appends an utterance with the next turn index.
    pub(crate) fn push(&mut self, speaker: String, text: String, raw_label: String, video_ref: Option<String>) {
        let turn_index = self.utterances.len();
        self.utterances.push(Utterance {
            turn_index,
            speaker,
            text,
            video_ref,
            raw_label,
            canonical_label: None,
        });
    }
}

/// A file read during ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// A source row that was not turned into an utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub file: String,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: Dataset,
    pub label_space: Vec<String>,
    pub conversations: Vec<Conversation>,
    pub provenance: Vec<SourceFile>,
    pub rejected: Vec<RejectedRow>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub conversations: usize,
    pub utterances: usize,
}

impl Corpus {
    pub fn utterance_count(&self) -> usize {
        self.conversations.iter().map(|c| c.utterances.len()).sum()
    }

    pub fn split_counts(&self) -> BTreeMap<Split, SplitCounts> {
        let mut out: BTreeMap<Split, SplitCounts> = Split::ALL.iter().map(|&s| (s, SplitCounts::default())).collect();
        for c in &self.conversations {
            let e = out.entry(c.split).or_default();
            e.conversations += 1;
            e.utterances += c.utterances.len();
        }
        out
    }

    pub fn conversations_in(&self, split: Split) -> impl Iterator<Item = &Conversation> {
        self.conversations.iter().filter(move |c| c.split == split)
    }

    /// A copy holding only the conversations of the given splits.
    pub fn only_splits(&self, splits: &[Split]) -> Corpus {
        Corpus {
            conversations: self.conversations.iter().filter(|c| splits.contains(&c.split)).cloned().collect(),
            ..self.clone()
        }
    }

    /// Orders conversations by split (train, validation, test), keeping source
    /// order within each split.
    pub(crate) fn group_by_split(&mut self) {
        self.conversations.sort_by_key(|c| c.split);
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("corpus root does not exist: {}", .0.display())]
    MissingRoot(PathBuf),
    #[error("{file}:{line}: malformed record: {reason}")]
    Malformed { file: String, line: usize, reason: String },
    #[error("empty corpus: no conversations found under {}", .0.display())]
    EmptyCorpus(PathBuf),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("canonical corpus file {} mixes datasets {first} and {other}", .path.display())]
    MixedDatasets { path: PathBuf, first: Dataset, other: Dataset },
    #[error("corpus statistics need at least one corpus")]
    NoCorpora,
    #[error("invalid carve-out fraction {0}; expected 0 <= fraction < 1")]
    BadFraction(f64),
}

/// Where a corpus lives and how its release is laid out.
#[derive(Debug, Clone)]
pub struct CorpusDescriptor {
    pub dataset: Dataset,
    pub root: PathBuf,
    /// Overrides merged over the shipped format manifest and any
    /// `format.toml` found in `root`.
    pub options: Option<toml::Table>,
}

impl CorpusDescriptor {
    pub fn new(dataset: Dataset, root: impl Into<PathBuf>) -> Self {
        CorpusDescriptor { dataset, root: root.into(), options: None }
    }
}

/// NFC-normalizes and trims a source string.
pub fn canonical_text(s: &str) -> String {
    let composed: String = s.nfc().collect();
    composed.trim().to_string()
}

/// Parses one corpus release into the canonical model.
///
/// The label space recorded on the result is the dataset's canonical space
/// from `labels`; `canonical_label` stays unset until normalization.
pub fn parse_corpus(desc: &CorpusDescriptor, labels: &LabelConfig) -> Result<Corpus, CorpusError> {
    if !desc.root.is_dir() {
        return Err(CorpusError::MissingRoot(desc.root.clone()));
    }
    let fmt = format::resolve(desc.dataset, &desc.root, desc.options.as_ref())?;
    let mut sink = ParseSink::new(&desc.root);
    let conversations = match fmt {
        format::Resolved::Meld(f) => meld::parse(&desc.root, &f, &mut sink)?,
        format::Resolved::EmoryNlp(f) => emorynlp::parse(&desc.root, &f, &mut sink)?,
        format::Resolved::Meisd(f) => meisd::parse(&desc.root, &f, &mut sink)?,
        format::Resolved::Iemocap(f) => iemocap::parse(&desc.root, &f, &mut sink)?,
        format::Resolved::DailyDialog(f) => dailydialog::parse(&desc.root, &f, &mut sink)?,
    };
    if conversations.is_empty() {
        return Err(CorpusError::EmptyCorpus(desc.root.clone()));
    }
    let mut corpus = Corpus {
        name: desc.dataset,
        label_space: labels.label_space(desc.dataset).to_vec(),
        conversations,
        provenance: sink.provenance,
        rejected: sink.rejected,
    };
    corpus.group_by_split();
    log::info!(
        "parsed {}: {} conversations, {} utterances, {} rows rejected",
        desc.dataset,
        corpus.conversations.len(),
        corpus.utterance_count(),
        corpus.rejected.len()
    );
    Ok(corpus)
}

/// Collects provenance and rejected rows while a parser runs.
pub(crate) struct ParseSink {
    root: PathBuf,
    pub provenance: Vec<SourceFile>,
    pub rejected: Vec<RejectedRow>,
}

impl ParseSink {
    fn new(root: &Path) -> Self {
        ParseSink { root: root.to_path_buf(), provenance: Vec::new(), rejected: Vec::new() }
    }

    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).to_string_lossy().replace('\\', "/")
    }

    /// Reads a required file and records its checksum.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, CorpusError> {
        if !path.is_file() {
            return Err(CorpusError::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
        self.provenance.push(SourceFile {
            path: self.relative(path),
            sha256: jsonl::sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(bytes)
    }

    pub fn reject(&mut self, file: &str, line: usize, reason: impl Into<String>) {
        self.rejected.push(RejectedRow { file: file.to_string(), line, reason: reason.into() });
    }
}

/// Decodes bytes as UTF-8, falling back to Latin-1 for legacy releases.
pub(crate) fn decode_text(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.trim_start_matches('\u{feff}').to_string(),
        Err(_) => bytes.iter().map(|&b| b as char).collect(),
    }
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DuplicateConversationId { conversation_id: String },
    EmptyConversation { conversation_id: String },
    DuplicateTurnIndex { conversation_id: String, turn_index: usize },
    NonContiguousTurns { conversation_id: String },
    UnorderedTurns { conversation_id: String },
    EmptyText { conversation_id: String, turn_index: usize },
    EmptySpeaker { conversation_id: String, turn_index: usize },
    LabelOutsideSpace { conversation_id: String, turn_index: usize, label: String },
    WrongDataset { conversation_id: String, found: Dataset },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateConversationId { conversation_id } => {
                write!(f, "{conversation_id}: duplicate conversation id")
            }
            Violation::EmptyConversation { conversation_id } => write!(f, "{conversation_id}: no utterances"),
            Violation::DuplicateTurnIndex { conversation_id, turn_index } => {
                write!(f, "{conversation_id}: turn_index {turn_index} appears more than once")
            }
            Violation::NonContiguousTurns { conversation_id } => {
                write!(f, "{conversation_id}: turn indices are not contiguous from 0")
            }
            Violation::UnorderedTurns { conversation_id } => {
                write!(f, "{conversation_id}: utterances are not ordered by turn_index")
            }
            Violation::EmptyText { conversation_id, turn_index } => {
                write!(f, "{conversation_id}#{turn_index}: empty text")
            }
            Violation::EmptySpeaker { conversation_id, turn_index } => {
                write!(f, "{conversation_id}#{turn_index}: empty speaker")
            }
            Violation::LabelOutsideSpace { conversation_id, turn_index, label } => {
                write!(f, "{conversation_id}#{turn_index}: label '{label}' is not in the label space")
            }
            Violation::WrongDataset { conversation_id, found } => {
                write!(f, "{conversation_id}: conversation belongs to {found}")
            }
        }
    }
}

/// Checks every structural invariant. An empty result means the corpus is valid.
pub fn validate_corpus(corpus: &Corpus) -> Vec<Violation> {
    let mut out = Vec::new();
    let space: HashSet<&str> = corpus.label_space.iter().map(String::as_str).collect();
    let mut seen_ids = HashSet::new();
    for conv in &corpus.conversations {
        let id = &conv.conversation_id;
        if !seen_ids.insert(id.as_str()) {
            out.push(Violation::DuplicateConversationId { conversation_id: id.clone() });
        }
        if conv.source_dataset != corpus.name {
            out.push(Violation::WrongDataset { conversation_id: id.clone(), found: conv.source_dataset });
        }
        if conv.utterances.is_empty() {
            out.push(Violation::EmptyConversation { conversation_id: id.clone() });
            continue;
        }

        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for u in &conv.utterances {
            *counts.entry(u.turn_index).or_default() += 1;
        }
        let duplicates: Vec<usize> = counts.iter().filter(|(_, &n)| n > 1).map(|(&t, _)| t).collect();
        if !duplicates.is_empty() {
            for turn_index in duplicates {
                out.push(Violation::DuplicateTurnIndex { conversation_id: id.clone(), turn_index });
            }
        } else if counts.keys().copied().ne(0..conv.utterances.len()) {
            out.push(Violation::NonContiguousTurns { conversation_id: id.clone() });
        } else if conv.utterances.windows(2).any(|w| w[0].turn_index > w[1].turn_index) {
            out.push(Violation::UnorderedTurns { conversation_id: id.clone() });
        }

        for u in &conv.utterances {
            if u.text.trim().is_empty() {
                out.push(Violation::EmptyText { conversation_id: id.clone(), turn_index: u.turn_index });
            }
            if u.speaker.trim().is_empty() {
                out.push(Violation::EmptySpeaker { conversation_id: id.clone(), turn_index: u.turn_index });
            }
            if let Some(label) = &u.canonical_label {
                if !space.contains(label.as_str()) {
                    out.push(Violation::LabelOutsideSpace {
                        conversation_id: id.clone(),
                        turn_index: u.turn_index,
                        label: label.clone(),
                    });
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Statistics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelShare {
    pub label: String,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub total: usize,
    /// Sorted by descending count, then label.
    pub per_label: Vec<LabelShare>,
    pub per_split: BTreeMap<Split, usize>,
    pub per_dataset: BTreeMap<Dataset, BTreeMap<Split, SplitCounts>>,
    pub rejected: usize,
}

impl DistributionReport {
    pub fn fraction(&self, label: &str) -> f64 {
        self.per_label.iter().find(|s| s.label == label).map_or(0.0, |s| s.fraction)
    }
}

/// Per-emotion counts and fractions over every utterance of `corpora`.
/// Utterances are keyed by canonical label when set, else by raw label.
pub fn corpus_stats(corpora: &[Corpus]) -> Result<DistributionReport, CorpusError> {
    if corpora.is_empty() {
        return Err(CorpusError::NoCorpora);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut per_split: BTreeMap<Split, usize> = BTreeMap::new();
    let mut per_dataset = BTreeMap::new();
    let mut total = 0usize;
    let mut rejected = 0usize;
    for corpus in corpora {
        rejected += corpus.rejected.len();
        per_dataset.insert(corpus.name, corpus.split_counts());
        for conv in &corpus.conversations {
            *per_split.entry(conv.split).or_default() += conv.utterances.len();
            for u in &conv.utterances {
                let key = u.canonical_label.as_deref().unwrap_or(&u.raw_label);
                *counts.entry(key.to_string()).or_default() += 1;
                total += 1;
            }
        }
    }
    let mut per_label: Vec<LabelShare> = counts
        .into_iter()
        .map(|(label, count)| LabelShare {
            fraction: if total == 0 { 0.0 } else { count as f64 / total as f64 },
            label,
            count,
        })
        .collect();
    per_label.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.label.cmp(&b.label)));
    Ok(DistributionReport { total, per_label, per_split, per_dataset, rejected })
}

// ---------------------------------------------------------------------------
// Train/validation carve-out

/// Moves a seed-determined `fraction` of the training conversations into the
/// validation split. Used for releases that ship no validation split
/// (IEMOCAP). Conversation order is otherwise preserved.
pub fn carve_validation(corpus: &Corpus, fraction: f64, seed: u64) -> Result<Corpus, CorpusError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(CorpusError::BadFraction(fraction));
    }
    let train: Vec<usize> = corpus
        .conversations
        .iter()
        .enumerate()
        .filter(|(_, c)| c.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    let take = (fraction * train.len() as f64).round() as usize;
    let mut shuffled = train.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let moved: HashSet<usize> = shuffled.into_iter().take(take).collect();

    let mut out = corpus.clone();
    for (i, conv) in out.conversations.iter_mut().enumerate() {
        if moved.contains(&i) {
            conv.split = Split::Validation;
        }
    }
    out.group_by_split();
    Ok(out)
}

// ---------------------------------------------------------------------------
// Canonical JSON Lines form

/// Writes one conversation per line.
pub fn write_corpus_jsonl(corpus: &Corpus, path: &Path) -> Result<FileManifest, CorpusError> {
    Ok(jsonl::write_atomic(&corpus.conversations, path)?)
}

/// Sidecar written next to a canonical corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub dataset: Dataset,
    pub label_space: Vec<String>,
    pub counts: BTreeMap<Split, SplitCounts>,
    pub provenance: Vec<SourceFile>,
    pub rejected: Vec<RejectedRow>,
    pub file: FileManifest,
}

pub fn manifest_path(corpus_path: &Path) -> PathBuf {
    let mut s = corpus_path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Writes the canonical JSON Lines file plus its manifest sidecar.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<CorpusManifest, CorpusError> {
    let file = write_corpus_jsonl(corpus, path)?;
    let manifest = CorpusManifest {
        dataset: corpus.name,
        label_space: corpus.label_space.clone(),
        counts: corpus.split_counts(),
        provenance: corpus.provenance.clone(),
        rejected: corpus.rejected.clone(),
        file,
    };
    jsonl::write_json(&manifest, &manifest_path(path))?;
    Ok(manifest)
}

/// Loads a canonical corpus file. Label space, provenance and rejected rows
/// come from the manifest sidecar when present, otherwise the label space is
/// taken from `labels`.
pub fn load_corpus(path: &Path, labels: &LabelConfig) -> Result<Corpus, CorpusError> {
    let conversations: Vec<Conversation> = jsonl::read(path)?;
    let sidecar = manifest_path(path);
    let manifest: Option<CorpusManifest> = if sidecar.is_file() {
        let bytes = std::fs::read(&sidecar).map_err(|source| CorpusError::Io { path: sidecar.clone(), source })?;
        Some(serde_json::from_slice(&bytes).map_err(JsonlError::from)?)
    } else {
        None
    };
    let name = match (conversations.first(), &manifest) {
        (Some(c), _) => c.source_dataset,
        (None, Some(m)) => m.dataset,
        (None, None) => return Err(CorpusError::EmptyCorpus(path.to_path_buf())),
    };
    if let Some(other) = conversations.iter().map(|c| c.source_dataset).find(|&d| d != name) {
        return Err(CorpusError::MixedDatasets { path: path.to_path_buf(), first: name, other });
    }
    Ok(match manifest {
        Some(m) => Corpus {
            name,
            label_space: m.label_space,
            conversations,
            provenance: m.provenance,
            rejected: m.rejected,
        },
        None => Corpus {
            name,
            label_space: labels.label_space(name).to_vec(),
            conversations,
            provenance: Vec::new(),
            rejected: Vec::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(turn_index: usize, label: &str) -> Utterance {
        Utterance {
            turn_index,
            speaker: "A".into(),
            text: "hello".into(),
            video_ref: None,
            raw_label: label.into(),
            canonical_label: Some(label.into()),
        }
    }

    fn corpus(convs: Vec<Vec<Utterance>>) -> Corpus {
        Corpus {
            name: Dataset::Meld,
            label_space: vec!["neutral".into(), "anger".into()],
            conversations: convs
                .into_iter()
                .enumerate()
                .map(|(i, utterances)| Conversation {
                    conversation_id: format!("c{i}"),
                    source_dataset: Dataset::Meld,
                    split: Split::Train,
                    utterances,
                })
                .collect(),
            provenance: vec![],
            rejected: vec![],
        }
    }

    #[test]
    fn clean_corpus_has_no_violations() {
        let c = corpus(vec![vec![utt(0, "neutral"), utt(1, "anger")]]);
        assert!(validate_corpus(&c).is_empty());
    }

    #[test]
    fn duplicated_turn_is_one_violation() {
        let c = corpus(vec![vec![utt(0, "neutral"), utt(1, "neutral"), utt(1, "anger"), utt(2, "anger")]]);
        let v = validate_corpus(&c);
        assert_eq!(v, vec![Violation::DuplicateTurnIndex { conversation_id: "c0".into(), turn_index: 1 }]);
    }

    #[test]
    fn gap_and_disorder_are_reported() {
        let gap = corpus(vec![vec![utt(0, "neutral"), utt(2, "neutral")]]);
        assert_eq!(validate_corpus(&gap), vec![Violation::NonContiguousTurns { conversation_id: "c0".into() }]);
        let swapped = corpus(vec![vec![utt(1, "neutral"), utt(0, "neutral")]]);
        assert_eq!(validate_corpus(&swapped), vec![Violation::UnorderedTurns { conversation_id: "c0".into() }]);
    }

    #[test]
    fn every_out_of_space_label_is_reported() {
        for n in 0..5 {
            let mut utts: Vec<Utterance> = (0..6).map(|i| utt(i, "neutral")).collect();
            for u in utts.iter_mut().take(n) {
                u.canonical_label = Some("confuzzled".into());
            }
            let v = validate_corpus(&corpus(vec![utts]));
            assert_eq!(v.len(), n);
            assert!(v.iter().all(|x| matches!(x, Violation::LabelOutsideSpace { .. })));
        }
    }

    #[test]
    fn stats_single_label() {
        let c = corpus(vec![vec![utt(0, "neutral"), utt(1, "neutral")], vec![utt(0, "neutral")]]);
        let r = corpus_stats(&[c]).unwrap();
        assert_eq!(r.total, 3);
        assert_eq!(r.fraction("neutral"), 1.0);
        assert!(corpus_stats(&[]).is_err());
    }

    #[test]
    fn stats_known_mixture() {
        // 5 anger, 3 neutral, 2 fear across two corpora.
        let mut a: Vec<Utterance> = (0..5).map(|i| utt(i, "anger")).collect();
        a.extend((5..8).map(|i| utt(i, "neutral")));
        let b: Vec<Utterance> = (0..2).map(|i| utt(i, "fear")).collect();
        let r = corpus_stats(&[corpus(vec![a]), corpus(vec![b])]).unwrap();
        assert_eq!(r.total, 10);
        assert_eq!(r.fraction("anger"), 0.5);
        assert_eq!(r.fraction("neutral"), 0.3);
        assert_eq!(r.fraction("fear"), 0.2);
        assert_eq!(r.per_label[0].label, "anger");
        let sum: f64 = r.per_label.iter().map(|s| s.fraction).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn carve_out_is_seeded_and_conserves_conversations() {
        let c = corpus((0..20).map(|_| vec![utt(0, "neutral")]).collect());
        let a = carve_validation(&c, 0.25, 7).unwrap();
        let b = carve_validation(&c, 0.25, 7).unwrap();
        assert_eq!(a, b);
        let counts = a.split_counts();
        assert_eq!(counts[&Split::Validation].conversations, 5);
        assert_eq!(counts[&Split::Train].conversations, 15);
        assert!(a.conversations.iter().take(15).all(|c| c.split == Split::Train));
        assert!(carve_validation(&c, 1.0, 0).is_err());
    }

    #[test]
    fn canonical_text_composes_and_trims() {
        assert_eq!(canonical_text("  Cafe\u{301} \n"), "Caf\u{e9}");
    }
}
