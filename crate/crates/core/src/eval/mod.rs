//! Accuracy, weighted-F1, multi-seed aggregation and the ablation harness.

mod ablation;
mod report;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::instruction::{GoldRecord, InstanceMeta};
use crate::inference::Prediction;
use crate::labels::LabelConfig;
pub use ablation::{
    run_ablation, run_ablation_with, AblationReport, AblationRow, AblationSpec, AblationVariant, BuildOutcome,
    PipelineHandles, RunTag, VariantData,
};
pub use report::{render_ablation, render_reports};

/// Column used for generations that named no label.
pub const UNPARSED: &str = "<unparsed>";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("no samples to score")]
    Empty,
    #[error("{preds} predictions but {gold} gold labels")]
    LengthMismatch { preds: usize, gold: usize },
    #[error("prediction for {0:?} has no gold label")]
    MissingGold(InstanceMeta),
    #[error("{0:?} appears twice")]
    Duplicate(InstanceMeta),
    #[error("cannot aggregate reports for different datasets ({0} and {1})")]
    DatasetMismatch(Dataset, Dataset),
}

/// Counts of gold class (rows) against predicted class (columns). The last
/// column counts unparsed predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `labels.len()` rows of `labels.len() + 1` columns.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let k = labels.len();
        ConfusionMatrix { labels, counts: vec![vec![0; k + 1]; k] }
    }

    /// Builds a matrix over `label_space`, appending any other label seen in
    /// the pairs in sorted order.
    pub fn from_pairs<'a>(
        label_space: &[String],
        pairs: impl IntoIterator<Item = (&'a str, Option<&'a str>)> + Clone,
    ) -> Self {
        let mut labels = label_space.to_vec();
        let mut extra: Vec<&str> = pairs
            .clone()
            .into_iter()
            .flat_map(|(g, p)| std::iter::once(g).chain(p))
            .filter(|l| !label_space.iter().any(|s| s == l))
            .collect();
        extra.sort_unstable();
        extra.dedup();
        labels.extend(extra.into_iter().map(str::to_string));
        let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut m = ConfusionMatrix::new(labels.clone());
        let unparsed = labels.len();
        for (g, p) in pairs {
            let col = p.map_or(unparsed, |p| index[p]);
            m.counts[index[g]][col] += 1;
        }
        m
    }

    pub fn n(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn get(&self, gold: &str, pred: Option<&str>) -> u64 {
        let Some(g) = self.labels.iter().position(|l| l == gold) else { return 0 };
        let col = match pred {
            None => self.labels.len(),
            Some(p) => match self.labels.iter().position(|l| l == p) {
                Some(c) => c,
                None => return 0,
            },
        };
        self.counts[g][col]
    }

    /// Element-wise sum; both matrices must share the same label order.
    fn add(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Joins predictions to gold labels by instance key.
pub fn confusion_matrix(
    preds: &[Prediction],
    gold: &[GoldRecord],
    label_space: &[String],
) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != gold.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), gold: gold.len() });
    }
    let mut by_key: HashMap<&InstanceMeta, &str> = HashMap::with_capacity(gold.len());
    for g in gold {
        if by_key.insert(&g.meta, &g.label).is_some() {
            return Err(EvalError::Duplicate(g.meta.clone()));
        }
    }
    let mut seen = std::collections::HashSet::with_capacity(preds.len());
    let mut pairs = Vec::with_capacity(preds.len());
    for p in preds {
        let g = by_key.get(&p.meta).ok_or_else(|| EvalError::MissingGold(p.meta.clone()))?;
        if !seen.insert(&p.meta) {
            return Err(EvalError::Duplicate(p.meta.clone()));
        }
        pairs.push((*g, p.parsed_label.as_deref()));
    }
    Ok(ConfusionMatrix::from_pairs(label_space, pairs))
}

pub fn accuracy(m: &ConfusionMatrix) -> Result<f64, EvalError> {
    let n = m.n();
    if n == 0 {
        return Err(EvalError::Empty);
    }
    Ok(m.trace() as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Precision, recall and F1 per class. A ratio with a zero denominator is 0.
pub fn per_class(m: &ConfusionMatrix) -> Vec<ClassStats> {
    (0..m.labels.len())
        .map(|c| {
            let tp = m.counts[c][c] as f64;
            let support = m.support(c);
            let predicted = m.predicted(c);
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { tp / support as f64 };
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            ClassStats { label: m.labels[c].clone(), precision, recall, f1, support }
        })
        .collect()
}

/// F1 averaged over classes, weighted by gold support.
pub fn weighted_f1(m: &ConfusionMatrix) -> Result<f64, EvalError> {
    let n = m.n();
    if n == 0 {
        return Err(EvalError::Empty);
    }
    let weighted: f64 = per_class(m).iter().map(|s| s.support as f64 * s.f1).sum();
    Ok(weighted / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub accuracy: f64,
    pub weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: Dataset,
    pub n: u64,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassStats>,
    pub accuracy: f64,
    pub weighted_f1: f64,
    /// One entry per run; a single-run report lists itself.
    pub seeds: Vec<SeedScore>,
}

impl EvalReport {
    pub fn from_confusion(dataset: Dataset, confusion: ConfusionMatrix) -> Result<Self, EvalError> {
        let accuracy = accuracy(&confusion)?;
        let weighted_f1 = weighted_f1(&confusion)?;
        Ok(EvalReport {
            dataset,
            n: confusion.n(),
            per_class: per_class(&confusion),
            confusion,
            accuracy,
            weighted_f1,
            seeds: vec![SeedScore { accuracy, weighted_f1 }],
        })
    }
}

/// Scores predictions per dataset, using each dataset's configured label
/// order for the matrix.
pub fn evaluate(preds: &[Prediction], gold: &[GoldRecord], labels: &LabelConfig) -> Result<Vec<EvalReport>, EvalError> {
    if preds.len() != gold.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), gold: gold.len() });
    }
    if gold.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut p_by: BTreeMap<Dataset, Vec<Prediction>> = BTreeMap::new();
    let mut g_by: BTreeMap<Dataset, Vec<GoldRecord>> = BTreeMap::new();
    for p in preds {
        p_by.entry(p.meta.source_dataset).or_default().push(p.clone());
    }
    for g in gold {
        g_by.entry(g.meta.source_dataset).or_default().push(g.clone());
    }
    let mut out = Vec::new();
    for (dataset, gold) in g_by {
        let preds = p_by.remove(&dataset).unwrap_or_default();
        let m = confusion_matrix(&preds, &gold, labels.label_space(dataset))?;
        out.push(EvalReport::from_confusion(dataset, m)?);
    }
    if let Some((_, stray)) = p_by.into_iter().next() {
        return Err(EvalError::MissingGold(stray[0].meta.clone()));
    }
    Ok(out)
}

/// Mean accuracy and weighted-F1 over runs. The confusion matrix and
/// per-class figures of the result are pooled over all runs.
pub fn aggregate_seeds(reports: &[EvalReport]) -> Result<EvalReport, EvalError> {
    let first = reports.first().ok_or(EvalError::Empty)?;
    let mut labels = first.confusion.labels.clone();
    for r in reports {
        if r.dataset != first.dataset {
            return Err(EvalError::DatasetMismatch(first.dataset, r.dataset));
        }
        for l in &r.confusion.labels {
            if !labels.contains(l) {
                labels.push(l.clone());
            }
        }
    }
    let mut pooled = ConfusionMatrix::new(labels.clone());
    for r in reports {
        let mut aligned = ConfusionMatrix::new(labels.clone());
        let k = r.confusion.labels.len();
        for (gi, g) in r.confusion.labels.iter().enumerate() {
            let row = labels.iter().position(|l| l == g).expect("label merged");
            for pi in 0..=k {
                let col = if pi == k { labels.len() } else { labels.iter().position(|l| *l == r.confusion.labels[pi]).expect("label merged") };
                aligned.counts[row][col] += r.confusion.counts[gi][pi];
            }
        }
        pooled.add(&aligned);
    }
    let seeds: Vec<SeedScore> = reports.iter().flat_map(|r| r.seeds.clone()).collect();
    let count = seeds.len() as f64;
    Ok(EvalReport {
        dataset: first.dataset,
        n: pooled.n(),
        per_class: per_class(&pooled),
        confusion: pooled,
        accuracy: seeds.iter().map(|s| s.accuracy).sum::<f64>() / count,
        weighted_f1: seeds.iter().map(|s| s.weighted_f1).sum::<f64>() / count,
        seeds,
    })
}
