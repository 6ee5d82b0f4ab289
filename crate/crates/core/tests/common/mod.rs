#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use ercpipe::corpus::{Corpus, Dataset, Split};
use ercpipe::inference::{ParseStatus, Prediction};
use ercpipe::instruction::{GoldRecord, InstanceMeta};
use ercpipe::pipeline::{ingest, CorpusEntry};
use ercpipe::LabelConfig;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn mini_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mini")
}

pub fn dir_name(d: Dataset) -> String {
    d.as_str().to_lowercase()
}

pub fn ingest_from(root: &std::path::Path, d: Dataset) -> Corpus {
    let entry = CorpusEntry { dataset: d, root: root.join(dir_name(d)), options: None, validation_fraction: None };
    ingest(&entry, &LabelConfig::default(), 0).unwrap_or_else(|e| panic!("{d}: {e}"))
}

pub fn meta(i: usize) -> InstanceMeta {
    InstanceMeta { source_dataset: Dataset::Meld, conversation_id: format!("c{}", i / 4), turn_index: i % 4, split: Split::Test }
}

/// Prediction and gold records for parallel label lists.
pub fn records(gold: &[String], pred: &[Option<String>]) -> (Vec<Prediction>, Vec<GoldRecord>) {
    let preds = pred
        .iter()
        .enumerate()
        .map(|(i, p)| Prediction {
            meta: meta(i),
            generation: p.clone().unwrap_or_default(),
            parsed_label: p.clone(),
            parse_status: if p.is_some() { ParseStatus::Exact } else { ParseStatus::Unparsed },
            diagnostic: None,
        })
        .collect();
    let gold = gold.iter().enumerate().map(|(i, g)| GoldRecord { meta: meta(i), label: g.clone() }).collect();
    (preds, gold)
}

/// Straight-from-the-definition accuracy and support-weighted F1, by
/// counting over the raw pairs with no matrix.
pub fn oracle(gold: &[String], pred: &[Option<String>]) -> (f64, f64) {
    let n = gold.len() as f64;
    let hits = gold.iter().zip(pred).filter(|(g, p)| p.as_deref() == Some(g.as_str())).count();
    let classes: BTreeSet<&String> = gold.iter().collect();
    let mut wf1 = 0.0;
    for c in classes {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fneg = 0.0;
        for (g, p) in gold.iter().zip(pred) {
            let said = p.as_ref() == Some(c);
            let is = g == c;
            if said && is {
                tp += 1.0;
            } else if said {
                fp += 1.0;
            } else if is {
                fneg += 1.0;
            }
        }
        let support = tp + fneg;
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) };
        wf1 += support / n * f1;
    }
    (hits as f64 / n, wf1)
}
