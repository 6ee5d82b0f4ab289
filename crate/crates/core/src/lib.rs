//! Emotion-recognition-in-conversation (ERC) instruction pipeline.
//!
//! The crate turns multi-party dialogue corpora into instruction-tuning
//! records, drives low-rank adapter fine-tuning through a pluggable trainer
//! backend, parses free-text generations back into emotion labels and scores
//! them with accuracy and weighted-F1.
//!
//! Stages, in pipeline order:
//!
//! * [`corpus`]: parse MELD, IEMOCAP, EmoryNLP, DailyDialog and MEISD releases
//!   into one canonical [`corpus::Corpus`] model.
//! * [`labels`] and [`enrich`]: normalize raw emotion labels and attach video
//!   descriptions from a vision-language service.
//! * [`instruction`]: assemble instruction / video description / context /
//!   input / output records.
//! * [`train`]: the fine-tuning configuration, cosine schedule and backends.
//! * [`inference`]: generation backends and label parsing.
//! * [`eval`]: metrics, multi-seed aggregation and the ablation harness.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iterators otherwise.

pub mod corpus;
pub mod enrich;
pub mod eval;
pub mod inference;
pub mod instruction;
pub mod jsonl;
pub mod labels;
pub mod par;
pub mod pipeline;
pub mod train;

mod http;

pub use corpus::{Conversation, Corpus, Dataset, Split, Utterance};
pub use instruction::{BuildConfig, InstructionInstance};
pub use labels::{LabelConfig, LabelMap};
pub use train::TrainConfig;
