//! Video description enrichment.
//!
//! Frames are sampled from each utterance's clip, sent with a fixed prompt to
//! a [`DescriptionClient`], and the answer is cached per utterance. The
//! prompt text and its version live in this module; bumping the version
//! invalidates cached descriptions because the version is part of the hash.

pub mod cache;
pub mod client;
pub mod frames;
pub mod limiter;

use std::fmt;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dataset};
use crate::par;
pub use cache::{cache_hash, CacheError, CacheRecord, DescriptionCache};
pub use client::{DescriptionClient, HttpDescriptionClient, ServiceConfig, ServiceError, StubClient};
pub use frames::{extract_frames, select_frames, Frame, FrameError};
pub use limiter::{RateLimiter, RetryPolicy};

pub const PROMPT_TEMPLATE_VERSION: &str = "v1";

pub const DESCRIPTION_PROMPT: &str = "The images are frames sampled in order from one short video clip of a \
conversation. Describe the scene in two or three sentences: who is visible, their facial expressions, gestures \
and body language, and the emotional atmosphere between the people. Do not guess names and do not transcribe \
speech.";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DescriptionKey {
    pub source_dataset: Dataset,
    pub conversation_id: String,
    pub turn_index: usize,
}

impl fmt::Display for DescriptionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}#{}", self.source_dataset, self.conversation_id, self.turn_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoDescription {
    pub key: DescriptionKey,
    pub description: String,
    pub provider_id: String,
    pub frame_count: usize,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub version: String,
    pub text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate { version: PROMPT_TEMPLATE_VERSION.into(), text: DESCRIPTION_PROMPT.into() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EnrichError {
    #[error("no frames to describe for {0}")]
    NoFrames(DescriptionKey),
    #[error("{key}: description service failed after {attempts} attempt(s): {message}")]
    Service { key: DescriptionKey, attempts: u32, message: String },
    #[error("{0}: description service returned an empty description")]
    EmptyResponse(DescriptionKey),
    #[error(transparent)]
    Frames(#[from] FrameError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

#[derive(Default)]
pub struct DescribeOptions<'a> {
    pub retry: RetryPolicy,
    pub template: PromptTemplate,
    pub limiter: Option<&'a RateLimiter>,
}

/// Returns the description for `key`, asking the service only on a cache miss.
///
/// Concurrent callers asking for the same key wait for the first one, so the
/// service sees at most one request sequence per key.
pub fn describe_video(
    frames: &[Frame],
    client: &dyn DescriptionClient,
    cache: &DescriptionCache,
    key: &DescriptionKey,
    opts: &DescribeOptions<'_>,
) -> Result<VideoDescription, EnrichError> {
    let hash = cache_hash(key, client.provider_id(), &opts.template.version);
    if let Some(hit) = cache.get(&hash) {
        return Ok(hit);
    }
    if frames.is_empty() {
        return Err(EnrichError::NoFrames(key.clone()));
    }
    if !cache.claim(&hash) {
        return cache.get(&hash).ok_or_else(|| EnrichError::NoFrames(key.clone()));
    }
    let result = fetch_and_store(frames, client, cache, key, &hash, opts);
    cache.release(&hash);
    result
}

fn fetch_and_store(
    frames: &[Frame],
    client: &dyn DescriptionClient,
    cache: &DescriptionCache,
    key: &DescriptionKey,
    hash: &str,
    opts: &DescribeOptions<'_>,
) -> Result<VideoDescription, EnrichError> {
    let mut attempt = 0u32;
    let text = loop {
        attempt += 1;
        let outcome = {
            let _permit = opts.limiter.map(|l| l.acquire());
            client.describe(frames, &opts.template.text)
        };
        match outcome {
            Ok(text) => break text,
            Err(e) if e.retryable && attempt <= opts.retry.max_retries => {
                let delay = opts.retry.backoff(attempt - 1);
                log::warn!("{key}: attempt {attempt} failed ({e}); retrying in {delay:?}");
                std::thread::sleep(delay);
            }
            Err(e) => {
                return Err(EnrichError::Service { key: key.clone(), attempts: attempt, message: e.message });
            }
        }
    };
    let description = text.trim().to_string();
    if description.is_empty() {
        return Err(EnrichError::EmptyResponse(key.clone()));
    }
    let record = CacheRecord {
        key: key.clone(),
        description,
        provider_id: client.provider_id().to_string(),
        frame_count: frames.len(),
        created_at: Utc::now(),
        hash: hash.to_string(),
    };
    cache.insert(record.clone())?;
    Ok(VideoDescription::from(&record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichOptions {
    pub frame_count: usize,
    pub max_in_flight: usize,
    /// Token-bucket refill rate; 0 disables pacing.
    pub requests_per_second: f64,
    pub burst: usize,
    pub retry: RetryPolicy,
    /// Record utterances whose media file is absent instead of failing them.
    pub allow_missing_media: bool,
}

impl Default for EnrichOptions {
    fn default() -> Self {
        EnrichOptions {
            frame_count: 3,
            max_in_flight: 4,
            requests_per_second: 2.0,
            burst: 4,
            retry: RetryPolicy::default(),
            allow_missing_media: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnrichReport {
    /// Distinct utterances carrying a video reference.
    pub videos: usize,
    pub cache_hits: usize,
    pub described: usize,
    pub missing_media: Vec<DescriptionKey>,
    pub failures: Vec<(DescriptionKey, String)>,
}

enum Outcome {
    Cached,
    Described,
    MissingMedia,
    Failed(String),
}

/// Describes every utterance of `corpus` that has a video reference.
/// Per-utterance failures are collected in the report rather than aborting
/// the batch.
pub fn enrich_descriptions(
    corpus: &Corpus,
    media_root: Option<&Path>,
    client: &dyn DescriptionClient,
    cache: &DescriptionCache,
    opts: &EnrichOptions,
) -> EnrichReport {
    let mut seen = std::collections::HashSet::new();
    let work: Vec<(DescriptionKey, String)> = corpus
        .conversations
        .iter()
        .flat_map(|c| {
            c.utterances.iter().filter_map(move |u| {
                u.video_ref.as_ref().map(|v| {
                    let key = DescriptionKey {
                        source_dataset: c.source_dataset,
                        conversation_id: c.conversation_id.clone(),
                        turn_index: u.turn_index,
                    };
                    (key, v.clone())
                })
            })
        })
        .filter(|(k, _)| seen.insert(k.clone()))
        .collect();

    let limiter = RateLimiter::new(opts.max_in_flight, opts.requests_per_second, opts.burst);
    let describe_opts = DescribeOptions { retry: opts.retry.clone(), template: PromptTemplate::default(), limiter: Some(&limiter) };
    let outcomes = par::map_bounded(&work, opts.max_in_flight, |(key, video_ref)| {
        let hash = cache_hash(key, client.provider_id(), &describe_opts.template.version);
        if cache.get(&hash).is_some() {
            return Outcome::Cached;
        }
        let frames = match extract_frames(video_ref, media_root, opts.frame_count) {
            Ok(f) => f,
            Err(e) if opts.allow_missing_media && e.is_missing_media() => return Outcome::MissingMedia,
            Err(e) => return Outcome::Failed(e.to_string()),
        };
        match describe_video(&frames, client, cache, key, &describe_opts) {
            Ok(_) => Outcome::Described,
            Err(e) => Outcome::Failed(e.to_string()),
        }
    });

    let mut report = EnrichReport { videos: work.len(), ..Default::default() };
    for ((key, _), outcome) in work.into_iter().zip(outcomes) {
        match outcome {
            Outcome::Cached => report.cache_hits += 1,
            Outcome::Described => report.described += 1,
            Outcome::MissingMedia => report.missing_media.push(key),
            Outcome::Failed(m) => report.failures.push((key, m)),
        }
    }
    report
}
