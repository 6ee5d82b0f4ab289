use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ercpipe::corpus::{Conversation, Corpus, Dataset, Split, Utterance};
use ercpipe::enrich::DescriptionCache;
use ercpipe::eval::{
    run_ablation_with, weighted_f1, AblationSpec, BuildOutcome, ConfusionMatrix, PipelineHandles, RunTag, VariantData,
};
use ercpipe::inference::{classify_with, EchoBackend, ParsePolicy, Prediction};
use ercpipe::instruction::{build_dataset_with, BuildConfig, InstructionInstance, UNIFIED_SEVEN};
use ercpipe::par::{self, Execution};
use ercpipe::train::CheckpointRef;
use ercpipe::TrainConfig;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn corpus(conversations: usize, turns: usize) -> Corpus {
    let conversations = (0..conversations)
        .map(|c| Conversation {
            conversation_id: format!("train/dia{c}"),
            source_dataset: Dataset::Meld,
            split: Split::Train,
            utterances: (0..turns)
                .map(|t| {
                    let label = UNIFIED_SEVEN[(c * 7 + t * 3) % 7].to_string();
                    Utterance {
                        turn_index: t,
                        speaker: format!("speaker {}", t % 3),
                        text: format!("utterance {t} of dialogue {c}, with some filler words to render"),
                        video_ref: None,
                        raw_label: label.clone(),
                        canonical_label: Some(label),
                    }
                })
                .collect(),
        })
        .collect();
    Corpus {
        name: Dataset::Meld,
        label_space: UNIFIED_SEVEN.iter().map(|s| s.to_string()).collect(),
        conversations,
        provenance: vec![],
        rejected: vec![],
    }
}

fn checkpoint() -> CheckpointRef {
    CheckpointRef {
        path: String::new(),
        base_model: "bench".into(),
        adapter_params_count: 0,
        train_config_hash: String::new(),
        final_loss: 0.0,
    }
}

fn instances(conversations: usize) -> Vec<InstructionInstance> {
    let cfg = BuildConfig { context_window: 3, ..BuildConfig::default() };
    build_dataset_with(Execution::Sequential, &[corpus(conversations, 10)], &cfg, &DescriptionCache::in_memory())
        .unwrap()
        .instances
}

fn build(c: &mut Criterion) {
    let corpora = [corpus(1000, 10)];
    let cache = DescriptionCache::in_memory();
    let cfg = BuildConfig { context_window: 3, ..BuildConfig::default() };
    let mut g = c.benchmark_group("build_dataset");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| build_dataset_with(exec, black_box(&corpora), &cfg, &cache).unwrap())
        });
    }
    g.finish();
}

fn classify(c: &mut Criterion) {
    let data = instances(1000);
    let ckpt = checkpoint();
    let mut g = c.benchmark_group("classify");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                classify_with(exec, black_box(&data), &ckpt, &mut EchoBackend, &Default::default(), &ParsePolicy::Strict)
                    .unwrap()
            })
        });
    }
    g.finish();
}

fn metric_sweep(c: &mut Criterion) {
    let space: Vec<String> = UNIFIED_SEVEN.iter().map(|s| s.to_string()).collect();
    let sets: Vec<Vec<(usize, Option<usize>)>> = (0..2000)
        .map(|s| (0..50).map(|i| ((s + i) % 7, if (s * i) % 11 == 0 { None } else { Some((s * 3 + i) % 7) })).collect())
        .collect();
    let mut g = c.benchmark_group("metric_sweep");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::map(exec, black_box(&sets), |pairs| {
                    let m = ConfusionMatrix::from_pairs(
                        &space,
                        pairs.iter().map(|&(g, p)| (space[g].as_str(), p.map(|p| space[p].as_str()))),
                    );
                    weighted_f1(&m).unwrap()
                })
            })
        });
    }
    g.finish();
}

struct SyntheticHandles {
    data: Vec<InstructionInstance>,
}

impl PipelineHandles for SyntheticHandles {
    fn build(&self, _: Dataset, _: &BuildConfig) -> Result<BuildOutcome, String> {
        Ok(BuildOutcome::Ready(VariantData {
            train: self.data.clone(),
            test: self.data.clone(),
            label_space: UNIFIED_SEVEN.iter().map(|s| s.to_string()).collect(),
        }))
    }

    fn train(&self, _: RunTag, _: &[InstructionInstance], _: &TrainConfig) -> Result<CheckpointRef, String> {
        Ok(checkpoint())
    }

    fn predict(&self, _: RunTag, ckpt: &CheckpointRef, data: &[InstructionInstance]) -> Result<Vec<Prediction>, String> {
        classify_with(Execution::Sequential, data, ckpt, &mut EchoBackend, &Default::default(), &ParsePolicy::Strict)
            .map_err(|e| e.to_string())
    }
}

fn ablation(c: &mut Criterion) {
    let handles = SyntheticHandles { data: instances(200) };
    let specs = AblationSpec::standard(&BuildConfig::default(), &TrainConfig::default());
    let datasets = [Dataset::Meld, Dataset::Iemocap, Dataset::EmoryNlp];
    let mut g = c.benchmark_group("ablation");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_ablation_with(exec, &specs, &datasets, &[1, 2, 3, 4, 5], &handles).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, build, classify, metric_sweep, ablation);
criterion_main!(benches);
