//! One line per acceptance criterion. Runs without the libtest harness so the
//! report is printed even when output capture is on.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ercpipe::corpus::{corpus_stats, Corpus, Dataset, Split};
use ercpipe::enrich::{enrich_descriptions, DescriptionCache, EnrichOptions, StubClient};
use ercpipe::eval::{
    self, accuracy, confusion_matrix, render_ablation, run_ablation, weighted_f1, AblationSpec, AblationVariant,
    BuildOutcome, ConfusionMatrix, PipelineHandles, RunTag, VariantData,
};
use ercpipe::inference::{classify_instances, EchoBackend, GenerationBackend, ParsePolicy, Prediction, TinyBackend};
use ercpipe::instruction::{
    build_context, build_dataset, emit_jsonl, gold_records, instruction_text, BuildConfig, InstructionInstance,
    UNIFIED_SEVEN,
};
use ercpipe::train::{default_config, lr_at_step, run_finetune, CheckpointRef, RecordingBackend, TinyLoraBackend};
use ercpipe::{LabelConfig, TrainConfig};

use common::{fixtures, ingest_from, mini_root, oracle, records};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn metric_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let names: Vec<String> = (0..9).map(|i| format!("c{i}")).collect();
    let mut with_unparsed = 0;
    for set in 0..1000 {
        let k = rng.random_range(1..=9);
        let n = rng.random_range(1..=50);
        let gold: Vec<String> = (0..n).map(|_| names[rng.random_range(0..k)].clone()).collect();
        let pred: Vec<Option<String>> = (0..n)
            .map(|_| if rng.random_bool(0.1) { None } else { Some(names[rng.random_range(0..k)].clone()) })
            .collect();
        with_unparsed += pred.iter().any(Option::is_none) as usize;
        let (p, g) = records(&gold, &pred);
        let m = confusion_matrix(&p, &g, &names[..k]).map_err(|e| e.to_string())?;
        let (acc, wf1) = (accuracy(&m).unwrap(), weighted_f1(&m).unwrap());
        let (oa, of) = oracle(&gold, &pred);
        ensure((acc - oa).abs() <= 1e-9 && (wf1 - of).abs() <= 1e-9, || {
            format!("set {set}: acc {acc} vs {oa}, w-F1 {wf1} vs {of}")
        })?;
    }
    let took = started.elapsed();
    ensure(took < Duration::from_secs(10), || format!("took {took:?}"))?;
    Ok(format!("1000 sets ({with_unparsed} with unparsed) in {:.2}s", took.as_secs_f64()))
}

fn anchors() -> Outcome {
    let space = vec!["A".to_string(), "B".to_string()];
    let m = ConfusionMatrix::from_pairs(&space, [("A", Some("A")), ("A", Some("A")), ("B", Some("A")), ("B", Some("A"))]);
    let wf1 = weighted_f1(&m).unwrap();
    ensure((wf1 - 1.0 / 3.0).abs() <= 1e-12, || format!("all-A w-F1 {wf1}"))?;
    let perfect = ConfusionMatrix::from_pairs(&space, [("A", Some("A")), ("A", Some("A")), ("B", Some("B")), ("B", Some("B"))]);
    let (acc, wf1p) = (accuracy(&perfect).unwrap(), weighted_f1(&perfect).unwrap());
    ensure(acc == 1.0 && wf1p == 1.0, || format!("perfect acc {acc} w-F1 {wf1p}"))?;
    Ok(format!("all-A w-F1 = {wf1:.15}, perfect = {wf1p}"))
}

fn schedule() -> Outcome {
    let cfg = default_config();
    let total = 10_000;
    let at = |s| lr_at_step(s, total, &cfg).unwrap();
    ensure((at(0) - 3e-4).abs() <= 1e-12, || format!("lr(0) = {}", at(0)))?;
    ensure((at(total) - 3e-5).abs() <= 1e-12, || format!("lr(T) = {}", at(total)))?;
    ensure((at(total / 2) - 1.65e-4).abs() <= 1e-12, || format!("lr(T/2) = {}", at(total / 2)))?;
    let mut prev = f64::INFINITY;
    for s in 0..=total {
        let lr = at(s);
        ensure(lr <= prev, || format!("lr rises at step {s}"))?;
        prev = lr;
    }
    Ok(format!("lr(0)={:e} lr(T/2)={:e} lr(T)={:e}, non-increasing over {} steps", at(0), at(total / 2), at(total), total + 1))
}

fn config_fidelity() -> Outcome {
    let c = default_config();
    let expected = [
        ("batch_size", c.batch_size == 128),
        ("micro_batch_size", c.micro_batch_size == 8),
        ("epochs", c.epochs == 5),
        ("learning_rate", c.learning_rate == 3e-4),
        ("lora_r", c.lora_r == 4),
        ("lora_alpha", c.lora_alpha == 16.0),
        ("lora_dropout", c.lora_dropout == 0.05),
        ("cutoff_length", c.cutoff_length == 256),
        ("max_context_length", c.max_context_length == 4096),
        ("weight_decay", c.weight_decay == 0.1),
        ("grad_clip_norm", c.grad_clip_norm == 1.0),
        ("adamw betas", c.optimizer.beta1 == 0.9 && c.optimizer.beta2 == 0.95),
        ("schedule", c.schedule.name == "cosine" && c.schedule.floor_ratio == 0.1),
    ];
    let wrong: Vec<&str> = expected.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    ensure(wrong.is_empty(), || format!("fields differ: {wrong:?}"))?;
    ensure(c.grad_accumulation() == 16, || format!("grad_accumulation {}", c.grad_accumulation()))?;
    c.validate().map_err(|e| e.to_string())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = ingest_from(&fixtures(), Dataset::Meld);
    let built = build_dataset(&[corpus], &BuildConfig::default(), &DescriptionCache::in_memory()).map_err(|e| e.to_string())?;
    let data = dir.path().join("train.jsonl");
    emit_jsonl(&built.instances, &data).map_err(|e| e.to_string())?;
    let backend = RecordingBackend::new();
    run_finetune(&data, &c, &backend, dir.path()).map_err(|e| e.to_string())?;
    let rec = backend.recorded().ok_or("backend was not called")?;
    ensure(rec.config == c, || "recorded config differs".into())?;
    ensure(format!("{:?}", rec.config) == format!("{c:?}"), || "recorded config differs in representation".into())?;
    ensure(rec.instances == built.instances.len(), || "instance count differs".into())?;
    Ok("13 fields match, grad_accumulation 16, stub received the config unchanged".into())
}

fn context_window() -> Outcome {
    let corpus = ingest_from(&fixtures(), Dataset::Meld);
    let template = &corpus.conversations[0];
    let mut checked = 0;
    for len in 1..=10 {
        let mut conv = template.clone();
        let u = conv.utterances[0].clone();
        conv.utterances = (0..len)
            .map(|i| ercpipe::Utterance { turn_index: i, text: format!("t{i}"), ..u.clone() })
            .collect();
        for k in 0..=10 {
            for i in 0..len {
                let mut want = Vec::new();
                for j in 0..i {
                    if i - j <= k {
                        want.push(format!("t{j}"));
                    }
                }
                let got: Vec<String> = build_context(&conv, i, k).map_err(|e| e.to_string())?.into_iter().map(|t| t.text).collect();
                ensure(got == want, || format!("K={len} k={k} i={i}: {got:?} vs {want:?}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} (K, k, index) cases agree; index 0 always empty"))
}

fn golden_instruction() -> Outcome {
    let text = instruction_text(&UNIFIED_SEVEN, "v1").map_err(|e| e.to_string())?;
    let want = "Given the Video Description and Context, detect the emotion of the input, and assign an accuracy label \
                from ['happiness', 'anger', 'fear', 'sadness', 'disgust', 'surprise', 'neutral'].";
    ensure(text == want, || format!("got {text:?}"))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = BuildConfig { splits: vec![Split::Train, Split::Test], ..BuildConfig::default() };
    for (d, name) in [(Dataset::Meld, "meld"), (Dataset::Iemocap, "iemocap")] {
        let built = build_dataset(&[ingest_from(&fixtures(), d)], &cfg, &DescriptionCache::in_memory()).map_err(|e| e.to_string())?;
        let out = dir.path().join(format!("{name}.jsonl"));
        emit_jsonl(&built.instances, &out).map_err(|e| e.to_string())?;
        let golden = fixtures().join("expected").join(format!("{name}_instructions_k1.jsonl"));
        ensure(std::fs::read(&out).ok() == std::fs::read(&golden).ok(), || format!("{name} records differ from golden"))?;
    }
    Ok("instruction sentence and MELD/IEMOCAP record files byte-identical".into())
}

struct Mini {
    _dir: tempfile::TempDir,
    work: std::path::PathBuf,
    train: Vec<InstructionInstance>,
    test: Vec<InstructionInstance>,
    described: usize,
}

/// ingest, enrich with a stub describer, build train and test sets.
fn prepare_mini() -> Result<Mini, String> {
    let root = mini_root();
    let corpora: Vec<Corpus> = Dataset::ALL.iter().map(|&d| ingest_from(&root, d)).collect();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cache = DescriptionCache::open(&dir.path().join("descriptions.jsonl")).map_err(|e| e.to_string())?;
    let client = StubClient::new("A person speaks in a living room.");
    let opts = EnrichOptions { requests_per_second: 1000.0, burst: 64, ..EnrichOptions::default() };
    let mut described = 0;
    for c in &corpora {
        let media = root.join(common::dir_name(c.name));
        let report = enrich_descriptions(c, Some(&media), &client, &cache, &opts);
        ensure(report.failures.is_empty(), || format!("{}: {:?}", c.name, report.failures))?;
        described += report.described;
    }
    ensure(described > 0, || "no clip was described".into())?;
    let base = BuildConfig { include_video_description: true, ..BuildConfig::default() };
    let train = build_dataset(&corpora, &base, &cache).map_err(|e| e.to_string())?.instances;
    let test_cfg = BuildConfig { splits: vec![Split::Test], ..base };
    let test = build_dataset(&corpora, &test_cfg, &cache).map_err(|e| e.to_string())?.instances;
    let work = dir.path().to_path_buf();
    Ok(Mini { _dir: dir, work, train, test, described })
}

fn predict_and_score(
    mini: &Mini,
    checkpoint: &CheckpointRef,
    backend: &mut dyn GenerationBackend,
) -> Result<Vec<eval::EvalReport>, String> {
    let preds: Vec<Prediction> =
        classify_instances(&mini.test, checkpoint, backend, &Default::default(), &ParsePolicy::Strict).map_err(|e| e.to_string())?;
    eval::evaluate(&preds, &gold_records(&mini.test), &LabelConfig::default()).map_err(|e| e.to_string())
}

fn smoke() -> Outcome {
    let started = Instant::now();
    let mini = prepare_mini()?;
    ensure(mini.train.len() == 64, || format!("{} training instances", mini.train.len()))?;
    ensure(mini.train.iter().any(|i| i.video_description.is_some()), || "no description reached the records".into())?;
    let data = mini.work.join("train.jsonl");
    emit_jsonl(&mini.train, &data).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { batch_size: 64, micro_batch_size: 8, epochs: 50, ..TrainConfig::default() };
    let out = run_finetune(&data, &cfg, &TinyLoraBackend::default(), &mini.work.join("train")).map_err(|e| e.to_string())?;
    ensure(out.steps.len() == 50, || format!("{} steps", out.steps.len()))?;
    let (first, last) = (out.steps[0].loss, out.steps[49].loss);
    ensure(last < first, || format!("loss did not fall: {first} -> {last}"))?;
    let reports = predict_and_score(&mini, &out.checkpoint, &mut TinyBackend::default())?;
    ensure(reports.len() == 5, || format!("{} dataset reports", reports.len()))?;
    let took = started.elapsed();
    ensure(took < Duration::from_secs(300), || format!("took {took:?}"))?;
    Ok(format!(
        "{} clips described, 64 instances, 50 steps, loss {first:.4} -> {last:.4}, {} test predictions scored in {:.1}s",
        mini.described,
        mini.test.len(),
        took.as_secs_f64()
    ))
}

fn echo_closure() -> Outcome {
    let mini = prepare_mini()?;
    let checkpoint = CheckpointRef {
        path: String::new(),
        base_model: "echo".into(),
        adapter_params_count: 0,
        train_config_hash: String::new(),
        final_loss: 0.0,
    };
    let reports = predict_and_score(&mini, &checkpoint, &mut EchoBackend)?;
    for r in &reports {
        ensure(r.accuracy == 1.0 && r.weighted_f1 == 1.0, || format!("{}: acc {} w-F1 {}", r.dataset, r.accuracy, r.weighted_f1))?;
    }
    Ok(format!("accuracy and w-F1 exactly 1.0 on all {} datasets", reports.len()))
}

struct StubHandles {
    builds: Mutex<Vec<(Dataset, BuildConfig)>>,
}

impl PipelineHandles for StubHandles {
    fn build(&self, dataset: Dataset, cfg: &BuildConfig) -> Result<BuildOutcome, String> {
        self.builds.lock().unwrap().push((dataset, cfg.clone()));
        if cfg.include_video_description && dataset != Dataset::Meld {
            return Ok(BuildOutcome::Skipped("no video".into()));
        }
        let corpus = ingest_from(&fixtures(), dataset);
        let label_space = corpus.label_space.clone();
        let all = BuildConfig { include_video_description: false, splits: vec![Split::Train, Split::Test], ..cfg.clone() };
        let train = build_dataset(&[corpus], &all, &DescriptionCache::in_memory()).map_err(|e| e.to_string())?.instances;
        Ok(BuildOutcome::Ready(VariantData { test: train.clone(), train, label_space }))
    }

    fn train(&self, tag: RunTag, _: &[InstructionInstance], cfg: &TrainConfig) -> Result<CheckpointRef, String> {
        ensure(cfg.seed == tag.seed, || "seed not threaded through".into())?;
        Ok(CheckpointRef {
            path: String::new(),
            base_model: cfg.base_model.clone(),
            adapter_params_count: 0,
            train_config_hash: cfg.config_hash(),
            final_loss: 0.0,
        })
    }

    fn predict(&self, _: RunTag, ckpt: &CheckpointRef, data: &[InstructionInstance]) -> Result<Vec<Prediction>, String> {
        classify_instances(data, ckpt, &mut EchoBackend, &Default::default(), &ParsePolicy::Strict).map_err(|e| e.to_string())
    }
}

fn ablation_shape() -> Outcome {
    let handles = StubHandles { builds: Mutex::new(Vec::new()) };
    let specs = AblationSpec::standard(&BuildConfig::default(), &TrainConfig::default());
    let datasets = [Dataset::Meld, Dataset::Iemocap, Dataset::EmoryNlp];
    let report = run_ablation(&specs, &datasets, &[1, 2, 3], &handles).map_err(|e| e.to_string())?;
    ensure(report.rows.len() == 9, || format!("{} rows", report.rows.len()))?;
    for &d in &datasets {
        for v in AblationVariant::ALL {
            let row = report.row(d, v).ok_or_else(|| format!("missing {d}/{v}"))?;
            let skipped = v == AblationVariant::AddVideoDescription && d != Dataset::Meld;
            ensure(row.report.is_none() == skipped, || format!("{d}/{v} skip state wrong"))?;
            if let Some(r) = &row.report {
                ensure(r.seeds.len() == 3, || format!("{d}/{v}: {} seed scores", r.seeds.len()))?;
            }
        }
    }
    let builds = handles.builds.lock().unwrap();
    for (d, cfg) in builds.iter() {
        let variant = specs.iter().find(|s| &s.build == cfg).map(|s| s.variant).ok_or("unknown build config")?;
        let want_k = if variant == AblationVariant::NoContext { 0 } else { 1 };
        ensure(cfg.context_window == want_k, || format!("{d}/{variant} built with k={}", cfg.context_window))?;
        ensure(cfg.include_video_description == (variant == AblationVariant::AddVideoDescription), || {
            format!("{d}/{variant} description flag")
        })?;
    }
    ensure(builds.iter().filter(|(_, c)| c.context_window == 0).count() == datasets.len(), || "no_context builds missing".into())?;
    let table = render_ablation(&report);
    for v in AblationVariant::ALL {
        ensure(table.contains(v.title()), || format!("table lacks row {}", v.title()))?;
    }
    Ok(format!("{} rows over {} datasets x 3 variants, no_context built with k=0", report.rows.len(), datasets.len()))
}

const TABLE_COUNTS: [(Dataset, [usize; 3]); 5] = [
    (Dataset::Meld, [9989, 1109, 2610]),
    (Dataset::Iemocap, [5810, 0, 1623]),
    (Dataset::EmoryNlp, [7551, 954, 984]),
    (Dataset::DailyDialog, [87832, 7912, 7863]),
    (Dataset::Meisd, [14040, 1860, 4100]),
];

const TRAIN_SHARES: [(&str, f64); 6] =
    [("happiness", 0.312), ("fear", 0.088), ("surprise", 0.063), ("anger", 0.126), ("sadness", 0.115), ("disgust", 0.053)];

/// Needs the official releases under `$ERC_CORPUS_ROOT/<dataset>/`.
fn official_corpora(root: &Path) -> Outcome {
    let mut problems = Vec::new();
    let mut train_sets = Vec::new();
    for (d, want) in TABLE_COUNTS {
        let dir = root.join(common::dir_name(d));
        if !dir.is_dir() {
            problems.push(format!("{d}: {} missing", dir.display()));
            continue;
        }
        let corpus = ingest_from(root, d);
        let counts = corpus.split_counts();
        let got: Vec<usize> = Split::ALL.iter().map(|s| counts[s].utterances).collect();
        // The release folds validation into train for this corpus.
        let got = if d == Dataset::Iemocap { vec![got[0] + got[1], 0, got[2]] } else { got };
        if got != want {
            problems.push(format!("{d}: {got:?} vs {want:?}"));
        }
        train_sets.push(corpus);
    }
    if !train_sets.is_empty() {
        let train_only: Vec<Corpus> = train_sets
            .iter()
            .map(|c| Corpus {
                conversations: c.conversations.iter().filter(|x| x.split == Split::Train).cloned().collect(),
                ..c.clone()
            })
            .collect();
        let stats = corpus_stats(&train_only).map_err(|e| e.to_string())?;
        for (label, share) in TRAIN_SHARES {
            let got = stats.fraction(label);
            if (got - share).abs() > 0.02 {
                problems.push(format!("{label}: {:.1}% vs {:.1}%", got * 100.0, share * 100.0));
            }
        }
        let built = build_dataset(&train_sets, &BuildConfig::default(), &DescriptionCache::in_memory()).map_err(|e| e.to_string())?;
        if built.instances.len() <= 120_000 {
            problems.push(format!("{} training instances", built.instances.len()));
        }
    }
    if problems.is_empty() {
        Ok("split counts, label shares and dataset size match".into())
    } else {
        Err(problems.join("; "))
    }
}

fn main() {
    let checks: [Check; 9] = [
        ("metric oracle", metric_oracle),
        ("hand-computed metric anchors", anchors),
        ("learning-rate schedule anchors", schedule),
        ("training config fidelity", config_fidelity),
        ("context window", context_window),
        ("golden instruction", golden_instruction),
        ("end-to-end smoke on the mini corpus", smoke),
        ("echo-oracle closure", echo_closure),
        ("ablation harness shape", ablation_shape),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    let name = "official corpora statistics";
    match std::env::var_os("ERC_CORPUS_ROOT") {
        None => println!("SKIP {name}: set ERC_CORPUS_ROOT to the directory holding the official releases"),
        Some(root) => match catch_unwind(|| official_corpora(Path::new(&root))).unwrap_or_else(|_| Err("ingestion panicked".into())) {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        },
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
