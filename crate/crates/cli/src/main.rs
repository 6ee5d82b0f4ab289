use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ercpipe::corpus::{self, Corpus, Dataset, Split};
use ercpipe::enrich::{self, DescriptionCache, DescriptionClient, HttpDescriptionClient, StubClient};
use ercpipe::eval::{self, AblationSpec, AblationVariant};
use ercpipe::inference::{
    self, EchoBackend, FixedBackend, GenerationBackend, HttpCompletionBackend, ParsePolicy, TinyBackend,
};
use ercpipe::instruction::{self, GoldRecord, LabelSpaceMode};
use ercpipe::pipeline::{self, CorpusEntry, LocalPipeline, PipelineConfig};
use ercpipe::train::{self, CheckpointRef, CommandBackend, RecordingBackend, TinyLoraBackend, TrainerBackend};
use ercpipe::LabelConfig;

#[derive(Parser)]
#[command(name = "ercpipe", version, about = "Instruction-tuning pipeline for emotion recognition in conversation")]
struct Cli {
    /// Pipeline config (TOML). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for intermediate artifacts [default: config work_dir or ./runs]
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, normalize and validate corpora into canonical JSON Lines.
    Ingest(IngestArgs),
    /// Describe utterance video clips and fill the description cache.
    Enrich(EnrichArgs),
    /// Build the instruction dataset.
    Build(BuildArgs),
    /// Fine-tune an adapter on an instruction dataset.
    Train(TrainArgs),
    /// Generate and parse labels for an instruction dataset.
    Predict(PredictArgs),
    /// Score predictions against gold labels.
    Eval(EvalArgs),
    /// Run the context / video-description ablation matrix.
    Ablate(AblateArgs),
    /// Emotion distribution and split counts of ingested corpora.
    Stats(StatsArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// DATASET=ROOT, repeatable. Replaces the config's corpora list.
    #[arg(long = "corpus", value_parser = parse_corpus_arg)]
    corpora: Vec<(Dataset, PathBuf)>,
    /// Output directory [default: <work_dir>/corpora]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Label configuration replacing the shipped one.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CorporaArg {
    /// Directory of ingested corpora [default: <work_dir>/corpora]
    #[arg(long)]
    corpora: Option<PathBuf>,
}

#[derive(Args)]
struct EnrichArgs {
    #[command(flatten)]
    corpora: CorporaArg,
    /// Description cache file [default: <work_dir>/descriptions.jsonl]
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Directory video references are resolved against.
    #[arg(long)]
    media_root: Option<PathBuf>,
    /// Use a canned description instead of calling the service.
    #[arg(long)]
    stub: Option<String>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Record missing clips instead of failing them.
    #[arg(long)]
    allow_missing_media: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelSpaceArg {
    PerDataset,
    UnifiedSeven,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    corpora: CorporaArg,
    /// Instruction dataset output [default: <work_dir>/dataset/<splits>.jsonl]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write {meta, label} gold records here.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Context window size.
    #[arg(long)]
    k: Option<usize>,
    /// Include cached video descriptions.
    #[arg(long)]
    video_descriptions: bool,
    #[arg(long, value_enum)]
    label_space: Option<LabelSpaceArg>,
    /// Splits to include, repeatable [default: train]
    #[arg(long = "split")]
    splits: Vec<Split>,
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum TrainerArg {
    Tiny,
    Recording,
    Command,
}

#[derive(Args)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    micro_batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "tiny")]
    trainer: TrainerArg,
    /// Trainer program for `--trainer command`; called with a job file.
    #[arg(long)]
    trainer_program: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Instruction dataset [default: <work_dir>/dataset/train.jsonl]
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Run directory [default: <work_dir>/train]
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum GeneratorArg {
    Tiny,
    Echo,
    Fixed,
    Http,
}

#[derive(Args)]
struct GeneratorOpts {
    #[arg(long, value_enum, default_value = "tiny")]
    generator: GeneratorArg,
    /// Reply text for `--generator fixed`.
    #[arg(long, default_value = "")]
    fixed_text: String,
    /// Completion endpoint for `--generator http`.
    #[arg(long)]
    endpoint: Option<String>,
    /// Map unparseable generations to this label instead of `<unparsed>`.
    #[arg(long)]
    lenient: Option<String>,
}

#[derive(Args)]
struct PredictArgs {
    /// Instruction dataset [default: <work_dir>/dataset/test.jsonl]
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Checkpoint manifest [default: <work_dir>/train/checkpoint.json]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Predictions output [default: <work_dir>/predictions.jsonl]
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    gen: GeneratorOpts,
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions file; repeat once per seed to average runs.
    #[arg(long = "pred", required = true)]
    preds: Vec<PathBuf>,
    #[arg(long)]
    gold: PathBuf,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    corpora: CorporaArg,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Datasets to run, repeatable [default: all ingested]
    #[arg(long = "dataset")]
    datasets: Vec<Dataset>,
    /// Variants to run, repeatable [default: all three]
    #[arg(long = "variant")]
    variants: Vec<AblationVariant>,
    /// Training seeds; results are averaged.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainOverrides,
    #[command(flatten)]
    gen: GeneratorOpts,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    corpora: CorporaArg,
    /// Restrict to these splits, repeatable.
    #[arg(long = "split")]
    splits: Vec<Split>,
    #[arg(long)]
    json: bool,
}

fn parse_corpus_arg(s: &str) -> Result<(Dataset, PathBuf), String> {
    let (d, p) = s.split_once('=').ok_or("expected DATASET=ROOT")?;
    Ok((d.parse()?, PathBuf::from(p)))
}

struct Ctx {
    cfg: PipelineConfig,
    work_dir: PathBuf,
}

impl Ctx {
    fn path(&self, explicit: &Option<PathBuf>, default: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.work_dir.join(default))
    }

    fn corpora_dir(&self, arg: &CorporaArg) -> PathBuf {
        self.path(&arg.corpora, "corpora")
    }

    fn labels(&self) -> Result<LabelConfig> {
        Ok(self.cfg.label_config()?)
    }

    fn load_corpora(&self, dir: &Path) -> Result<Vec<Corpus>> {
        let labels = self.labels()?;
        if !dir.is_dir() {
            bail!("corpora directory {} does not exist (run `ercpipe ingest` first)", dir.display());
        }
        let paths: Vec<PathBuf> =
            Dataset::ALL.iter().map(|&d| pipeline::corpus_file(dir, d)).filter(|p| p.is_file()).collect();
        if paths.is_empty() {
            bail!("no ingested corpora in {} (run `ercpipe ingest` first)", dir.display());
        }
        let mut out = Vec::new();
        for p in paths {
            out.push(corpus::load_corpus(&p, &labels).with_context(|| format!("loading {}", p.display()))?);
        }
        out.sort_by_key(|c| c.name);
        Ok(out)
    }

    fn open_cache(&self, explicit: &Option<PathBuf>) -> Result<DescriptionCache> {
        let path = self.path(explicit, "descriptions.jsonl");
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(DescriptionCache::open(&path)?)
    }

    fn train_config(&self, o: &TrainOverrides) -> Result<train::TrainConfig> {
        let mut t = self.cfg.train.clone();
        if let Some(v) = o.epochs {
            t.epochs = v;
        }
        if let Some(v) = o.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = o.micro_batch_size {
            t.micro_batch_size = v;
        }
        if let Some(v) = o.lr {
            t.learning_rate = v;
        }
        if let Some(v) = o.seed {
            t.seed = v;
        }
        t.validate()?;
        Ok(t)
    }

    fn trainer(&self, o: &TrainOverrides) -> Result<Box<dyn TrainerBackend>> {
        Ok(match o.trainer {
            TrainerArg::Tiny => Box::new(TinyLoraBackend::default()),
            TrainerArg::Recording => Box::new(RecordingBackend::new()),
            TrainerArg::Command => {
                let program = o.trainer_program.clone().context("--trainer command needs --trainer-program")?;
                Box::new(CommandBackend { program, args: Vec::new() })
            }
        })
    }

    fn policy(&self, g: &GeneratorOpts) -> ParsePolicy {
        match &g.lenient {
            Some(l) => ParsePolicy::Lenient { default_label: l.clone() },
            None => self.cfg.parse.clone(),
        }
    }

    fn generator(&self, g: &GeneratorOpts) -> Result<Box<dyn GenerationBackend>> {
        Ok(match g.generator {
            GeneratorArg::Tiny => Box::new(TinyBackend::default()),
            GeneratorArg::Echo => Box::new(EchoBackend),
            GeneratorArg::Fixed => Box::new(FixedBackend(g.fixed_text.clone())),
            GeneratorArg::Http => {
                let mut c = self.cfg.completion.clone();
                if let Some(e) = &g.endpoint {
                    c.endpoint = e.clone();
                }
                Box::new(HttpCompletionBackend::new(c).map_err(anyhow::Error::msg)?)
            }
        })
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn ingest(ctx: &Ctx, a: &IngestArgs) -> Result<()> {
    let labels = match &a.labels {
        Some(p) => LabelConfig::from_path(p)?,
        None => ctx.labels()?,
    };
    let entries: Vec<CorpusEntry> = if a.corpora.is_empty() {
        ctx.cfg.corpora.clone()
    } else {
        a.corpora
            .iter()
            .map(|(d, p)| CorpusEntry { dataset: *d, root: p.clone(), options: None, validation_fraction: None })
            .collect()
    };
    if entries.is_empty() {
        bail!("no corpora given (use --corpus DATASET=ROOT or a config with [[corpora]])");
    }
    let out = ctx.path(&a.out, "corpora");
    let mut manifests = Vec::new();
    for entry in &entries {
        let corpus = pipeline::ingest(entry, &labels, ctx.cfg.train.seed)
            .with_context(|| format!("ingesting {} from {}", entry.dataset, entry.root.display()))?;
        let manifest = corpus::save_corpus(&corpus, &pipeline::corpus_file(&out, entry.dataset))?;
        if !a.json {
            let counts: Vec<String> = manifest
                .counts
                .iter()
                .map(|(s, c)| format!("{s} {}/{}", c.conversations, c.utterances))
                .collect();
            println!(
                "{}: {} (conversations/utterances), {} rejected row(s)",
                entry.dataset,
                counts.join(", "),
                manifest.rejected.len()
            );
        }
        manifests.push(manifest);
    }
    if a.json {
        print_json(&manifests)?;
    }
    Ok(())
}

fn enrich_cmd(ctx: &Ctx, a: &EnrichArgs) -> Result<()> {
    let corpora = ctx.load_corpora(&ctx.corpora_dir(&a.corpora))?;
    let cache = ctx.open_cache(&a.cache)?;
    let mut opts = ctx.cfg.enrich.clone();
    if let Some(n) = a.frames {
        opts.frame_count = n;
    }
    if let Some(n) = a.max_in_flight {
        opts.max_in_flight = n;
    }
    opts.allow_missing_media |= a.allow_missing_media;
    let media_root = a.media_root.clone().or_else(|| ctx.cfg.media_root.clone());
    let client: Box<dyn DescriptionClient> = match &a.stub {
        Some(text) => Box::new(StubClient::new(text.clone())),
        None => Box::new(HttpDescriptionClient::from_env(ctx.cfg.service.clone()).map_err(anyhow::Error::msg)?),
    };
    let mut failures = 0;
    let mut reports = Vec::new();
    for c in &corpora {
        let report = enrich::enrich_descriptions(c, media_root.as_deref(), client.as_ref(), &cache, &opts);
        if !a.json {
            println!(
                "{}: {} clip(s), {} cached, {} described, {} missing media, {} failed",
                c.name,
                report.videos,
                report.cache_hits,
                report.described,
                report.missing_media.len(),
                report.failures.len()
            );
        }
        for (key, msg) in &report.failures {
            log::error!("{key}: {msg}");
        }
        failures += report.failures.len();
        reports.push((c.name, report));
    }
    if a.json {
        print_json(&reports)?;
    }
    if failures > 0 {
        bail!("{failures} clip(s) could not be described");
    }
    Ok(())
}

fn build(ctx: &Ctx, a: &BuildArgs) -> Result<()> {
    let corpora = ctx.load_corpora(&ctx.corpora_dir(&a.corpora))?;
    let mut cfg = ctx.cfg.build.clone();
    if let Some(k) = a.k {
        cfg.context_window = k;
    }
    cfg.include_video_description |= a.video_descriptions;
    match a.label_space {
        Some(LabelSpaceArg::PerDataset) => cfg.label_space_mode = LabelSpaceMode::PerDataset,
        Some(LabelSpaceArg::UnifiedSeven) => cfg.label_space_mode = LabelSpaceMode::UnifiedSeven,
        None => {}
    }
    if !a.splits.is_empty() {
        cfg.splits = a.splits.clone();
    }
    let cache = ctx.open_cache(&a.cache)?;
    let built = instruction::build_dataset(&corpora, &cfg, &cache)?;
    let name: Vec<&str> = cfg.splits.iter().map(|s| s.as_str()).collect();
    let out = ctx.path(&a.out, &format!("dataset/{}.jsonl", name.join("+")));
    let manifest = instruction::emit_jsonl(&built.instances, &out)?;
    if let Some(g) = &a.gold {
        instruction::emit_gold(&built.instances, g)?;
    }
    println!(
        "{} instance(s) -> {} (sha256 {}); {} over the {}-token cutoff; {} outside the label space",
        manifest.count,
        out.display(),
        manifest.sha256,
        built.report.over_cutoff,
        cfg.cutoff_length,
        built.report.outside_label_space
    );
    Ok(())
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let cfg = ctx.train_config(&a.overrides)?;
    let backend = ctx.trainer(&a.overrides)?;
    let dataset = ctx.path(&a.dataset, "dataset/train.jsonl");
    let out = ctx.path(&a.out, "train");
    let result = train::run_finetune(&dataset, &cfg, backend.as_ref(), &out)?;
    let s = &result.summary;
    println!(
        "{} step(s) over {} instance(s) in {:.1}s; loss {:.4} -> {:.4}; {} adapter params",
        s.plan.total_steps,
        s.instances,
        s.runtime_secs,
        s.first_loss.unwrap_or(f64::NAN),
        s.final_loss,
        result.checkpoint.adapter_params_count
    );
    println!("checkpoint manifest: {}", out.join("checkpoint.json").display());
    Ok(())
}

fn predict(ctx: &Ctx, a: &PredictArgs) -> Result<()> {
    let dataset = ctx.path(&a.dataset, "dataset/test.jsonl");
    let instances = instruction::load_instances(&dataset)?;
    let ckpt_path = ctx.path(&a.checkpoint, "train/checkpoint.json");
    let checkpoint = if ckpt_path.is_file() {
        CheckpointRef::load(&ckpt_path)?
    } else if a.gen.generator == GeneratorArg::Tiny {
        bail!("checkpoint manifest {} not found", ckpt_path.display());
    } else {
        CheckpointRef {
            path: ckpt_path.display().to_string(),
            base_model: ctx.cfg.train.base_model.clone(),
            adapter_params_count: 0,
            train_config_hash: String::new(),
            final_loss: f64::NAN,
        }
    };
    let mut backend = ctx.generator(&a.gen)?;
    let preds = inference::classify_instances(&instances, &checkpoint, backend.as_mut(), &ctx.cfg.decode, &ctx.policy(&a.gen))?;
    let out = ctx.path(&a.out, "predictions.jsonl");
    inference::write_predictions(&preds, &out)?;
    let unparsed = preds.iter().filter(|p| p.parsed_label.is_none()).count();
    println!("{} prediction(s) -> {}; {} unparsed", preds.len(), out.display(), unparsed);
    Ok(())
}

fn eval_cmd(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let labels = ctx.labels()?;
    let gold: Vec<GoldRecord> = ercpipe::jsonl::read(&a.gold)?;
    let mut per_seed = Vec::new();
    for p in &a.preds {
        let preds = inference::load_predictions(p)?;
        per_seed.push(eval::evaluate(&preds, &gold, &labels).with_context(|| format!("scoring {}", p.display()))?);
    }
    let mut reports = Vec::new();
    for i in 0..per_seed[0].len() {
        let runs: Vec<_> = per_seed.iter().filter_map(|r| r.get(i).cloned()).collect();
        reports.push(eval::aggregate_seeds(&runs)?);
    }
    if let Some(out) = &a.out {
        ercpipe::jsonl::write_json(&reports, out)?;
    }
    if a.json {
        print_json(&reports)?;
    } else {
        print!("{}", eval::render_reports(&reports));
    }
    Ok(())
}

fn ablate(ctx: &Ctx, a: &AblateArgs) -> Result<()> {
    let corpora = ctx.load_corpora(&ctx.corpora_dir(&a.corpora))?;
    let cache = ctx.open_cache(&a.cache)?;
    let train_cfg = ctx.train_config(&a.train)?;
    let trainer = ctx.trainer(&a.train)?;
    ctx.generator(&a.gen)?;
    let variants = if a.variants.is_empty() { AblationVariant::ALL.to_vec() } else { a.variants.clone() };
    let specs: Vec<AblationSpec> = variants.iter().map(|&v| AblationSpec::new(v, &ctx.cfg.build, &train_cfg)).collect();
    let datasets = if a.datasets.is_empty() { corpora.iter().map(|c| c.name).collect() } else { a.datasets.clone() };
    let pipeline = LocalPipeline {
        corpora: &corpora,
        cache: &cache,
        trainer: trainer.as_ref(),
        generator: Box::new(|| ctx.generator(&a.gen).expect("generator was constructed once already")),
        work_dir: ctx.work_dir.join("ablation"),
        eval_split: Split::Test,
        decode: ctx.cfg.decode.clone(),
        policy: ctx.policy(&a.gen),
    };
    let report = eval::run_ablation(&specs, &datasets, &a.seeds, &pipeline)?;
    if let Some(out) = &a.out {
        ercpipe::jsonl::write_json(&report, out)?;
    }
    if a.json {
        print_json(&report)?;
    } else {
        print!("{}", eval::render_ablation(&report));
    }
    Ok(())
}

fn stats(ctx: &Ctx, a: &StatsArgs) -> Result<()> {
    let mut corpora = ctx.load_corpora(&ctx.corpora_dir(&a.corpora))?;
    if !a.splits.is_empty() {
        corpora = corpora.iter().map(|c| c.only_splits(&a.splits)).collect();
    }
    let report = corpus::corpus_stats(&corpora)?;
    if a.json {
        return print_json(&report);
    }
    println!("{} utterance(s), {} rejected row(s)", report.total, report.rejected);
    for share in &report.per_label {
        println!("  {:<16} {:>8}  {:>6.2}%", share.label, share.count, share.fraction * 100.0);
    }
    for (dataset, splits) in &report.per_dataset {
        let parts: Vec<String> =
            splits.iter().map(|(s, c)| format!("{s} {}/{}", c.conversations, c.utterances)).collect();
        println!("  {dataset}: {}", parts.join(", "));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let work_dir = cli.work_dir.clone().or_else(|| cfg.work_dir.clone()).unwrap_or_else(|| PathBuf::from("runs"));
    let ctx = Ctx { cfg, work_dir };
    match &cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Enrich(a) => enrich_cmd(&ctx, a),
        Command::Build(a) => build(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Predict(a) => predict(&ctx, a),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::Ablate(a) => ablate(&ctx, a),
        Command::Stats(a) => stats(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
