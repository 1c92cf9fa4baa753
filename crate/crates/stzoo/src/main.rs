use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::{DeserializeOwned, IntoDeserializer};
use stzoo::checkpoint::Checkpoint;
use stzoo::config::{self, ExperimentConfig, InitKind};
use stzoo::datapipe::{self, FrameStore, PreprocessSpec, Protocol, Task};
use stzoo::engine::{self, EvalOptions, TrainOptions};
use stzoo::profiler::{self, ProfileOptions};
use stzoo::results;
use stzoo::weights;
use stzoo_core::analysis;
use stzoo_core::sampling::{self, Mode, SamplerConfig, Strategy};
use stzoo_core::schedule::{EvalProtocol, Level, LrSchedule, TrainProtocol};
use stzoo_core::{assemble, flops, ArchSpec, Backbone, Family, Init, Placement};

#[derive(Parser)]
#[command(name = "stzoo", version, about = "Build, train, evaluate, profile and analyse video action recognition models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Assemble a model and print its structural audit and cost.
    Build(BuildArgs),
    /// Train a model from a config file and/or flags.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint and append a row to results.csv.
    Eval(EvalArgs),
    /// Measure FLOPs, parameters, throughput and max batch size.
    Profile(ProfileArgs),
    /// Produce analysis reports from results.csv.
    Analyze(AnalyzeArgs),
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        cmd: DatasetCmd,
    },
    /// Print the frame indices a sampler picks.
    Sample(SampleArgs),
}

fn parse_serde<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    T::deserialize(IntoDeserializer::<serde::de::value::Error>::into_deserializer(s)).map_err(|e| e.to_string())
}

fn parse_hw(s: &str) -> std::result::Result<[usize; 2], String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    Ok([h.trim().parse().map_err(|e| format!("{e}"))?, w.trim().parse().map_err(|e| format!("{e}"))?])
}

#[derive(Args, Clone)]
struct ArchArgs {
    /// TSN, I3D, S3D, TAM, TSM, Conv1D or TSN+NLN.
    #[arg(long)]
    family: Family,
    /// InceptionV1, ResNet18, ResNet50 or TinyNet.
    #[arg(long)]
    backbone: Backbone,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Insert temporal max pooling at the last three spatial pools.
    #[arg(long)]
    temporal_pool: bool,
    /// All, TopHalf, BottomHalf or UniformHalf.
    #[arg(long, default_value = "All")]
    placement: Placement,
    #[arg(long, default_value_t = 400)]
    num_classes: usize,
}

impl ArchArgs {
    fn spec(&self) -> ArchSpec {
        ArchSpec::new(self.family, self.backbone, self.frames, self.num_classes)
            .with_temporal_pool(self.temporal_pool)
            .with_placement(self.placement)
    }
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    arch: ArchArgs,
    /// Input size.
    #[arg(long, default_value = "224x224", value_parser = parse_hw)]
    input: [usize; 2],
    /// Also measure throughput and max batch size.
    #[arg(long)]
    measure: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Transfer,
    Desk,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a protocol preset instead of the config's `train` table.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Write the effective config here and exit.
    #[arg(long)]
    save_config: Option<PathBuf>,
    #[arg(long)]
    verbose: bool,
    /// [config: seed, default 0]
    #[arg(long)]
    seed: Option<u64>,
    /// [config: out, default runs/default]
    #[arg(long)]
    out: Option<PathBuf>,
    /// [config: arch.family, default TSN]
    #[arg(long)]
    family: Option<Family>,
    /// [config: arch.backbone, default TinyNet]
    #[arg(long)]
    backbone: Option<Backbone>,
    /// [config: arch.frames, default 8]
    #[arg(long)]
    frames: Option<usize>,
    /// [config: arch.temporal_pool, default false]
    #[arg(long)]
    temporal_pool: Option<bool>,
    /// [config: arch.placement, default All]
    #[arg(long)]
    placement: Option<Placement>,
    /// [config: arch.num_classes, default 2]
    #[arg(long)]
    num_classes: Option<usize>,
    /// [config: data.dataset, default synthetic]
    #[arg(long)]
    dataset: Option<String>,
    /// [config: data.manifest, default manifest.csv]
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// [config: data.eval_manifest, default the training manifest]
    #[arg(long)]
    eval_manifest: Option<PathBuf>,
    /// [config: data.size, default 32]
    #[arg(long)]
    size: Option<usize>,
    /// MiniTrain, MiniEval, FullTrain or FullEval [config: data.train_protocol, default MiniEval]
    #[arg(long, value_parser = parse_serde::<Protocol>)]
    train_protocol: Option<Protocol>,
    /// [config: data.eval_protocol, default MiniEval]
    #[arg(long, value_parser = parse_serde::<Protocol>)]
    eval_protocol: Option<Protocol>,
    /// uniform or dense [config: sampler.strategy, default uniform]
    #[arg(long, value_parser = parse_serde::<Strategy>)]
    sampling: Option<Strategy>,
    /// [config: sampler.stride, default 1]
    #[arg(long)]
    stride: Option<usize>,
    /// scratch or imagenet [config: init.kind, default scratch]
    #[arg(long, value_parser = parse_serde::<InitKind>)]
    init: Option<InitKind>,
    /// Pretrained archive [config: init.weights, default $STZOO_WEIGHTS/<backbone>.stzw]
    #[arg(long)]
    weights: Option<PathBuf>,
    /// [config: train.epochs, default 30]
    #[arg(long)]
    epochs: Option<usize>,
    /// [config: train.base_lr, default 0.01]
    #[arg(long)]
    base_lr: Option<f64>,
    /// [config: train.peak_lr, default 0.01]
    #[arg(long)]
    peak_lr: Option<f64>,
    /// [config: train.warmup_epochs, default 0]
    #[arg(long)]
    warmup_epochs: Option<usize>,
    /// CosineHalfPeriod or Step [config: train.schedule, default CosineHalfPeriod]
    #[arg(long, value_parser = parse_serde::<LrSchedule>)]
    schedule: Option<LrSchedule>,
    /// [config: train.momentum, default 0.9]
    #[arg(long)]
    momentum: Option<f64>,
    /// [config: train.weight_decay, default 1e-4]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// [config: train.batch_size, default 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Comma-separated epochs [config: train.milestones, default none]
    #[arg(long, value_delimiter = ',')]
    milestones: Option<Vec<usize>>,
    /// Comma-separated frame chain, e.g. 8,16 [config: train.progressive, default none]
    #[arg(long, value_delimiter = ',')]
    progressive: Option<Vec<usize>>,
    /// [config: train.dropout, default 0]
    #[arg(long)]
    dropout: Option<f64>,
    /// [config: train.clip_grad_norm, default none]
    #[arg(long)]
    clip_grad_norm: Option<f64>,
    /// clip or video [config: eval.level, default clip]
    #[arg(long, value_parser = parse_serde::<Level>)]
    eval_level: Option<Level>,
    /// [config: eval.clips, default 1]
    #[arg(long)]
    eval_clips: Option<usize>,
    /// [config: eval.crops, default 1]
    #[arg(long)]
    eval_crops: Option<usize>,
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src.clone() {
            $dst = v;
        }
    };
}

impl TrainArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => config::load_config(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = self.preset {
            c.train = match p {
                Preset::Full => TrainProtocol::full(),
                Preset::Transfer => TrainProtocol::transfer(),
                Preset::Desk => TrainProtocol::desk(),
            };
        }
        set!(c.seed, self.seed);
        set!(c.out, self.out);
        set!(c.arch.family, self.family);
        set!(c.arch.backbone, self.backbone);
        set!(c.arch.frames, self.frames);
        set!(c.arch.temporal_pool, self.temporal_pool);
        set!(c.arch.placement, self.placement);
        set!(c.arch.num_classes, self.num_classes);
        set!(c.data.dataset, self.dataset);
        set!(c.data.manifest, self.manifest);
        if self.eval_manifest.is_some() {
            c.data.eval_manifest = self.eval_manifest.clone();
        }
        set!(c.data.size, self.size);
        set!(c.data.train_protocol, self.train_protocol);
        set!(c.data.eval_protocol, self.eval_protocol);
        set!(c.sampler.strategy, self.sampling);
        set!(c.sampler.stride, self.stride);
        set!(c.init.kind, self.init);
        if self.weights.is_some() {
            c.init.weights = self.weights.clone();
        }
        set!(c.train.epochs, self.epochs);
        set!(c.train.base_lr, self.base_lr);
        set!(c.train.peak_lr, self.peak_lr);
        set!(c.train.warmup_epochs, self.warmup_epochs);
        set!(c.train.schedule, self.schedule);
        set!(c.train.momentum, self.momentum);
        set!(c.train.weight_decay, self.weight_decay);
        set!(c.train.batch_size, self.batch_size);
        set!(c.train.milestones, self.milestones);
        set!(c.train.progressive, self.progressive);
        set!(c.train.dropout, self.dropout);
        if self.clip_grad_norm.is_some() {
            c.train.clip_grad_norm = self.clip_grad_norm;
        }
        set!(c.eval.level, self.eval_level);
        set!(c.eval.clips, self.eval_clips);
        set!(c.eval.crops, self.eval_crops);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluation manifest CSV.
    #[arg(long)]
    manifest: PathBuf,
    /// Dataset name recorded in the results row.
    #[arg(long, default_value = "synthetic")]
    dataset: String,
    /// clip or video.
    #[arg(long, default_value = "clip", value_parser = parse_serde::<Level>)]
    level: Level,
    /// Clips per video (video level).
    #[arg(long, default_value_t = 1)]
    clips: usize,
    /// Spatial crops per clip: 1 (center) or 3 (along the longer side).
    #[arg(long, default_value_t = 1)]
    crops: usize,
    /// uniform or dense.
    #[arg(long, default_value = "uniform", value_parser = parse_serde::<Strategy>)]
    sampling: Strategy,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Network input side the model was trained at.
    #[arg(long, default_value_t = 224)]
    size: usize,
    /// Output directory; the row is appended to <out>/results.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write averaged per-video probabilities to <out>/predictions.csv.
    #[arg(long)]
    predictions: bool,
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[arg(long, default_value = "224x224", value_parser = parse_hw)]
    input: [usize; 2],
    /// Memory budget for the max-batch probe, in MiB.
    #[arg(long, default_value_t = 1024)]
    budget_mb: usize,
    /// Upper bound of the max-batch probe.
    #[arg(long, default_value_t = 256)]
    max_batch: usize,
    /// Warmup iterations (at least 3).
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    /// Timed iterations (at least 10).
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; the row is appended to <out>/profile.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Report {
    Disentangle,
    TpGain,
    AccVsFlops,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(value_enum)]
    report: Report,
    #[arg(long, default_value = "results.csv")]
    results: PathBuf,
    /// Average the grid cells present instead of failing on missing ones.
    #[arg(long)]
    allow_partial: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Write a synthetic two-class dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// direction or adjacency.
    #[arg(long, value_parser = parse_serde::<Task>)]
    task: Task,
    #[arg(long, default_value_t = 64)]
    videos: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Train,
    EvalClip,
    EvalVideo,
}

#[derive(Args)]
struct SampleArgs {
    /// uniform or dense.
    #[arg(long, default_value = "uniform", value_parser = parse_serde::<Strategy>)]
    strategy: Strategy,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 1)]
    clips: usize,
    #[arg(long, value_enum, default_value = "eval-clip")]
    mode: ModeArg,
    /// Length of a single video; alternative to --manifest.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    num_frames: Option<usize>,
    /// Plan every video of a manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the plan CSV here; `-` is stdout.
    #[arg(long, default_value = "-")]
    dump: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Build(a) => cmd_build(a),
        Cmd::Train(a) => cmd_train(*a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Profile(a) => cmd_profile(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::Dataset { cmd: DatasetCmd::Synth(a) } => cmd_synth(a),
        Cmd::Sample(a) => cmd_sample(a),
    }
}

fn cmd_build(a: BuildArgs) -> Result<()> {
    let spec = a.arch.spec();
    let name = spec.canonical_name()?;
    let model = assemble::<f32>(&spec, Init::Scratch { seed: a.seed })?;
    let audit = model.audit();
    println!("model: {name}");
    println!("frames: {}", spec.frames);
    println!("placement: {}", spec.placement);
    println!("temporal modules: {}", audit.temporal_modules());
    println!("  tam: {}  tsm: {}  conv1d: {}  nonlocal: {}", audit.tam, audit.tsm, audit.conv1d, audit.nln);
    println!("temporal pools: {}", audit.temporal_pools);
    println!(
        "convs: spatial {}  inflated {}  factorized {}  (eligible {})",
        audit.spatial_convs, audit.inflated_convs, audit.factorized_convs, audit.eligible_convs
    );
    println!("input: {}x{}", a.input[0], a.input[1]);
    println!("flops (MACs, 1 clip): {}", flops::count_flops(&model, a.input)?);
    println!("params: {}", flops::count_params(&model));
    if a.measure {
        let r = profiler::profile(&model, a.input, &ProfileOptions::default())?;
        println!("throughput (clips/s): {:.3}", r.throughput);
        println!("max batch: {}", r.max_batch);
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.config()?;
    if let Some(p) = &a.save_config {
        config::save_config(&cfg, p)?;
        println!("{}", p.display());
        return Ok(());
    }
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    config::save_config(&cfg, &cfg.out.join("config.toml"))?;
    let data = FrameStore::open(&cfg.data.manifest, Some(cfg.arch.num_classes))?;
    let model = match cfg.init.kind {
        InitKind::Scratch => assemble(&cfg.arch, Init::Scratch { seed: cfg.seed })?,
        InitKind::Imagenet => {
            let w = weights::load_pretrained(cfg.arch.backbone, cfg.init.weights.as_deref())?;
            assemble(&cfg.arch, Init::ImageNet { weights: &w, seed: cfg.seed })?
        }
    };
    let opts = TrainOptions {
        protocol: cfg.train.clone(),
        strategy: cfg.sampler.strategy,
        stride: cfg.sampler.stride,
        preprocess: PreprocessSpec::new(cfg.data.train_protocol).scaled(cfg.data.size),
        seed: cfg.seed,
        out: Some(cfg.out.clone()),
        verbose: a.verbose,
    };
    let model = if cfg.train.progressive.len() > 1 {
        let (model, stages) = engine::train_progressive(model, &cfg.train.progressive, &data, &opts)?;
        for s in &stages {
            let last = s.report.log.last().expect("at least one epoch");
            println!("stage {} frames: loss {:.4} top1 {:.2}", s.frames, last.loss, last.top1);
        }
        Checkpoint::of(&model).save(&cfg.out.join("final.ckpt"))?;
        model
    } else {
        let mut model = model;
        let report = engine::train(&mut model, &data, &opts)?;
        let last = report.log.last().expect("at least one epoch");
        println!("final epoch: loss {:.4} top1 {:.2} (best epoch {})", last.loss, last.top1, report.best_epoch);
        model
    };
    let eval_data = FrameStore::open(cfg.eval_manifest(), Some(cfg.arch.num_classes))?;
    let eval = engine::evaluate(
        &model,
        &eval_data,
        &EvalOptions {
            strategy: cfg.sampler.strategy,
            stride: cfg.sampler.stride,
            protocol: cfg.eval,
            preprocess: PreprocessSpec::new(cfg.data.eval_protocol).scaled(cfg.data.size),
            dataset: cfg.data.dataset.clone(),
        },
    )?;
    results::append_record(&cfg.out.join("results.csv"), &eval.record)?;
    println!("eval top1 {:.2} top5 {:.2}", eval.record.top1, eval.record.top5);
    println!("{}", cfg.out.join("final.ckpt").display());
    Ok(())
}

fn eval_preprocess(crops: usize, size: usize) -> Result<PreprocessSpec> {
    let protocol = match crops {
        1 => Protocol::MiniEval,
        3 => Protocol::FullEval,
        n => bail!("--crops must be 1 or 3, got {n}"),
    };
    Ok(PreprocessSpec::new(protocol).scaled(size))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = Checkpoint::load(&a.checkpoint)?.into_model(None, false, &[])?;
    let data = FrameStore::open(&a.manifest, Some(model.arch.num_classes))?;
    let protocol = EvalProtocol { level: a.level, clips: a.clips, crops: a.crops };
    let preprocess = eval_preprocess(a.crops, a.size)?;
    let opts = EvalOptions { strategy: a.sampling, stride: a.stride, protocol, preprocess, dataset: a.dataset };
    let eval = engine::evaluate(&model, &data, &opts)?;
    let path = a.out.join("results.csv");
    results::append_record(&path, &eval.record)?;
    if a.predictions {
        let p = a.out.join("predictions.csv");
        let mut w = csv::Writer::from_path(&p)?;
        let k = model.arch.num_classes;
        let mut header = vec!["video_id".to_string(), "label".into()];
        header.extend((0..k).map(|j| format!("p{j}")));
        w.write_record(&header)?;
        for (v, probs) in eval.probabilities.iter().enumerate() {
            let mut row = vec![datapipe::VideoSource::video_id(&data, v).to_string(), datapipe::VideoSource::label(&data, v).to_string()];
            row.extend(probs.iter().map(|p| format!("{p:.9}")));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    let r = &eval.record;
    println!("{} top1 {:.4} top5 {:.4} ({} predictions/video)", r.model_name(), r.top1, r.top5, eval.predictions_per_video);
    println!("{}", path.display());
    Ok(())
}

fn cmd_profile(a: ProfileArgs) -> Result<()> {
    let model = assemble::<f32>(&a.arch.spec(), Init::Scratch { seed: a.seed })?;
    let opts = ProfileOptions { budget_bytes: a.budget_mb << 20, max_batch_cap: a.max_batch, warmup: a.warmup, timed: a.iters };
    let report = profiler::profile(&model, a.input, &opts)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let path = a.out.join("profile.csv");
    let fresh = std::fs::metadata(&path).map_or(true, |m| m.len() == 0);
    let file = std::fs::OpenOptions::new().create(true).append(true).open(&path).with_context(|| path.display().to_string())?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(&report)?;
    w.flush()?;
    println!(
        "{} {}x{}x{}: flops {} params {} throughput {:.3} clips/s max_batch {}",
        report.model, report.frames, report.height, report.width, report.flops, report.params, report.throughput, report.max_batch
    );
    println!("{}", path.display());
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let records = results::read_records(&a.results)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let written = match a.report {
        Report::Disentangle => results::write_disentanglement(&a.out, &analysis::disentangle(&records, a.allow_partial)?)?,
        Report::TpGain => {
            let report = analysis::tp_gain(&records)?;
            for m in &report.missing {
                eprintln!("unpaired: {m}");
            }
            results::write_tp_gain(&a.out, &report)?
        }
        Report::AccVsFlops => results::write_acc_vs_flops(&a.out, &analysis::acc_vs_flops(&records))?,
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let set = datapipe::make_synthetic(a.task, a.videos, a.frames, a.size, a.seed)?;
    let store = set.write(&a.out)?;
    println!("{} videos", store.entries.len());
    println!("{}", a.out.join("manifest.csv").display());
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let mode = match a.mode {
        ModeArg::Train => Mode::Train,
        ModeArg::EvalClip => Mode::EvalClip,
        ModeArg::EvalVideo => Mode::EvalVideo,
    };
    let cfg = SamplerConfig::new(a.strategy, a.frames, mode).with_stride(a.stride).with_clips(a.clips);
    let videos: Vec<(String, usize)> = match (&a.manifest, a.num_frames) {
        (Some(m), _) => FrameStore::open(m, None)?.entries.into_iter().map(|e| (e.video_id, e.num_frames)).collect(),
        (None, Some(n)) => vec![("video".into(), n)],
        (None, None) => bail!("pass --num-frames or --manifest"),
    };
    let out: Box<dyn Write> = if a.dump == Path::new("-") {
        Box::new(std::io::stdout().lock())
    } else {
        Box::new(std::fs::File::create(&a.dump).with_context(|| a.dump.display().to_string())?)
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["video_id", "clip", "position", "frame"])?;
    for (v, (id, n)) in videos.iter().enumerate() {
        let mut rng = engine::stream_rng(a.seed, 2, 0, v as u64);
        let plan = sampling::sample(&cfg, *n, &mut rng)?;
        for (c, clip) in plan.clips.iter().enumerate() {
            for (p, f) in clip.iter().enumerate() {
                w.write_record([id.clone(), c.to_string(), p.to_string(), f.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
