//! `penkick`: generate, segment, train, evaluate and run the kick-direction model.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use penkick_core::checkpoint::Checkpoint;
use penkick_core::dataset::{read_sample_dir, write_sample_dir, Dataset, SegmentationInfo};
use penkick_core::evaluation::{
    export_attention_maps, run_ablation, threshold_sweep, write_metrics_csv, ConfusionMatrix, SweepData,
};
use penkick_core::frames::{FileFrames, FrameSource};
use penkick_core::model::{count_parameters, ModelConfig, ModelVariant};
use penkick_core::pipeline::{open_stream, read_stream, write_stream, Pipeline};
use penkick_core::render::RecordRenderer;
use penkick_core::segmentation::{build_sample, ThresholdConfig};
use penkick_core::split::Split;
use penkick_core::synthgen::{generate_dataset, generate_scenario, GeneratorConfig};
use penkick_core::training::{evaluate_split, train_with_progress, write_history_csv, TrainConfig};
use penkick_core::types::{DirectionLabel, FrameRecord};
use penkick_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "penkick", version, about = "Penalty-kick direction prediction")]
struct Cli {
    /// Seed for every random draw in the run.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Directory receiving all outputs.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Profile::Toy)]
    profile: Profile,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Profile {
    /// 64x64 frames, 3-stage backbone, 120 samples, batch 8.
    Toy,
    /// 224x224 frames, 5-stage backbone, 755 samples, batch 32.
    Full,
}

impl Profile {
    fn n_samples(self) -> usize {
        match self {
            Profile::Toy => 120,
            Profile::Full => 755,
        }
    }

    fn batch_size(self) -> usize {
        match self {
            Profile::Toy => 8,
            Profile::Full => 32,
        }
    }

    fn model(self, variant: ModelVariant, seed: u64) -> ModelConfig {
        match self {
            Profile::Toy => ModelConfig::toy(variant, seed),
            Profile::Full => ModelConfig::full(variant, seed),
        }
    }

    fn raster_hw(self) -> (u32, u32) {
        let (h, w) = self.model(ModelVariant::Full, 0).input_hw;
        (h as u32, w as u32)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a segmented synthetic dataset.
    Gen(GenArgs),
    /// Segment one detection/pose stream into an 8-frame sample.
    Segment(SegmentArgs),
    /// Train one model variant.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Train and test all four variants on one dataset.
    Ablate(AblateArgs),
    /// Train the full model at several distance thresholds.
    Sweep(SweepArgs),
    /// Run the streaming pipeline over a recorded stream.
    Infer(InferArgs),
    /// Export attention maps of one sample.
    Attn(AttnArgs),
}

#[derive(Debug, Args, Serialize)]
struct GeneratorArgs {
    /// Number of scenarios (profile default when omitted).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    cue_strength: Option<f64>,
    #[arg(long)]
    cue_onset: Option<f64>,
}

impl GeneratorArgs {
    fn resolve(&self) -> GeneratorConfig {
        let mut g = GeneratorConfig::default();
        if let Some(s) = self.cue_strength {
            g.cue_strength = s;
        }
        if let Some(o) = self.cue_onset {
            g.cue_onset = o;
        }
        g
    }
}

#[derive(Debug, Args, Serialize)]
struct GenArgs {
    #[command(flatten)]
    generator: GeneratorArgs,
    /// Foot-to-ball ratio at which each kick is cut.
    #[arg(long, default_value_t = 0.15)]
    threshold: f64,
    /// Also write every raw stream as JSONL under `streams/`.
    #[arg(long)]
    streams: bool,
}

#[derive(Debug, Args, Serialize)]
struct SegmentArgs {
    /// JSONL stream or directory of per-frame JSON records.
    #[arg(long)]
    stream: PathBuf,
    #[arg(long, default_value_t = 0.15)]
    threshold: f64,
    /// Label stored with the sample.
    #[arg(long, default_value = "middle")]
    label: DirectionLabel,
}

#[derive(Debug, Args, Serialize)]
struct OptimArgs {
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Mini-batch size (profile default when omitted).
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
}

impl OptimArgs {
    fn resolve(&self, profile: Profile, seed: u64) -> Result<TrainConfig> {
        let mut tc = TrainConfig::new(seed);
        tc.learning_rate = self.lr;
        tc.batch_size = self.batch.unwrap_or(profile.batch_size());
        tc.max_epochs = self.epochs;
        tc.patience = self.patience;
        tc.validate()?;
        Ok(tc)
    }
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// Dataset manifest or its directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "FULL")]
    variant: ModelVariant,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
}

#[derive(Debug, Args, Serialize)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    /// Comma-separated distance thresholds.
    #[arg(long, value_delimiter = ',', default_value = "0.15,0.25,0.35")]
    thresholds: Vec<f64>,
    #[command(flatten)]
    generator: GeneratorArgs,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Debug, Args, Serialize)]
struct InferArgs {
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 0.15)]
    threshold: f64,
}

#[derive(Debug, Args, Serialize)]
struct AttnArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Sample directory holding `sample.json` and its frames.
    #[arg(long)]
    sample: PathBuf,
}

/// Written next to every run's outputs.
#[derive(Serialize)]
struct ResolvedConfig<'a, A: Serialize, R: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    profile: Profile,
    args: &'a A,
    resolved: R,
}

struct Ctx {
    seed: u64,
    out_dir: PathBuf,
    profile: Profile,
}

impl Ctx {
    fn prepare(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))
    }

    fn write_config<A: Serialize, R: Serialize>(&self, command: &str, args: &A, resolved: R) -> Result<()> {
        let cfg = ResolvedConfig {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            profile: self.profile,
            args,
            resolved,
        };
        let path = self.out_dir.join(format!("{command}.config.json"));
        let text = serde_json::to_string_pretty(&cfg).expect("config serialises");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        let text = serde_json::to_string_pretty(value).expect("value serialises");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Renders synthetic records directly; records that name an image file are
/// read from disk relative to the stream's directory.
fn frame_source(stream_path: &Path, first: Option<&FrameRecord>) -> Box<dyn FrameSource> {
    match first {
        Some(r) if r.image_ref.is_some() => {
            let root = if stream_path.is_dir() {
                stream_path.to_path_buf()
            } else {
                stream_path.parent().map(Path::to_path_buf).unwrap_or_default()
            };
            Box::new(FileFrames::new(root))
        }
        _ => Box::new(RecordRenderer::default()),
    }
}

fn gen(ctx: &Ctx, args: &GenArgs) -> Result<()> {
    let n = args.generator.n.unwrap_or(ctx.profile.n_samples());
    let generator = args.generator.resolve();
    let threshold = ThresholdConfig::new(args.threshold)?;
    let corpus = generate_dataset(n, ctx.seed, &generator, &threshold, ctx.profile.raster_hw())?;
    ctx.prepare()?;
    let dir = ctx.out_dir.join("dataset");
    corpus.dataset.save(&dir, &corpus.segmentation)?;
    if args.streams {
        let sdir = dir.join("streams");
        fs::create_dir_all(&sdir).map_err(|e| Error::io(&sdir, e))?;
        for (entry, params) in corpus.dataset.manifest.samples.iter().zip(&corpus.params) {
            let scenario = generate_scenario(params)?;
            write_stream(&sdir.join(format!("{}.jsonl", entry.sample_id)), &scenario.stream)?;
        }
    }
    ctx.write_config(
        "gen",
        args,
        serde_json::json!({
            "n": n,
            "generator": generator,
            "threshold": threshold,
            "raster_hw": ctx.profile.raster_hw(),
        }),
    )?;
    let ds = &corpus.dataset;
    println!(
        "wrote {} samples to {} (train {}, val {}, test {})",
        n,
        dir.display(),
        ds.manifest.split_len(Split::Train),
        ds.manifest.split_len(Split::Val),
        ds.manifest.split_len(Split::Test)
    );
    Ok(())
}

fn segment(ctx: &Ctx, args: &SegmentArgs) -> Result<()> {
    let cfg = ThresholdConfig::new(args.threshold)?;
    let stream = read_stream(&args.stream)?;
    let source = frame_source(&args.stream, stream.first());
    let id = args
        .stream
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sample".into());
    let seg = build_sample(&stream, &cfg, args.label, &id, source.as_ref(), ctx.profile.raster_hw())?;
    let info = SegmentationInfo::new(&seg, cfg.ratio);
    ctx.prepare()?;
    let dir = ctx.out_dir.join("segments").join(&id);
    write_sample_dir(&dir, &seg.sample, Some(&info))?;
    ctx.write_config(
        "segment",
        args,
        serde_json::json!({ "threshold": cfg, "raster_hw": ctx.profile.raster_hw() }),
    )?;
    println!(
        "endpoint frame {} (position {}), indices {:?}, {} repair(s) -> {}",
        info.endpoint_frame,
        info.endpoint,
        info.indices,
        info.repairs.len(),
        dir.display()
    );
    Ok(())
}

fn check_input_size(model: &ModelConfig, ds: &Dataset) -> Result<()> {
    match ds.frame_hw() {
        Some(hw) if hw != model.input_hw => Err(Error::Shape {
            what: "dataset frames (pass the matching --profile)".into(),
            expected: vec![model.input_hw.0, model.input_hw.1],
            actual: vec![hw.0, hw.1],
        }),
        _ => Ok(()),
    }
}

fn train(ctx: &Ctx, args: &TrainArgs) -> Result<()> {
    let ds = Dataset::load(&args.data)?;
    let model_cfg = ctx.profile.model(args.variant, ctx.seed);
    let tc = args.optim.resolve(ctx.profile, ctx.seed)?;
    check_input_size(&model_cfg, &ds)?;
    let ck = train_with_progress(&ds, &model_cfg, &tc, |r| {
        println!(
            "epoch {:>3}  train_loss {:.4}  val_loss {:.4}  train_acc {:.2}  val_acc {:.2}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            100.0 * r.train_acc,
            100.0 * r.val_acc
        );
    })?;
    ctx.prepare()?;
    let path = ctx.out_dir.join("model.ckpt");
    ck.save(&path)?;
    write_history_csv(&ctx.out_dir.join("history.csv"), &ck.history)?;
    ctx.write_config(
        "train",
        args,
        serde_json::json!({
            "model": model_cfg,
            "train": tc,
            "parameter_count": count_parameters(&model_cfg),
        }),
    )?;
    println!(
        "best epoch {} of {}; checkpoint {}",
        ck.best_epoch,
        ck.history.len(),
        path.display()
    );
    Ok(())
}

fn eval(ctx: &Ctx, args: &EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.ckpt)?;
    let ds = Dataset::load(&args.data)?;
    check_input_size(&ck.model.config, &ds)?;
    let metrics = evaluate_split(&ck.model, &ds, args.split, ctx.profile.batch_size())?;
    let confusion = ConfusionMatrix::from_metrics(&metrics)?;
    ctx.prepare()?;
    let split = args.split.name();
    write_metrics_csv(
        &ctx.out_dir.join(format!("metrics_{split}.csv")),
        &[(args.split, &metrics)],
    )?;
    confusion.write_csv(&ctx.out_dir.join(format!("confusion_{split}.csv")))?;
    ctx.write_config("eval", args, serde_json::json!({ "model": ck.model.config }))?;
    println!(
        "{split} accuracy (%): {:.2}  loss: {:.4}",
        confusion.percent()?,
        metrics.loss
    );
    print!("{confusion}");
    Ok(())
}

fn ablate(ctx: &Ctx, args: &AblateArgs) -> Result<()> {
    let ds = Dataset::load(&args.data)?;
    let base = ctx.profile.model(ModelVariant::Full, ctx.seed);
    let tc = args.optim.resolve(ctx.profile, ctx.seed)?;
    check_input_size(&base, &ds)?;
    let report = run_ablation(&ds, &base, &tc, |v, r| {
        eprintln!("{v} epoch {:>3}  val_loss {:.4}", r.epoch, r.val_loss);
    });
    ctx.prepare()?;
    report.write_csv(&ctx.out_dir.join("ablation.csv"))?;
    ctx.write_config("ablate", args, serde_json::json!({ "model": base, "train": tc }))?;
    print!("{report}");
    Ok(())
}

fn sweep(ctx: &Ctx, args: &SweepArgs) -> Result<()> {
    let data = SweepData {
        n_samples: args.generator.n.unwrap_or(ctx.profile.n_samples()),
        seed: ctx.seed,
        generator: args.generator.resolve(),
        raster_hw: ctx.profile.raster_hw(),
    };
    let model_cfg = ctx.profile.model(ModelVariant::Full, ctx.seed);
    let tc = args.optim.resolve(ctx.profile, ctx.seed)?;
    let report = threshold_sweep(&args.thresholds, &data, &model_cfg, &tc, |t, r| {
        eprintln!("threshold {t} epoch {:>3}  val_loss {:.4}", r.epoch, r.val_loss);
    })?;
    ctx.prepare()?;
    report.write_csv(&ctx.out_dir.join("sweep.csv"))?;
    ctx.write_config(
        "sweep",
        args,
        serde_json::json!({
            "n": data.n_samples,
            "generator": data.generator,
            "raster_hw": data.raster_hw,
            "model": model_cfg,
            "train": tc,
        }),
    )?;
    print!("{report}");
    Ok(())
}

fn infer(ctx: &Ctx, args: &InferArgs) -> Result<()> {
    let cfg = ThresholdConfig::new(args.threshold)?;
    let ck = Checkpoint::load(&args.ckpt)?;
    let first = open_stream(&args.stream)?.next().transpose()?;
    let source = frame_source(&args.stream, first.as_ref());
    let mut pipeline = Pipeline::new(&ck.model, source.as_ref(), cfg)?;
    let result = pipeline.run(open_stream(&args.stream)?)?;
    ctx.prepare()?;
    ctx.write_config(
        "infer",
        args,
        serde_json::json!({ "threshold": cfg, "model": ck.model.config }),
    )?;
    match result {
        Some(p) => {
            ctx.write_json("prediction.json", &p)?;
            println!("{}", serde_json::to_string(&p).expect("prediction serialises"));
        }
        None => {
            ctx.write_json("prediction.json", &serde_json::Value::Null)?;
            println!(
                "no prediction: threshold never reached (phase {:?})",
                pipeline.state.phase
            );
        }
    }
    Ok(())
}

fn attn(ctx: &Ctx, args: &AttnArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.ckpt)?;
    let (sample, _) = read_sample_dir(&args.sample)?;
    ctx.prepare()?;
    let dir = ctx.out_dir.join("attention").join(&sample.sample_id);
    let export = export_attention_maps(&ck.model, &sample, &dir)?;
    ctx.write_config("attn", args, serde_json::json!({ "model": ck.model.config }))?;
    let (lo, hi) = export
        .raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    println!(
        "wrote {} attention maps to {} (range {lo:.4}..{hi:.4})",
        export.images.len(),
        dir.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        seed: cli.seed,
        out_dir: cli.out_dir,
        profile: cli.profile,
    };
    match &cli.command {
        Command::Gen(a) => gen(&ctx, a),
        Command::Segment(a) => segment(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Ablate(a) => ablate(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Infer(a) => infer(&ctx, a),
        Command::Attn(a) => attn(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {e}", e.class_name());
            ExitCode::from(1)
        }
    }
}
