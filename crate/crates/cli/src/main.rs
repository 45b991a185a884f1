//! `vts`: train, encode and evaluate vision transformer hashing models.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vts_core::data::Split;
use vts_core::head::FeatureMode;
use vts_core::objectives::ObjectiveKind;

#[derive(Parser)]
#[command(name = "vts", version, about = "Vision transformer hashing for image retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fine-tune a model under one hashing objective and keep the best checkpoint.
    Train(TrainArgs),
    /// Encode one split of a dataset into a binary code-set file.
    Encode(EncodeArgs),
    /// Mean average precision of query codes against database codes.
    Eval(EvalArgs),
    /// Precision-recall curve on the 21-point recall grid, as CSV.
    PrCurve(PrArgs),
    /// Generate a synthetic class-conditional dataset file.
    MakeSynth(SynthArgs),
    /// Summarize a weight, code-set or dataset file.
    InspectWeights(InspectArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// CIFAR-10 binary directory or dataset file; the synth protocol generates its data when omitted
    #[arg(long)]
    data: Option<PathBuf>,
    /// Protocol preset (cifar10@54000, cifar10@all, imagenet, nus-wide, coco, synth) or JSON spec path [default: synth]
    #[arg(long)]
    protocol: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config file; flags take precedence over its keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Encoder: tiny, vts16 or vts32 [default: tiny]
    #[arg(long)]
    model: Option<String>,
    /// Hashing objective [default: csq]
    #[arg(long)]
    objective: Option<ObjectiveKind>,
    /// Code length in bits [default: 16]
    #[arg(long)]
    bits: Option<usize>,
    /// Encoder rows fed to the hash head: all or cls_only [default: all]
    #[arg(long, value_parser = parse_feature_mode)]
    feature_mode: Option<FeatureMode>,
    #[command(flatten)]
    data: DataArgs,
    /// Seed for splits, initialization, shuffling and dropout [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// [default: 150]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Evaluate every this many epochs (and after the last) [default: 30, or --epochs if smaller]
    #[arg(long)]
    eval_every: Option<usize>,
    /// Adam learning rate [default: 1e-5]
    #[arg(long)]
    lr: Option<f64>,
    /// Skip database items whose id equals the query's during evaluation [default: false]
    #[arg(long)]
    exclude_self: bool,
    /// Best-model weight file; a `.json` sidecar is written next to it [default: model.vtsw]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics CSV [default: the output path with a .csv extension]
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Save a resumable checkpoint here after every epoch
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint written by --checkpoint; its saved config wins
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    /// Model weight file with its `.json` sidecar
    #[arg(long)]
    weights: PathBuf,
    /// train, query or database
    #[arg(long, default_value = "database")]
    split: Split,
    #[command(flatten)]
    data: DataArgs,
    /// Seed used to draw the protocol splits
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output code-set file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    database: PathBuf,
    /// Retrieved items per query [default: database size]
    #[arg(long)]
    cutoff: Option<usize>,
    /// Skip database items whose id equals the query's
    #[arg(long)]
    exclude_self: bool,
    /// Also write the precision-recall CSV here
    #[arg(long)]
    pr_out: Option<PathBuf>,
}

#[derive(Args)]
struct PrArgs {
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    database: PathBuf,
    #[arg(long)]
    exclude_self: bool,
    /// Output CSV; printed to stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset file
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 450)]
    per_class: usize,
    #[arg(long, default_value_t = 32)]
    image_size: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    /// Per-pixel Gaussian noise std
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long)]
    multi_label: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also draw and store splits under this protocol
    #[arg(long)]
    protocol: Option<String>,
    /// Seed for the stored splits
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args)]
struct InspectArgs {
    /// A VTSW weight file, VTSC code-set file or VTSD dataset file
    path: PathBuf,
}

fn parse_feature_mode(s: &str) -> Result<FeatureMode, String> {
    match s {
        "all" => Ok(FeatureMode::All),
        "cls_only" | "cls-only" | "cls" => Ok(FeatureMode::ClsOnly),
        _ => Err(format!("unknown feature mode '{s}' (all, cls_only)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => {
            let flags = config::TrainFlags {
                model: a.model,
                objective: a.objective,
                bits: a.bits,
                feature_mode: a.feature_mode,
                protocol: a.data.protocol,
                data: a.data.data,
                seed: a.seed,
                epochs: a.epochs,
                batch_size: a.batch_size,
                eval_every: a.eval_every,
                lr: a.lr,
                exclude_self: a.exclude_self,
                out: a.out,
                metrics: a.metrics,
            };
            commands::train(flags, a.config.as_deref(), a.checkpoint.as_deref(), a.resume.as_deref())
        }
        Command::Encode(a) => commands::encode(&a.weights, a.split, a.data.data.as_deref(), a.data.protocol.as_deref(), a.seed, &a.out),
        Command::Eval(a) => commands::eval(&a.query, &a.database, a.cutoff, a.exclude_self, a.pr_out.as_deref()),
        Command::PrCurve(a) => commands::pr_curve(&a.query, &a.database, a.exclude_self, a.out.as_deref()),
        Command::MakeSynth(a) => {
            let cfg = vts_core::data::SynthConfig {
                classes: a.classes,
                per_class: a.per_class,
                image_size: a.image_size,
                channels: a.channels,
                noise: a.noise,
                multi_label: a.multi_label,
                seed: a.seed,
            };
            commands::make_synth(&cfg, a.protocol.as_deref(), a.split_seed, &a.out)
        }
        Command::InspectWeights(a) => commands::inspect(&a.path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
