//! `ovvis` command line: run a bundle through tracking and classification,
//! evaluate predictions, generate synthetic scenario bundles, and sweep
//! matching strategies.
//!
//! Exit codes: 0 on success, 1 on input errors (bad shapes, malformed
//! data, invalid arguments), 2 on I/O failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ovvis_core::error::Error;
use ovvis_core::evaluator::{default_thresholds, evaluate, VideoPair};
use ovvis_core::matcher::Strategy;
use ovvis_core::pipeline::{
    self, run_video_to_file, synth_generate, GroundTruthFile, NovelFile, PredictionsFile,
    ScenarioKind, ScenarioSpec,
};

#[derive(Parser)]
#[command(name = "ovvis", version, about = "Open-vocabulary video instance segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track and classify one bundle, writing a predictions JSON.
    Run(RunArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Generate a deterministic synthetic bundle.
    Synth(SynthArgs),
    /// Run a strategy sweep over a directory of bundles.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyName {
    Adjacent,
    Longterm,
    Topk,
}

#[derive(Args)]
struct RunArgs {
    /// Bundle directory containing manifest.json.
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, value_enum)]
    strategy: StrategyName,
    /// Memory-bank size (topk only).
    #[arg(long = "T", default_value_t = 9)]
    memory: usize,
    /// Number of selected frames (topk only).
    #[arg(long = "K", default_value_t = 5)]
    k: usize,
    /// Output predictions JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions JSON produced by `run`.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth JSON.
    #[arg(long)]
    gt: PathBuf,
    /// Novel-category JSON ({"novel_categories": [...]}).
    #[arg(long)]
    novel: PathBuf,
    /// Optional path for the result JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// stable | disappear_reappear | occlusion_swap | noisy_frame
    #[arg(long)]
    kind: String,
    #[arg(long)]
    seed: u64,
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of instances.
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 15)]
    frames: usize,
    /// Embedding (and text) dimension.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Gaussian noise scale added to embeddings.
    #[arg(long, default_value_t = 0.0)]
    noise: f32,
    /// Disappearance window length.
    #[arg(long, default_value_t = 2)]
    window: usize,
}

#[derive(Args)]
struct AblateArgs {
    /// Directory whose subdirectories are bundles.
    #[arg(long)]
    bundles: PathBuf,
    /// "default" for the built-in T/K sweep, or a comma-separated list
    /// like "adjacent,longterm,9x5,7x3".
    #[arg(long, default_value = "default")]
    grid: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn parse_strategy(name: StrategyName, memory: usize, k: usize) -> Result<Strategy, Error> {
    match name {
        StrategyName::Adjacent => Ok(Strategy::Adjacent),
        StrategyName::Longterm => Ok(Strategy::LongTerm),
        StrategyName::Topk => Strategy::top_k(memory, k),
    }
}

fn parse_grid(grid: &str) -> Result<Vec<Strategy>, Error> {
    if grid == "default" {
        return Ok(pipeline::default_strategy_grid());
    }
    let mut out = Vec::new();
    for item in grid.split(',') {
        let item = item.trim();
        match item {
            "adjacent" => out.push(Strategy::Adjacent),
            "longterm" => out.push(Strategy::LongTerm),
            _ => {
                let (t, k) = item.split_once('x').ok_or_else(|| {
                    Error::input(format!(
                        "bad grid entry '{item}': expected adjacent, longterm, or TxK like 9x5"
                    ))
                })?;
                let parse = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| Error::input(format!("bad grid number '{s}'")))
                };
                out.push(Strategy::top_k(parse(t)?, parse(k)?)?);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::input("empty strategy grid".to_string()));
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(args) => {
            let strategy = parse_strategy(args.strategy, args.memory, args.k)?;
            run_video_to_file(&args.bundle, strategy, &args.out)
        }
        Command::Eval(args) => {
            let preds: PredictionsFile = pipeline::bundle::read_json(&args.pred)?;
            let gt: GroundTruthFile = pipeline::bundle::read_json(&args.gt)?;
            let novel: NovelFile = pipeline::bundle::read_json(&args.novel)?;
            let pairs = vec![VideoPair {
                predictions: preds.predictions,
                ground_truth: gt.to_ground_truth(),
            }];
            let result = evaluate(&pairs, &novel.to_set(), &default_thresholds())?;
            match args.out {
                Some(path) => pipeline::bundle::write_json_atomic(&path, &result)?,
                None => println!(
                    "{}",
                    serde_json::to_string_pretty(&result).expect("result serialises")
                ),
            }
            Ok(())
        }
        Command::Synth(args) => {
            let kind: ScenarioKind = args.kind.parse()?;
            let spec = ScenarioSpec {
                kind,
                num_instances: args.n,
                frames: args.frames,
                embedding_dim: args.dim,
                noise: args.noise,
                window: args.window,
                seed: args.seed,
            };
            synth_generate(&spec, &args.out)?;
            Ok(())
        }
        Command::Ablate(args) => {
            let strategies = parse_grid(&args.grid)?;
            pipeline::ablate_to_csv(&args.bundles, &strategies, &args.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
