//! `oodseg`: command line driver for the OoD segmentation pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod config;
mod experiment;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oodseg::par::{self, Execution};
use oodseg::{Error, ErrorClass, Result};

use config::FileConfig;

#[derive(Parser, Debug)]
#[command(name = "oodseg", version, about = "Entropy-based OoD segmentation pipeline")]
struct Cli {
    /// JSON config file; command line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (features, labels and manifests).
    Gen(stages::GenArgs),
    /// Train the toy segmentation network, or fine-tune it with `--init`.
    Train(stages::TrainArgs),
    /// Run a model over a manifest and write softmax and heat maps.
    Infer(stages::InferArgs),
    /// Threshold a heat map into OoD segments.
    Detect(stages::DetectArgs),
    /// Compute per-segment metrics as CSV.
    Features(stages::DetectArgs),
    /// Fit the meta classifier on a labelled feature CSV.
    Meta(stages::MetaArgs),
    /// Least angle regression path over the segment metrics.
    Lars(stages::LarsArgs),
    /// Pixel and segment evaluation of a heat map.
    Eval(stages::EvalArgs),
    /// Baseline versus OoD training over several seeds.
    Sweep(experiment::SweepArgs),
    /// Render a sweep or eval report as markdown.
    Report(experiment::ReportArgs),
}

/// Settings shared by every subcommand.
pub struct Ctx {
    pub seed: u64,
    pub out: PathBuf,
    pub exec: Execution,
    pub file: FileConfig,
}

impl Ctx {
    pub fn say(&self, msg: impl AsRef<str>) {
        log::info!("{}", msg.as_ref());
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::empty(),
    };
    let threads = cli.threads.or(file.threads()?);
    let exec = match threads {
        Some(0) => return Err(Error::InvalidArgument("--threads must be at least 1".into())),
        Some(1) => Execution::Sequential,
        Some(n) => {
            par::init_threads(n)?;
            Execution::Parallel
        }
        None => Execution::Parallel,
    };
    let ctx = Ctx {
        seed: cli.seed.or(file.seed()?).unwrap_or(0),
        out: cli.out.clone().or(file.out()?).unwrap_or_else(|| PathBuf::from("out")),
        exec,
        file,
    };
    match cli.command {
        Command::Gen(a) => stages::gen(&ctx, a),
        Command::Train(a) => stages::train(&ctx, a),
        Command::Infer(a) => stages::infer(&ctx, a),
        Command::Detect(a) => stages::detect_cmd(&ctx, a),
        Command::Features(a) => stages::features_cmd(&ctx, a),
        Command::Meta(a) => stages::meta(&ctx, a),
        Command::Lars(a) => stages::lars(&ctx, a),
        Command::Eval(a) => stages::eval_cmd(&ctx, a),
        Command::Sweep(a) => {
            let report = experiment::sweep(&ctx, a)?;
            match report.failure {
                Some(f) => {
                    eprintln!("oodseg: sweep incomplete, seed {} failed: {}", f.seed, f.error);
                    std::process::exit(exit_code(f.class).into());
                }
                None => Ok(()),
            }
        }
        Command::Report(a) => experiment::report(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("oodseg: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
