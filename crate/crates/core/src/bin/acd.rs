use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use acd::config::PipelineConfig;
use acd::pipeline::{self, Stage};
use acd::synth::{self, SyntheticSpec};
use acd::Error;

#[derive(Parser)]
#[command(name = "acd", version, about = "Discover action concepts from image-sentence corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract verb-object concepts from the parsed corpus
    Extract(StageArgs),
    /// Keep concepts whose images are visually consistent
    Verify(StageArgs),
    /// Build fused visual and linguistic representations
    Represent(StageArgs),
    /// Cluster concepts at every configured fusion weight
    Cluster(StageArgs),
    /// Train one classifier per pooled cluster
    Train(StageArgs),
    /// Boost cluster classifiers into per-tag ensembles
    Ensemble(StageArgs),
    /// Held-out evaluation of every pooled cluster
    Evaluate(StageArgs),
    /// Fusion-weight and compactness sweeps
    Sweep(StageArgs),
    /// Run every stage in order
    All(StageArgs),
    /// Write a synthetic corpus with planted structure
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "c-const")]
    c_const: Option<usize>,
    #[arg(long)]
    gate: Option<f64>,
    #[arg(long = "min-count")]
    min_count: Option<usize>,
    #[arg(long = "neg-ratio")]
    neg_ratio: Option<usize>,
    #[arg(long)]
    force: bool,
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
}

impl StageArgs {
    fn config(&self) -> acd::Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.alpha {
            config.alpha = v;
        }
        if let Some(v) = self.c_const {
            config.c_const = v;
        }
        if let Some(v) = self.gate {
            config.gate = v;
        }
        if let Some(v) = self.min_count {
            config.min_count = v;
        }
        if let Some(v) = self.neg_ratio {
            config.neg_ratio = v;
        }
        if let Some(v) = &self.out_dir {
            config.out_dir = v.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

fn run(cli: Cli) -> acd::Result<()> {
    let (stage, args) = match cli.command {
        Command::Synth { spec, out_dir } => {
            let spec = match spec {
                Some(path) => SyntheticSpec::load(&path)?,
                None => SyntheticSpec::default(),
            };
            let files = synth::generate(&spec)?.write(&out_dir, &spec)?;
            println!("{}", files.config.display());
            return Ok(());
        }
        Command::All(args) => (None, args),
        Command::Extract(a) => (Some(Stage::Extract), a),
        Command::Verify(a) => (Some(Stage::Verify), a),
        Command::Represent(a) => (Some(Stage::Represent), a),
        Command::Cluster(a) => (Some(Stage::Cluster), a),
        Command::Train(a) => (Some(Stage::Train), a),
        Command::Ensemble(a) => (Some(Stage::Ensemble), a),
        Command::Evaluate(a) => (Some(Stage::Evaluate), a),
        Command::Sweep(a) => (Some(Stage::Sweep), a),
    };
    let config = args.config()?;
    match stage {
        Some(stage) => pipeline::run_stage(&config, stage, args.force).map(|_| ()),
        None => pipeline::run_all(&config, args.force).map(|_| ()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
