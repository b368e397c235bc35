use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grembed_cli::datasets::{dataset_manifest, DatasetKind};
use grembed_cli::{generate_toy_dataset, run_stage, EvalMode, Stage, StageContext, StageError};
use grembed_core::RunConfig;

#[derive(Parser)]
#[command(name = "grembed-fastgcn", version, about = "Region-graph embedding and sampled GCN classification of object images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment images and write one region graph per manifest entry
    Extract(StageArgs),
    /// Compute the pairwise graph distance matrix
    Match(StageArgs),
    /// Embed graphs as distances to prototypes
    Embed(StageArgs),
    /// Build the thresholded, normalized dataset graph
    Graph(StageArgs),
    /// Train the GCN (or one binary model per class with --mode ova)
    Train(StageArgs),
    /// Evaluate the trained model(s) on the test split
    Eval(StageArgs),
    /// Run every stage in order
    Pipeline(StageArgs),
    /// Render the synthetic three-class toy dataset
    Toy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = grembed_cli::toy::TOY_SEED)]
        seed: u64,
    },
    /// Write a protocol-split manifest for a user-provided dataset directory
    Dataset {
        #[arg(long, value_enum)]
        kind: DatasetKind,
        #[arg(long)]
        root: PathBuf,
        /// Manifest file to write
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        limit_classes: Option<usize>,
    },
}

#[derive(Args)]
struct StageArgs {
    /// Key-value configuration file; defaults to the eth80 preset
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = EvalMode::Multiclass)]
    mode: EvalMode,
    #[arg(long)]
    limit_classes: Option<usize>,
    /// Override a configuration key, e.g. `--set tau=0.3`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, short)]
    quiet: bool,
}

fn load_config(args: &StageArgs) -> Result<RunConfig, StageError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| StageError::Missing(format!("{}: {e}", path.display())))?;
            RunConfig::parse(&text).map_err(|e| StageError::Invalid(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| StageError::Invalid(format!("--set expects KEY=VALUE, found {kv:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| StageError::Invalid(format!("--set {kv}: {e}")))?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| StageError::Invalid(e.to_string()))?;
    Ok(cfg)
}

fn run(stage: Stage, args: StageArgs) -> Result<(), StageError> {
    let config = load_config(&args)?;
    let mut ctx = StageContext::new(config, args.manifest, args.out);
    ctx.workers = args.workers.max(1);
    ctx.mode = args.mode;
    ctx.limit_classes = args.limit_classes;
    ctx.progress = !args.quiet;
    for outcome in run_stage(stage, &ctx)? {
        print!("{}", outcome.report);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Extract(a) => run(Stage::Extract, a),
        Command::Match(a) => run(Stage::Match, a),
        Command::Embed(a) => run(Stage::Embed, a),
        Command::Graph(a) => run(Stage::Graph, a),
        Command::Train(a) => run(Stage::Train, a),
        Command::Eval(a) => run(Stage::Eval, a),
        Command::Pipeline(a) => run(Stage::Pipeline, a),
        Command::Toy { out, seed } => generate_toy_dataset(&out, seed)
            .map(|m| println!("wrote {} images and {}", m.len(), out.join("manifest.tsv").display()))
            .map_err(StageError::Other),
        Command::Dataset { kind, root, out, seed, limit_classes } => dataset_manifest(kind, &root, seed, limit_classes)
            .and_then(|m| {
                m.write(&out)?;
                println!("wrote {} entries ({} classes) to {}", m.len(), m.class_names().len(), out.display());
                Ok(())
            })
            .map_err(StageError::Other),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
