mod commands;
mod config;
mod error;
mod plot;
mod registry;

use std::path::PathBuf;
use std::process::ExitCode;

use aae_core::dataset::WeightScheme;
use clap::{error::ErrorKind, Args, CommandFactory, Parser, Subcommand, ValueEnum};

use commands::eval::EvalSplit;
use config::RunConfig;
use error::CliError;
use registry::RegistryEntry;

#[derive(Parser)]
#[command(name = "aae", version, about = "Adversarial autoencoder classifier: data, training, evaluation, reports")]
struct Cli {
    /// TOML config, or a run.json echo from a previous run.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Global seed, overriding the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic dataset (requires --out).
    GenData {
        #[arg(long)]
        count: Option<usize>,
        /// Comma-separated class proportions.
        #[arg(long, value_delimiter = ',')]
        proportions: Option<Vec<f64>>,
        #[arg(long)]
        image_size: Option<usize>,
    },
    /// Segment, crop and resize every image of a manifest.
    Preprocess {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Also write the segmentation masks.
        #[arg(long)]
        save_roi: bool,
    },
    /// Train on one fold, all folds (--cv), or the classifier-only baseline.
    Train(TrainFlags),
    /// Evaluate a checkpoint on a split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "validation")]
        split: SplitArg,
    },
    /// Comparison table and discriminator-loss plot over run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Run every fold and write cv_summary.json.
    #[arg(long)]
    cv: bool,
    /// Classification loss only; decoder and discriminator are never updated.
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, value_enum)]
    weight_scheme: Option<SchemeArg>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    no_augment: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    None,
    Balanced,
    InverseSqrt,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Validation,
    Train,
    All,
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenData { .. } => "gen-data",
        Command::Preprocess { .. } => "preprocess",
        Command::Train(_) => "train",
        Command::Eval { .. } => "eval",
        Command::Report { .. } => "report",
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        config.out = Some(out.clone());
    }
    Ok(config)
}

/// Runs the command; `out` is set to its output directory before any work starts.
fn dispatch(cli: Cli, run_id: &str, out_dir: &mut Option<PathBuf>) -> Result<(), CliError> {
    let config = load_config(&cli)?;
    let default_out = || {
        config
            .out
            .clone()
            .unwrap_or_else(|| registry::workspace_root().join("runs").join(run_id))
    };
    match cli.command {
        Command::GenData { count, proportions, image_size } => {
            let Some(out) = config.out.clone() else {
                let mut cmd = Cli::command();
                cmd.build();
                let usage = cmd.find_subcommand_mut("gen-data").expect("subcommand").render_usage();
                return Err(CliError::Config(format!("gen-data needs an output directory: --out DIR\n\n{usage}")));
            };
            *out_dir = Some(out.clone());
            let args = commands::gen_data::GenDataArgs { count, proportions, image_size };
            commands::gen_data::run(config, args, &out)
        }
        Command::Preprocess { manifest, save_roi } => {
            let out = default_out();
            *out_dir = Some(out.clone());
            let args = commands::preprocess::PreprocessArgs { manifest, save_roi };
            commands::preprocess::run(config, args, &out)
        }
        Command::Train(f) => {
            let out = default_out();
            *out_dir = Some(out.clone());
            let args = commands::train::TrainArgs {
                manifest: f.manifest,
                cv: f.cv,
                baseline: f.baseline,
                fold: f.fold,
                folds: f.folds,
                weight_scheme: f.weight_scheme.map(|s| match s {
                    SchemeArg::None => WeightScheme::None,
                    SchemeArg::Balanced => WeightScheme::Balanced,
                    SchemeArg::InverseSqrt => WeightScheme::InverseSqrt,
                }),
                lr: f.lr,
                batch_size: f.batch_size,
                max_epochs: f.max_epochs,
                patience: f.patience,
                no_augment: f.no_augment,
            };
            commands::train::run(config, args, &out)
        }
        Command::Eval { checkpoint, manifest, split } => {
            let split = match split {
                SplitArg::Validation => EvalSplit::Validation,
                SplitArg::Train => EvalSplit::Train,
                SplitArg::All => EvalSplit::All,
            };
            let explicit = cli.config.is_some().then(|| config.clone());
            *out_dir = config.out.clone();
            let args = commands::eval::EvalArgs { checkpoint, manifest, split };
            commands::eval::run(explicit, args, config.out.as_deref())
        }
        Command::Report { runs } => {
            let out = config
                .out
                .clone()
                .unwrap_or_else(|| registry::workspace_root().join("report"));
            *out_dir = Some(out.clone());
            commands::report::run(&runs, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };

    let root = registry::workspace_root();
    let command = command_name(&cli.command).to_owned();
    let echo = load_config(&cli).map(|c| c.echo()).unwrap_or_default();
    let run_id = registry::new_run_id(&root, &echo);
    let mut out = None;
    let (status, code) = match dispatch(cli, &run_id, &mut out) {
        Ok(()) => ("ok", 0),
        Err(e) => {
            eprintln!("error: {e}");
            ("failed", e.exit_code())
        }
    };
    let entry = RegistryEntry {
        id: run_id,
        command,
        status: status.into(),
        exit_code: code,
        artifacts: out.as_deref().map(registry::list_artifacts).unwrap_or_default(),
        out,
    };
    if let Err(e) = registry::append(&root, &entry) {
        log::warn!("could not append to the run registry: {e}");
    }
    ExitCode::from(code as u8)
}
