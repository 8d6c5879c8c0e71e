use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use priorshift::experiment::{
    cmd_compare, cmd_ensemble, cmd_eval, cmd_synth, cmd_train, ensemble_summary_csv,
    single_summary_csv, EvalData, ExperimentConfig, SynthConfig,
};
use priorshift::shift::Method;
use priorshift::{Error, Result};

/// Prior-shift correction experiments on three-turn conversations.
#[derive(Debug, Parser)]
#[command(name = "priorshift", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic train/dev/test TSV files.
    Synth(SynthArgs),
    /// Train one model and save its checkpoint.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint.
    Eval(EvalArgs),
    /// Single models and ensembles for every method.
    Compare(CompareArgs),
    /// Bagged ensembles only.
    Ensemble(CompareArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Synthetic data config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_dev: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "none")]
    method: Method,
    /// Training seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labelled TSV to evaluate on; defaults to the config's test split.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the checkpoint's correction method.
    #[arg(long)]
    method: Option<Method>,
    /// Defaults to the checkpoint directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated methods (default: all).
    #[arg(long, value_delimiter = ',')]
    method: Vec<Method>,
    /// Number of single-model seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Ensemble size.
    #[arg(long)]
    members: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn experiment_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_json_file(p),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    emit(&format!("{}\n", serde_json::to_string_pretty(value)?));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let mut config: SynthConfig = match &args.config {
                Some(p) => read_json(p)?,
                None => SynthConfig::default(),
            };
            config.seed = args.seed.unwrap_or(config.seed);
            config.n_train = args.n_train.unwrap_or(config.n_train);
            config.n_dev = args.n_dev.unwrap_or(config.n_dev);
            config.n_test = args.n_test.unwrap_or(config.n_test);
            let manifest = cmd_synth(&config, &args.out)?;
            print_json(&manifest.details)
        }
        Command::Train(args) => {
            let mut config = experiment_config(args.config.as_deref())?;
            config.train.seed = args.seed.unwrap_or(config.train.seed);
            let out = args.out.unwrap_or_else(|| config.output_dir.clone());
            print_json(&cmd_train(&config, args.method, &out)?)
        }
        Command::Eval(args) => {
            let data = match (&args.data, &args.config) {
                (Some(path), _) => EvalData::File(path.clone()),
                (None, config) => EvalData::Config(experiment_config(config.as_deref())?.data),
            };
            let out = args.out.unwrap_or_else(|| args.checkpoint.clone());
            print_json(&cmd_eval(&args.checkpoint, &data, args.method, &out)?)
        }
        Command::Compare(args) => {
            let (config, out) = compare_config(args)?;
            let cmp = cmd_compare(&config, &out)?;
            emit(&format!(
                "{}\n{}",
                single_summary_csv(&cmp),
                ensemble_summary_csv(&cmp)
            ));
            Ok(())
        }
        Command::Ensemble(args) => {
            let (config, out) = compare_config(args)?;
            for e in cmd_ensemble(&config, &out)? {
                emit(&format!(
                    "{}: members {} accuracy {:.4} f1 {:.4}\n",
                    e.label, e.members, e.report.accuracy, e.report.micro_f1_emotional
                ));
            }
            Ok(())
        }
    }
}

fn compare_config(args: CompareArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = experiment_config(args.config.as_deref())?;
    if !args.method.is_empty() {
        config.methods = args.method;
    }
    config.n_seeds = args.seeds.unwrap_or(config.n_seeds);
    config.ensemble_size = args.members.unwrap_or(config.ensemble_size);
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    config.validate()?;
    let out = config.output_dir.clone();
    Ok((config, out))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
