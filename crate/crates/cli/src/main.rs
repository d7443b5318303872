//! Command-line driver: each subcommand runs one pipeline stage (or the
//! whole chain) against an output directory. Success prints one line per
//! stage; failure prints a single machine-readable JSON line and exits
//! nonzero.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use weightcast::config::{load_config, RunConfig};
use weightcast::pipeline::{self, Manifest};
use weightcast::Error;

#[derive(Parser)]
#[command(
    name = "weightcast",
    version,
    about = "Train a parent network, regress its fine-tuning sensitivities \
             against slowly varying predictors, and extrapolate child \
             networks beyond the training period"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration (built-in tipping defaults when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory the stages read and write their artifacts in.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override one seed, e.g. --seed-override parent=7 (repeatable).
    #[arg(long = "seed-override", value_name = "KEY=VALUE", global = true)]
    seed_override: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset as CSV.
    Generate,
    /// Train the parent network and freeze the input/target frontend.
    TrainParent,
    /// Run fine-tuning episodes and store the per-episode weights.
    Collect,
    /// Fit the per-parameter weight regression.
    Fit,
    /// Synthesize children and write the windowed evaluation report.
    PredictEval,
    /// Repeat the pipeline over an ensemble of runs and summarize.
    Ensemble,
    /// generate, train-parent, collect, fit and predict-eval in order.
    RunAll,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err}");
            let payload = serde_json::json!({
                "error": { "kind": err.kind(), "message": err.to_string() }
            });
            println!("{payload}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> weightcast::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.seed_override {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("seed override {kv:?} is not KEY=VALUE")))?;
        let value: u64 = value.parse().map_err(|_| {
            Error::Config(format!("seed override {key}: {value:?} is not an unsigned integer"))
        })?;
        cfg.seeds.set(key, value)?;
    }
    cfg.validate()?;

    let out = cli.out.as_path();
    let manifests = match cli.command {
        Command::Generate => vec![pipeline::stage_generate(&cfg, out)?],
        Command::TrainParent => vec![pipeline::stage_train_parent(&cfg, out)?],
        Command::Collect => vec![pipeline::stage_collect(&cfg, out)?],
        Command::Fit => vec![pipeline::stage_fit(&cfg, out)?],
        Command::PredictEval => vec![pipeline::stage_predict_eval(&cfg, out)?],
        Command::Ensemble => vec![pipeline::stage_ensemble(&cfg, out)?],
        Command::RunAll => pipeline::run_all(&cfg, out)?,
    };
    for m in &manifests {
        println!("{}", summarize(m));
    }
    Ok(())
}

fn summarize(m: &Manifest) -> String {
    let stats: Vec<String> = m.stats.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let mut line = format!("{}: {} output file(s)", m.stage, m.outputs.len());
    if !stats.is_empty() {
        line.push_str(" | ");
        line.push_str(&stats.join(", "));
    }
    line
}
