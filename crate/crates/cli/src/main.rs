use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use obeskit_cli::{load, stages, Context, Failure, Outcome, Overrides, Summary};

#[derive(Debug, Parser)]
#[command(name = "obeskit", version, about = "Wearable sensor data to behavioral indicators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct Common {
    /// Pipeline configuration, TOML or JSON.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `workers` from the config file (0 uses every core).
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides `out` from the config file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort (sensor files, truth, gazetteer) into the input directory.
    Simulate(Common),
    /// Train the activity-type and transport-mode models on simulated windows.
    Train(Common),
    /// Parse and normalize the input streams.
    Ingest(Common),
    /// Per-minute indicators, sleep sessions, places and trips.
    Extract(Common),
    /// Individual indicators, votes and population cells.
    Aggregate(Common),
    /// GeoJSON and CSV exports of the published cells.
    Export(Common),
    /// Score extraction against simulator truth.
    Evaluate(Common),
    /// Ingest, extract, aggregate, export, then evaluate when truth is present.
    Run(Common),
}

fn execute(cli: Cli) -> Outcome<Vec<Summary>> {
    let (Command::Simulate(c)
    | Command::Train(c)
    | Command::Ingest(c)
    | Command::Extract(c)
    | Command::Aggregate(c)
    | Command::Export(c)
    | Command::Evaluate(c)
    | Command::Run(c)) = &cli.command;
    let loaded = load(&c.config, &Overrides { seed: c.seed, workers: c.workers, out: c.out.clone() })?;
    let ctx = Context::new(loaded)?;
    log::info!("config hash {}", ctx.hash);
    Ok(match cli.command {
        Command::Simulate(_) => vec![stages::simulate(&ctx)?],
        Command::Train(_) => vec![stages::train(&ctx)?],
        Command::Ingest(_) => vec![stages::ingest(&ctx)?],
        Command::Extract(_) => vec![stages::extract(&ctx)?],
        Command::Aggregate(_) => vec![stages::aggregate(&ctx)?],
        Command::Export(_) => vec![stages::export(&ctx)?],
        Command::Evaluate(_) => vec![stages::evaluate(&ctx)?],
        Command::Run(_) => stages::run_all(&ctx)?,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let f = Failure::Config(anyhow::anyhow!("{}", e.to_string().trim_end()));
            eprintln!("{}", f.to_json());
            return ExitCode::from(f.exit_code() as u8);
        }
    };
    match execute(cli) {
        Ok(summaries) => {
            for s in summaries {
                println!("{}", serde_json::to_string(&s).unwrap_or_default());
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            log::error!("{f}");
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
