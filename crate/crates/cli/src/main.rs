use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mbcgcn_cli::commands::{self, summary};
use mbcgcn_cli::config::{AblationGrid, RunConfig, Settings};
use mbcgcn_cli::report::ReportFormat;

#[derive(Parser)]
#[command(
    name = "mbcgcn",
    version,
    about = "Cascading graph-convolution multi-behavior recommender"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest and split the logs, write ID maps and dataset statistics
    Prepare(RunArgs),
    /// Train, evaluate on the test split, write checkpoint, metrics and log
    Train(RunArgs),
    /// Score a saved checkpoint on the test split
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every variant of a settings grid with the same seed
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// e.g. on,off
        #[arg(long)]
        grid_ft: Option<String>,
        /// e.g. sum,concat,last
        #[arg(long)]
        grid_agg: Option<String>,
        /// e.g. view>cart>buy,cart>view>buy,buy
        #[arg(long)]
        grid_orders: Option<String>,
        /// Uniform depths, e.g. 1,2,3,4
        #[arg(long)]
        grid_layers: Option<String>,
    },
    /// Merge metrics files into one table
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Flags shared by every run. Each one overrides the same key of `--config`.
#[derive(Args)]
struct RunArgs {
    /// Flat key=value file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Behavior names matching --inputs, e.g. view,cart,buy
    #[arg(long)]
    behaviors: Option<String>,
    /// One interaction log per behavior
    #[arg(long)]
    inputs: Option<String>,
    /// Cascade order, e.g. view>cart>buy (defaults to --behaviors)
    #[arg(long)]
    order: Option<String>,
    /// Depth per behavior, or one value for all
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    /// Cutoff of the monitored validation recall
    #[arg(long)]
    eval_k: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long, value_parser = ["sum", "concat", "last"])]
    agg: Option<String>,
    #[arg(long, value_parser = ["on", "off"])]
    ft: Option<String>,
    #[arg(long)]
    topk: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn run_config(&self) -> Result<RunConfig> {
        let mut settings = match &self.config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        let flags = [
            ("behaviors", &self.behaviors),
            ("inputs", &self.inputs),
            ("order", &self.order),
            ("layers", &self.layers),
            ("dim", &self.dim),
            ("batch", &self.batch),
            ("lr", &self.lr),
            ("lambda", &self.lambda),
            ("epochs", &self.epochs),
            ("patience", &self.patience),
            ("eval_k", &self.eval_k),
            ("seed", &self.seed),
            ("agg", &self.agg),
            ("ft", &self.ft),
            ("topk", &self.topk),
        ];
        let mut overrides = Settings::default();
        for (key, value) in flags {
            if let Some(v) = value {
                overrides.set(key, v.as_str())?;
            }
        }
        if let Some(out) = &self.out {
            overrides.set("out", out.display().to_string())?;
        }
        settings.merge(overrides);
        RunConfig::from_settings(&settings)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(args) => {
            let cfg = args.run_config()?;
            let stats = commands::run_prepare(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Train(args) => {
            let cfg = args.run_config()?;
            let out = commands::run_train(&cfg)?;
            println!("{}\t{}", out.report.label, summary(&out.report));
        }
        Command::Evaluate { run, checkpoint } => {
            let cfg = run.run_config()?;
            let report = commands::run_evaluate(&cfg, &checkpoint)?;
            println!("{}\t{}", report.label, summary(&report));
        }
        Command::Ablate {
            run,
            grid_ft,
            grid_agg,
            grid_orders,
            grid_layers,
        } => {
            let cfg = run.run_config()?;
            let grid = AblationGrid::parse(
                grid_ft.as_deref(),
                grid_agg.as_deref(),
                grid_orders.as_deref(),
                grid_layers.as_deref(),
            )?;
            for row in commands::run_ablation(&cfg, &grid)? {
                match row.result {
                    Ok(report) => println!("{}\t{}", row.label, summary(&report)),
                    Err(e) => println!("{}\terror: {e}", row.label),
                }
            }
        }
        Command::Report { inputs, format, out } => {
            let format: ReportFormat = format.parse()?;
            let n = commands::run_report(&inputs, format, &out)?;
            println!("wrote {n} reports to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
