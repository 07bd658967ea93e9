use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedoui_core::config::Method;
use fedoui_cli::commands::{cmd_inspect_round, cmd_report, cmd_run, cmd_sweep};
use fedoui_cli::config_io::parse_override;
use fedoui_cli::CliError;
use toml::Value;

/// Federated aggregation experiments: FedAvg, FedProx, grad-align, FedOUI.
#[derive(Parser)]
#[command(name = "fedoui", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// CIFAR-10 directory (binary version).
    #[arg(long, env = "FEDOUI_DATA_DIR")]
    data_dir: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Config override `key=value`; any unrecognized `--key=value` argument
    /// is treated the same way.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn resolved_overrides(&self, method: Option<&str>) -> Result<Vec<(String, Value)>, CliError> {
        let mut out = Vec::new();
        if let Some(d) = &self.data_dir {
            out.push(("data_dir".to_string(), Value::String(d.clone())));
        }
        for o in &self.overrides {
            out.push(parse_override(o)?);
        }
        // explicit flags win over generic overrides
        if let Some(s) = self.seed {
            let seed = i64::try_from(s).map_err(|_| CliError::Config(format!("seed: {s} too large")))?;
            out.push(("seed".to_string(), Value::Integer(seed)));
        }
        if let Some(m) = method {
            out.push(("method".to_string(), Value::String(m.to_string())));
        }
        Ok(out)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write rounds.csv, log.json and manifest.json.
    Run {
        #[command(flatten)]
        common: RunArgs,
        #[arg(long)]
        method: Option<String>,
        /// Output directory [default: runs/<method>-seed<seed>]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every method × seed combination, one subdirectory per cell.
    Sweep {
        #[command(flatten)]
        common: RunArgs,
        /// Comma-separated methods.
        #[arg(long, value_delimiter = ',', default_value = "fedavg,fedprox,grad-align,fedoui")]
        methods: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        /// Skip cells whose artifacts already match their manifest.
        #[arg(long)]
        resume: bool,
    },
    /// Summarize every log.json under a directory as mean ± std per method.
    Report {
        dir: PathBuf,
    },
    /// Show one round's OUI values, Beta fit, scores and weights.
    InspectRound {
        #[arg(long)]
        log: PathBuf,
        /// 1-based round number.
        #[arg(long)]
        round: usize,
        /// CSV output path [default: round-<n>.csv next to the log]
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run { common, method, out } => {
            let overrides = common.resolved_overrides(method.as_deref())?;
            let config = fedoui_cli::config_io::load_config(&common.config, &overrides)?;
            let out = out.unwrap_or_else(|| {
                PathBuf::from("runs").join(format!("{}-seed{}", config.method, config.seed))
            });
            let log = cmd_run(&common.config, &overrides, &out)?;
            if let Some(s) = log.summary {
                println!(
                    "{}: final {:.4}  best {:.4}  auc {:.4}  -> {}",
                    config.method,
                    s.final_accuracy,
                    s.best_accuracy,
                    s.auc,
                    out.display()
                );
            }
            Ok(0)
        }
        Command::Sweep {
            common,
            methods,
            seeds,
            out,
            resume,
        } => {
            let overrides = common.resolved_overrides(None)?;
            let methods = methods
                .iter()
                .map(|m| Method::parse(m.trim()).map_err(|e| CliError::Config(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            let outcome = cmd_sweep(&common.config, &overrides, &methods, &seeds, &out, resume)?;
            eprintln!(
                "{} completed, {} skipped, {} failed",
                outcome.completed.len(),
                outcome.skipped.len(),
                outcome.failed.len()
            );
            Ok(outcome.exit_code())
        }
        Command::Report { dir } => cmd_report(&dir).map(|_| 0),
        Command::InspectRound { log, round, csv } => {
            cmd_inspect_round(&log, round, csv.as_deref()).map(|_| 0)
        }
    }
}

/// Flags clap knows about; other `--key=value` arguments become `--set`.
const FLAGS: &[&str] = &[
    "config", "data-dir", "seed", "set", "method", "out", "methods", "seeds", "resume", "log", "round",
    "csv", "help", "version",
];

fn rewrite_overrides(args: impl Iterator<Item = String>) -> Vec<String> {
    let mut out = Vec::new();
    for arg in args {
        match arg.strip_prefix("--").and_then(|b| b.split_once('=')) {
            Some((key, _)) if !FLAGS.contains(&key) => out.push(format!("--set={}", &arg[2..])),
            _ => out.push(arg),
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse_from(rewrite_overrides(std::env::args()));
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
