use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedban_core::harness::{
    emit_plot_data, load_config, run_experiment, run_sweep, summarize, write_csv, Axis, ConfigError, HarnessError,
};

#[derive(Parser)]
#[command(name = "fedban", version, about = "Federated private linear bandit simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write per-checkpoint rows.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Overrides env.master_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides repeats.
        #[arg(long)]
        repeats: Option<u64>,
    },
    /// Run one experiment per value on an axis and write plot data.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: Axis,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Check a config file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(c) => c.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!("{}: ok ({:?}, hash {})", config.display(), cfg.mode, cfg.hash());
            Ok(())
        }
        Command::Run { config, out, seed, repeats } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.env.master_seed = s;
            }
            if let Some(r) = repeats {
                cfg.repeats = r;
            }
            cfg.validate()?;
            let records = run_experiment(&cfg)?;
            let csv = out.join("runs.csv");
            write_csv(&records, &csv)?;
            if let Some(last) = summarize(&records).last() {
                println!(
                    "T={} mean per-agent regret {:.4} (std {:.4}, {} runs)",
                    last.t, last.mean_per_agent_regret, last.std, last.runs
                );
            }
            write_meta(&out, &records)?;
            println!("wrote {}", csv.display());
            Ok(())
        }
        Command::Sweep { config, axis, out } => {
            let cfg = load_config(&config)?;
            let series = run_sweep(&cfg, axis)?;
            for s in &series {
                let name = s.axis_value.replace(':', "_");
                write_csv(&s.records, out.join(format!("{axis}_{name}.csv")))?;
            }
            let plot = out.join(format!("plot_{axis}.csv"));
            emit_plot_data(&series, axis, &plot)?;
            println!("wrote {}", plot.display());
            Ok(())
        }
    }
}

fn write_meta(out: &Path, records: &[fedban_core::record::RunRecord]) -> Result<(), Failure> {
    let metas: Vec<_> = records.iter().map(|r| (&r.run_id, &r.meta)).collect();
    let text = serde_json::to_string_pretty(&metas).map_err(|e| Failure::Runtime(e.to_string()))?;
    std::fs::write(out.join("meta.json"), text).map_err(|e| Failure::Runtime(e.to_string()))
}
