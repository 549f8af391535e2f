use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use elicit_cli::config::{parse_override, Command};
use elicit_cli::data::write_atomic;
use elicit_cli::{run_subcommand, RunConfig};

#[derive(Parser)]
#[command(name = "elicit", version, about = "List-experiment and multiple-response estimation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write synthetic list-experiment or multiple-response data to CSV.
    Simulate(Flags),
    /// GMM, mean-difference and closed-form estimates for a list experiment.
    EstimateLe(Flags),
    /// Overidentification tests of a list experiment under each specification.
    TestLe(Flags),
    /// Latent-class decomposition of three binary responses.
    EstimateMrt(Flags),
    /// Monte Carlo study of the multiple-response estimators.
    Montecarlo(Flags),
}

#[derive(Args)]
struct Flags {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any configuration key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    input: Option<String>,
    /// Report path; for `simulate`, the data file.
    #[arg(long)]
    output: Option<String>,
    #[arg(long, value_parser = ["json", "text", "csv"])]
    format: Option<String>,
    #[arg(long)]
    j_count: Option<String>,
    /// Comma-separated specifications.
    #[arg(long)]
    spec: Option<String>,
    /// x1-higher, x1-lower, x2-higher or x2-lower.
    #[arg(long)]
    ordering: Option<String>,
    #[arg(long)]
    n_boot: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    design: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    /// Plot-ready CSV of per-group intervals.
    #[arg(long)]
    plot: Option<String>,
}

impl Flags {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out: Vec<(String, String)> = self.set.iter().map(|s| parse_override(s)).collect::<Result<_>>()?;
        let named = [
            ("input", &self.input),
            ("output", &self.output),
            ("format", &self.format),
            ("j_count", &self.j_count),
            ("spec", &self.spec),
            ("ordering", &self.ordering),
            ("n_boot", &self.n_boot),
            ("seed", &self.seed),
            ("design", &self.design),
            ("n", &self.n),
            ("reps", &self.reps),
            ("sigma", &self.sigma),
            ("plot", &self.plot),
        ];
        out.extend(named.into_iter().filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v))));
        Ok(out)
    }
}

fn run(cli: Cli) -> Result<()> {
    let (command, flags) = match cli.command {
        Cmd::Simulate(f) => (Command::Simulate, f),
        Cmd::EstimateLe(f) => (Command::EstimateLe, f),
        Cmd::TestLe(f) => (Command::TestLe, f),
        Cmd::EstimateMrt(f) => (Command::EstimateMrt, f),
        Cmd::Montecarlo(f) => (Command::MonteCarlo, f),
    };
    let config = RunConfig::build(command, flags.config.as_deref(), flags.overrides()?)?;
    let report = run_subcommand(&config)?;
    let text = report.render(config.format()?);
    match config.output() {
        Some(path) if command != Command::Simulate => write_atomic(&path, text.as_bytes()),
        _ => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
