use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qexp_risk_cli::{
    emit_report, run_scenario, CliError, Format, ScenarioConfig, Task, EXIT_CHECKS_FAILED, OUT_DIR_ENV,
};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    JsonLines,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::JsonLines => Format::JsonLines,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate paths and report moments of the terminal state.
    Simulate(Args),
    /// Solve the BSDE with the payoff as terminal value.
    Solve(Args),
    /// Evaluate the time-zero risk of the position.
    Risk(Args),
    /// Allocate capital over the position's decomposition.
    Allocate(Args),
    /// Run the axiom, residual and measure-change checks.
    Verify(Args),
    /// Run whatever task the config names.
    Report(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a config entry, e.g. `--set model.sigma=0.25`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "reports")]
    out: PathBuf,
    /// Replaces `mc.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Debug, Parser)]
#[command(
    name = "qexp-risk",
    version,
    about = "Risk measures and capital allocation from quadratic-exponential BSDEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn execute(task: Option<Task>, args: Args) -> Result<i32, CliError> {
    let mut overrides = args.overrides;
    if let Some(t) = task {
        overrides.push(format!("task=\"{}\"", t.name()));
    }
    if let Some(s) = args.seed {
        overrides.push(format!("mc.seed={s}"));
    }
    let cfg = ScenarioConfig::load(&args.config, &overrides)?;
    let report = run_scenario(&cfg)?;
    let files = emit_report(&report, args.format.into(), &args.out)?;
    eprintln!("wrote {}", files.payload.display());
    let failed = report.failed_checks();
    if failed.is_empty() {
        Ok(0)
    } else {
        eprintln!("failed checks: {}", failed.join(", "));
        Ok(EXIT_CHECKS_FAILED)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, args) = match cli.command {
        Command::Simulate(a) => (Some(Task::Simulate), a),
        Command::Solve(a) => (Some(Task::Solve), a),
        Command::Risk(a) => (Some(Task::Risk), a),
        Command::Allocate(a) => (Some(Task::Allocate), a),
        Command::Verify(a) => (Some(Task::Verify), a),
        Command::Report(a) => (None, a),
    };
    let code = match execute(task, args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
