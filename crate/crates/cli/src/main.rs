use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nonlocal_cli::{exit_code, load_config, run, CliError, Command, RunReport};

#[derive(Parser)]
#[command(
    name = "nonlocal",
    version,
    about = "Experiments for nonlocal nonautonomous evolution equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Artifact directory; overrides `output_dir` from the configuration.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Worker threads; 0 lets the pool choose.
    #[arg(long, global = true, env = "NONLOCAL_THREADS", default_value_t = 0)]
    threads: usize,

    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Integrate one trajectory.
    Simulate,
    /// Estimate the pullback attractor at a section time.
    Attractor,
    /// Check the ordering of sub-, true and supersolutions.
    Compare,
    /// Track the energy functional and the equilibrium verdict.
    Lyapunov,
    /// Parameter sweep of trajectory and attractor distances.
    Sweep,
    /// Run the built-in checks.
    Selftest,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Simulate => Command::Simulate,
            Sub::Attractor => Command::Attractor,
            Sub::Compare => Command::Compare,
            Sub::Lyapunov => Command::Lyapunov,
            Sub::Sweep => Command::Sweep,
            Sub::Selftest => Command::Selftest,
        }
    }
}

fn execute(cli: &Cli) -> Result<RunReport, CliError> {
    let cfg = cli.config.as_deref().map(load_config).transpose()?;
    let output_dir = cli
        .output_dir
        .clone()
        .or_else(|| cfg.as_ref().map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| run(cli.command.into(), cfg.as_ref(), &output_dir))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = execute(&cli);
    match &result {
        Ok(report) => {
            if report.passed {
                log::info!("{}", report.summary);
            } else {
                log::error!("check failed: {}", report.summary);
            }
            if !cli.quiet {
                for path in &report.artifacts {
                    println!("{}", path.display());
                }
            }
        }
        Err(e) => log::error!("{e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
