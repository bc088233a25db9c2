use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qrf_sim::pipeline::{self, CommandOutcome, PipelineError};
use qrf_sim::scenario::{parse_scenario, Scenario};

/// Simulator for probes and clocks near mass configurations in quantum
/// superposition: change into the frame where the masses are definite,
/// evolve with known physics, change back.
#[derive(Parser)]
#[command(name = "qrf-sim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file (TOML with explicit units).
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,

    /// Output directory for CSV files (created if absent).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Abort with exit code 2 when a far-frame validity condition fails.
    #[arg(long, global = true)]
    strict: bool,

    /// Override the scenario RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the scenario time step (seconds).
    #[arg(long, global = true)]
    dt: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: validity gate, frame change, evolution, inverse change.
    Run,
    /// Frame change only: write the initial and mass-frame states.
    Transform,
    /// Superposed time-dilation pipeline for a trapped clock.
    Clock,
    /// Predictions of the covariant, mean-field, and collapse models.
    Compare,
    /// Far-frame validity conditions only.
    Validate,
}

fn load_scenario(cli: &Cli) -> Result<Scenario, String> {
    let path = cli
        .scenario
        .as_ref()
        .ok_or_else(|| "--scenario <path> is required".to_string())?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let (mut scenario, warnings) = parse_scenario(&text).map_err(|e| e.to_string())?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    if let Some(dt) = cli.dt {
        if !(dt > 0.0) {
            return Err("--dt must be strictly positive".into());
        }
        scenario.dt = dt;
    }
    Ok(scenario)
}

fn configure_threads() {
    if let Ok(raw) = std::env::var("QRF_SIM_THREADS") {
        if let Ok(n) = raw.parse::<usize>() {
            if n >= 1 {
                // Ignore the error if a pool already exists.
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn dispatch(cli: &Cli, scenario: &Scenario) -> Result<CommandOutcome, PipelineError> {
    std::fs::create_dir_all(&cli.out).map_err(|source| PipelineError::Io {
        path: cli.out.clone(),
        source,
    })?;
    match cli.command {
        Command::Run => pipeline::cmd_run(scenario, &cli.out, cli.strict),
        Command::Transform => pipeline::cmd_transform(scenario, &cli.out),
        Command::Clock => pipeline::cmd_clock(scenario, &cli.out, cli.strict),
        Command::Compare => pipeline::cmd_compare(scenario, &cli.out, cli.strict),
        Command::Validate => pipeline::cmd_validate(scenario, &cli.out),
    }
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    let scenario = match load_scenario(&cli) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    match dispatch(&cli, &scenario) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for file in &outcome.files {
                println!("wrote {}", file.display());
            }
            if outcome.validity_failed && cli.strict {
                eprintln!("error: validity conditions failed (strict mode)");
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
