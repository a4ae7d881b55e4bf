//! Command-line front end: parse a JSON experiment config, run it (or a
//! whole parameter sweep), and emit the metrics CSV contract.
//!
//! Exit codes: 0 success, 2 config/spec error, 3 disconnected regular
//! subgraph, 4 run aborted on a non-finite state (partial CSV written),
//! 1 operational failure (I/O and the like).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use byzgossip::config::{error_csv_row, metrics_csv, ExperimentConfig};
use byzgossip::engine;
use byzgossip::graph::{build_topology, effective_mixing, inspection_csv};
use byzgossip::sweep::{run_sweep, write_atomic, PointStatus, SweepSpec};
use byzgossip::Error;

/// Environment variable that overrides the config seed (itself overridden
/// by `--seed`).
const SEED_ENV: &str = "BYZGOSSIP_SEED";

const EXIT_OPERATIONAL: u8 = 1;
const EXIT_SPEC: u8 = 2;
const EXIT_DISCONNECTED: u8 = 3;
const EXIT_NON_FINITE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "byzgossip",
    about = "Deterministic simulator for Byzantine-robust gossip consensus \
             and decentralized optimization",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect a config's topology: per-node CSV plus a summary line.
    Topology {
        #[command(subcommand)]
        command: TopologyCommand,
    },
    /// Execute one experiment config and write its metrics CSV.
    Run(RunArgs),
    /// Execute every point of a parameter sweep.
    Sweep(SweepArgs),
}

#[derive(Subcommand)]
enum TopologyCommand {
    /// Print node table (id, role, degree, Byzantine weight) and
    /// `gamma=<v> delta_max=<v> p=<v>` for the config's mixing matrix.
    Inspect {
        /// Experiment config (JSON).
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Seed override (highest precedence, above BYZGOSSIP_SEED and the
    /// config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec (JSON): base config, axes, repeats.
    spec: PathBuf,
    /// Directory for per-point CSVs and index.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker count (defaults to the number of available cores).
    #[arg(long)]
    parallel: Option<usize>,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn classify(err: Error) -> Failure {
    let code = match &err {
        Error::DisconnectedRegularSubgraph => EXIT_DISCONNECTED,
        Error::NonFiniteState { .. } => EXIT_NON_FINITE,
        Error::Io(_) => EXIT_OPERATIONAL,
        _ => EXIT_SPEC,
    };
    fail(code, err.to_string())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Topology {
            command: TopologyCommand::Inspect { config },
        } => cmd_topology_inspect(&config),
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
    }
}

fn read_to_string(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| fail(EXIT_OPERATIONAL, format!("read {}: {e}", path.display())))
}

/// Loads a config and applies the seed precedence `--seed` > env > config.
fn load_config(path: &Path, seed_flag: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let text = read_to_string(path)?;
    let mut cfg = ExperimentConfig::from_json(&text).map_err(classify)?;
    if let Some(seed) = seed_flag {
        cfg.seed = seed;
    } else if let Ok(raw) = std::env::var(SEED_ENV) {
        cfg.seed = raw.trim().parse().map_err(|e| {
            fail(
                EXIT_SPEC,
                format!("{SEED_ENV}={raw} is not a valid seed: {e}"),
            )
        })?;
    }
    Ok(cfg)
}

fn cmd_topology_inspect(path: &Path) -> Result<(), Failure> {
    let cfg = load_config(path, None)?;
    let topo = build_topology(&cfg.topology, cfg.seed).map_err(classify)?;
    let weights = cfg.mixing.build(&topo).map_err(classify)?;
    let eff = effective_mixing(&weights, &topo);
    print!("{}", inspection_csv(&topo, &eff));
    println!(
        "gamma={:?} delta_max={:?} p={:?}",
        eff.gamma(),
        eff.delta_max(),
        eff.p()
    );
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.config, args.seed)?;
    let run_id = cfg.run_id();
    match engine::run(&cfg) {
        Ok(records) => {
            write_atomic(&args.out, &metrics_csv(&run_id, &records)).map_err(classify)?;
            Ok(())
        }
        Err(err @ Error::NonFiniteState { .. }) => {
            let Error::NonFiniteState { round, partial, .. } = &err else {
                unreachable!()
            };
            let mut csv = metrics_csv(&run_id, partial);
            csv.push_str(&error_csv_row(&run_id, *round));
            csv.push('\n');
            write_atomic(&args.out, &csv).map_err(classify)?;
            Err(classify(err))
        }
        Err(err) => Err(classify(err)),
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Failure> {
    let text = read_to_string(&args.spec)?;
    let spec = SweepSpec::from_json(&text).map_err(classify)?;
    let parallelism = args
        .parallel
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let report = run_sweep(&spec, &args.out_dir, parallelism).map_err(classify)?;
    for entry in &report.entries {
        match &entry.status {
            PointStatus::Ok { .. } => {}
            PointStatus::Infeasible { reason } => {
                eprintln!(
                    "skipped {} (params {}): infeasible: {reason}",
                    entry.run_id,
                    serde_json::to_string(&entry.params).expect("params serialize")
                );
            }
            PointStatus::Failed { reason, .. } => {
                eprintln!(
                    "failed {} (params {}): {reason}",
                    entry.run_id,
                    serde_json::to_string(&entry.params).expect("params serialize")
                );
            }
        }
    }
    let (ok, infeasible, failed) = report.counts();
    println!(
        "{ok} ok, {infeasible} infeasible, {failed} failed -> {}",
        args.out_dir.display()
    );
    Ok(())
}
