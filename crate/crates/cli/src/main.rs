//! dirl: train station-agent networks, benchmark knowledge transfer, and
//! manage knowledge files.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod manifest;
mod report;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dirl_core::actions::ActionSet;
use dirl_core::agent::{AgentConfig, LearningRate};
use dirl_core::knowledge::{load_table, save_table};
use dirl_core::orchestrator::{run_benchmark, run_session_with, SessionConfig};
use dirl_core::sim::{load_flow_file, FlowMode, StationConfig};

use manifest::{BenchmarkArtifacts, Meta, RunManifest, SessionSpec, TrainArtifacts};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self::Usage(message.into())
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self::Runtime(message.into())
    }
}

#[derive(Parser)]
#[command(
    name = "dirl",
    version,
    about = "Distributed Q-learning simulator and benchmark harness for bike-station rebalancing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training session and write plot-ready metrics
    Train(TrainArgs),
    /// Paired naive-vs-experienced comparison on identical flows
    Benchmark(BenchmarkArgs),
    /// Re-emit a knowledge file in canonical form
    Export(ExportArgs),
    /// Print statistics about a knowledge file
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FlowModeArg {
    Independent,
    Conserving,
    Deterministic,
}

#[derive(Args, Clone)]
struct SessionArgs {
    /// Number of station-agent pairs
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    stations: u32,
    /// Episodes to run
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    episodes: u64,
    /// Master seed; every random stream derives from it
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Comma-separated action set (bikes moved per hour; must contain 0)
    #[arg(
        long,
        allow_hyphen_values = true,
        default_value = "-30,-20,-10,-3,-1,0,1,3,10,20,30"
    )]
    actions: String,
    /// Overstock multiplier; the in-range band is [0, floor(initial_stock*threshold)]
    #[arg(long, default_value_t = 1.2)]
    threshold: f64,
    /// Bikes on hand at hour 0
    #[arg(long = "initial-stock", default_value_t = 10)]
    initial_stock: i64,
    /// Largest |hourly flow| in bikes
    #[arg(long = "flow-bound", default_value_t = 20)]
    flow_bound: i64,
    #[arg(long = "flow-mode", value_enum, default_value_t = FlowModeArg::Independent)]
    flow_mode: FlowModeArg,
    /// Schedule file for deterministic mode: one line per station,
    /// 23 comma-separated integers
    #[arg(long = "flow-file")]
    flow_file: Option<PathBuf>,
    /// Episodes between knowledge exchanges
    #[arg(long = "deposit-interval", default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    deposit_interval: u64,
    /// Trust coefficient for in-session downloads
    #[arg(long, default_value_t = 1.0)]
    trust: f64,
    /// Worker threads for the hour loop (never affects results)
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Learning rate: a decimal in (0,1], or "1/n" for inverse visit counts
    #[arg(long, default_value = "0.1")]
    alpha: String,
    /// Discount factor
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long = "epsilon-start", default_value_t = 1.0)]
    epsilon_start: f64,
    #[arg(long = "epsilon-end", default_value_t = 0.01)]
    epsilon_end: f64,
    /// Fraction of the session over which epsilon anneals linearly
    #[arg(long = "epsilon-fraction", default_value_t = 0.5)]
    epsilon_fraction: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    session: SessionArgs,
    /// In-session knowledge transfer on or off
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    transfer: bool,
    /// Initialize agents from this knowledge file before episode 0
    #[arg(long)]
    knowledge: Option<PathBuf>,
    /// Label recorded in the summary
    #[arg(long, default_value = "train")]
    label: String,
    /// Output directory for artifacts
    #[arg(long, default_value = "out/train")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    session: SessionArgs,
    /// Knowledge file that seeds the experienced arm
    #[arg(long, required_unless_present = "self_check")]
    knowledge: Option<PathBuf>,
    /// Run two identical naive arms instead; R must come out exactly 0
    #[arg(long = "self-check")]
    self_check: bool,
    /// Episodes in the jumpstart window
    #[arg(long = "first-n", default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    first_n: u64,
    /// Report R with the raw signed denominator instead of |denominator|
    #[arg(long = "raw-r")]
    raw_r: bool,
    /// Output directory for artifacts
    #[arg(long, default_value = "out/benchmark")]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// Knowledge file to read
    input: PathBuf,
    /// Where to write the canonical copy
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// Knowledge file to read
    input: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::Export(args) => cmd_export(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

struct ResolvedSession {
    config: SessionConfig,
    spec: SessionSpec,
}

fn parse_actions(text: &str) -> Result<ActionSet, CliError> {
    let values: Vec<i64> = text
        .split(',')
        .map(|field| {
            field
                .trim()
                .parse::<i64>()
                .map_err(|_| CliError::usage(format!("--actions: not an integer: {field:?}")))
        })
        .collect::<Result<_, _>>()?;
    ActionSet::new(values).map_err(|e| CliError::usage(format!("--actions: {e}")))
}

fn parse_alpha(text: &str) -> Result<LearningRate, CliError> {
    if text.eq_ignore_ascii_case("1/n") {
        return Ok(LearningRate::InverseVisits);
    }
    text.parse::<f64>()
        .map(LearningRate::Fixed)
        .map_err(|_| CliError::usage(format!("--alpha: expected a decimal or \"1/n\", got {text:?}")))
}

fn resolve_session(
    args: &SessionArgs,
    label: &str,
    transfer_enabled: bool,
    knowledge_path: Option<&Path>,
) -> Result<ResolvedSession, CliError> {
    let action_set = parse_actions(&args.actions)?;
    let learning_rate = parse_alpha(&args.alpha)?;
    let agent_config = AgentConfig {
        action_set,
        learning_rate,
        gamma: args.gamma,
        epsilon_start: args.epsilon_start,
        epsilon_end: args.epsilon_end,
        epsilon_decay_fraction: args.epsilon_fraction,
    };
    agent_config
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;

    if args.initial_stock < 0 {
        return Err(CliError::usage("--initial-stock must be >= 0"));
    }
    if !(args.threshold > 0.0 && args.threshold.is_finite()) {
        return Err(CliError::usage("--threshold must be positive"));
    }
    if args.flow_bound < 0 {
        return Err(CliError::usage("--flow-bound must be >= 0"));
    }
    if !(args.trust >= 0.0 && args.trust.is_finite()) {
        return Err(CliError::usage("--trust must be finite and >= 0"));
    }

    let deterministic_schedules = match (args.flow_mode, &args.flow_file) {
        (FlowModeArg::Deterministic, Some(path)) => Some(
            load_flow_file(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?,
        ),
        (FlowModeArg::Deterministic, None) => {
            return Err(CliError::usage(
                "--flow-mode deterministic requires --flow-file",
            ));
        }
        (_, Some(_)) => {
            return Err(CliError::usage(
                "--flow-file only applies to --flow-mode deterministic",
            ));
        }
        (_, None) => None,
    };
    if let Some(schedules) = &deterministic_schedules {
        if schedules.len() != args.stations as usize {
            return Err(CliError::runtime(format!(
                "flow file holds {} schedules but the session has {} stations",
                schedules.len(),
                args.stations
            )));
        }
    }

    let station_configs: Vec<StationConfig> = (0..args.stations)
        .map(|id| {
            let flow_mode = match args.flow_mode {
                FlowModeArg::Independent => FlowMode::Independent,
                FlowModeArg::Conserving => FlowMode::Conserving,
                FlowModeArg::Deterministic => FlowMode::Deterministic {
                    flows: deterministic_schedules.as_ref().unwrap()[id as usize].clone(),
                },
            };
            StationConfig::new(id, args.initial_stock, args.threshold, flow_mode, args.flow_bound)
                .map_err(|e| CliError::runtime(e.to_string()))
        })
        .collect::<Result<_, _>>()?;

    let initial_knowledge = match knowledge_path {
        Some(path) => {
            let (table, _gamma) = load_table(path)
                .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
            Some(table)
        }
        None => None,
    };

    let spec = SessionSpec {
        label: label.to_string(),
        stations: args.stations,
        episodes: args.episodes,
        master_seed: args.seed,
        deposit_interval: args.deposit_interval,
        transfer_enabled,
        trust: args.trust,
        initial_knowledge: knowledge_path.map(Path::to_path_buf),
        initial_stock: args.initial_stock,
        threshold: args.threshold,
        flow_bound: args.flow_bound,
        flow_mode: format!("{:?}", args.flow_mode).to_lowercase(),
        flow_file: args.flow_file.clone(),
        actions: agent_config.action_set.as_slice().to_vec(),
        learning_rate: match agent_config.learning_rate {
            LearningRate::Fixed(alpha) => alpha.to_string(),
            LearningRate::InverseVisits => "1/n".to_string(),
        },
        gamma: args.gamma,
        epsilon_start: args.epsilon_start,
        epsilon_end: args.epsilon_end,
        epsilon_fraction: args.epsilon_fraction,
        workers: args.workers,
    };

    let config = SessionConfig {
        label: label.to_string(),
        stations: args.stations as usize,
        episodes: args.episodes,
        master_seed: args.seed,
        deposit_interval: args.deposit_interval,
        transfer_enabled,
        trust: args.trust,
        initial_knowledge,
        station_configs,
        agent_config,
        workers: args.workers,
    };
    config.validate().map_err(|e| CliError::runtime(e.to_string()))?;

    Ok(ResolvedSession { config, spec })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::runtime(format!("creating {}: {e}", path.display())))
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let resolved = resolve_session(
        &args.session,
        &args.label,
        args.transfer,
        args.knowledge.as_deref(),
    )?;
    create_dir(&args.out)?;

    let artifacts = TrainArtifacts {
        episodes_csv: args.out.join("episodes.csv"),
        summary_txt: args.out.join("summary.txt"),
        knowledge_file: args.out.join("knowledge.dirl"),
    };
    manifest::write(
        &RunManifest::Train {
            meta: Meta::now(),
            session: Box::new(resolved.spec),
            artifacts,
        },
        &args.out.join("manifest.json"),
    )?;

    let csv_path = args.out.join("episodes.csv");
    let file = File::create(&csv_path)
        .map_err(|e| CliError::runtime(format!("creating {}: {e}", csv_path.display())))?;
    let mut writer = BufWriter::new(file);
    let mut write_error: Option<std::io::Error> = None;
    if let Err(e) = writeln!(writer, "{}", report::CSV_HEADER) {
        write_error = Some(e);
    }

    let result = run_session_with(
        &resolved.config,
        |record| {
            if write_error.is_none() {
                if let Err(e) = writeln!(writer, "{}", report::csv_row(record)) {
                    write_error = Some(e);
                }
            }
        },
        None,
    )
    .map_err(|e| CliError::runtime(e.to_string()))?;
    if let Some(e) = write_error {
        return Err(CliError::runtime(format!("writing {}: {e}", csv_path.display())));
    }
    writer
        .flush()
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", csv_path.display())))?;

    let knowledge_path = args.out.join("knowledge.dirl");
    result
        .final_knowledge
        .save(&knowledge_path, resolved.config.agent_config.gamma)
        .map_err(|e| CliError::runtime(format!("{}: {e}", knowledge_path.display())))?;
    report::write_session_summary(&args.out.join("summary.txt"), &result)?;

    let states = result
        .final_knowledge
        .fetch()
        .map(|t| t.state_count())
        .unwrap_or(0);
    println!(
        "wrote {} ({} episodes)",
        csv_path.display(),
        result.summary.len()
    );
    println!("wrote {} ({states} states)", knowledge_path.display());
    print!("{}", report::session_summary_text(&result));
    Ok(())
}

fn cmd_benchmark(args: BenchmarkArgs) -> Result<(), CliError> {
    if args.self_check && args.knowledge.is_some() {
        return Err(CliError::usage(
            "--self-check runs two naive arms; drop --knowledge",
        ));
    }
    if args.first_n > args.session.episodes {
        return Err(CliError::usage(
            "--first-n must not exceed --episodes",
        ));
    }

    let naive = resolve_session(&args.session, "naive", false, None)?;
    let experienced = if args.self_check {
        resolve_session(&args.session, "experienced", false, None)?
    } else {
        resolve_session(
            &args.session,
            "experienced",
            true,
            args.knowledge.as_deref(),
        )?
    };

    create_dir(&args.out.join("naive"))?;
    create_dir(&args.out.join("experienced"))?;

    let artifacts = BenchmarkArtifacts {
        naive_episodes_csv: args.out.join("naive/episodes.csv"),
        experienced_episodes_csv: args.out.join("experienced/episodes.csv"),
        transfer_txt: args.out.join("transfer.txt"),
    };
    manifest::write(
        &RunManifest::Benchmark {
            meta: Meta::now(),
            first_n: args.first_n,
            naive: Box::new(naive.spec),
            experienced: Box::new(experienced.spec),
            artifacts,
        },
        &args.out.join("manifest.json"),
    )?;

    let result = run_benchmark(&naive.config, &experienced.config, args.first_n)
        .map_err(|e| CliError::runtime(e.to_string()))?;

    report::write_episodes_csv(&args.out.join("naive/episodes.csv"), &result.naive.summary)?;
    report::write_episodes_csv(
        &args.out.join("experienced/episodes.csv"),
        &result.experienced.summary,
    )?;
    report::write_transfer_report(&args.out.join("transfer.txt"), &result, args.first_n)?;

    let headline = if args.raw_r {
        result.transfer_ratio_raw
    } else {
        result.transfer_ratio
    };
    println!("R = {headline}");
    println!("jumpstart (first {}) = {}", args.first_n, result.jumpstart);
    println!(
        "complete successes: naive {}, experienced {}",
        result
            .naive
            .summary
            .records
            .iter()
            .filter(|r| r.complete_success().unwrap_or(false))
            .count(),
        result
            .experienced
            .summary
            .records
            .iter()
            .filter(|r| r.complete_success().unwrap_or(false))
            .count()
    );
    println!("artifacts in {}", args.out.display());
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<(), CliError> {
    let (table, gamma) = load_table(&args.input)
        .map_err(|e| CliError::runtime(format!("{}: {e}", args.input.display())))?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            create_dir(parent)?;
        }
    }
    save_table(&table, gamma, &args.out)
        .map_err(|e| CliError::runtime(format!("{}: {e}", args.out.display())))?;
    println!(
        "wrote {} ({} states)",
        args.out.display(),
        table.state_count()
    );
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<(), CliError> {
    let (table, gamma) = load_table(&args.input)
        .map_err(|e| CliError::runtime(format!("{}: {e}", args.input.display())))?;
    println!("file: {}", args.input.display());
    print!("{}", report::inspect_text(&table, gamma));
    Ok(())
}
