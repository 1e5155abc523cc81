//! `kset`: run scenarios, sweep the `(n, f, k)` grid, check trace files and
//! print the solvability table.
//!
//! Exit status is 0 when every check passes, 1 when a property is violated
//! or cannot be established, and 2 for usage, parse and I/O errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use kset_core::analysis::{check_all, partition_scenario};
use kset_core::model::{ProcessId, SystemParams};
use kset_core::par::Execution;
use kset_core::sim::{parse_scenario, replay, AdversaryKind, Scenario};
use kset_core::sweep::{run_sweep, solvability_table, SweepConfig};
use kset_core::{parse_trace, run_simulation, write_trace, Outcome, TwoStage, Verdict};

/// Largest grid `sweep` accepts.
const MAX_SWEEP_N: u32 = 32;

#[derive(Debug, Parser)]
#[command(name = "kset", version, about = "k-set agreement laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one scenario and check agreement, validity and termination.
    Run(RunArgs),
    /// Run seeded scenarios over every (n, f, k) up to a bound.
    Sweep(SweepArgs),
    /// Replay a trace file and run the property checks on it.
    Check(CheckArgs),
    /// Print the predicted solvability of every (n, f, k).
    Table {
        #[arg(long, default_value_t = 8)]
        n_max: u32,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AdversaryArg {
    Fair,
    InitialCrash,
    Partition,
    Isolate,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// TOML scenario file; its settings override the flags.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    f: Option<u32>,
    #[arg(long)]
    k: Option<u32>,
    #[arg(long, value_enum, default_value_t = AdversaryArg::Fair)]
    adversary: AdversaryArg,
    /// Isolated group for `--adversary isolate`; defaults to the first n - f processes.
    #[arg(long, value_delimiter = ',')]
    group: Vec<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    fairness_bound: Option<u32>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 6)]
    n_max: u32,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Write the report as key=value records.
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Stop after this many simulations and flag the report as partial.
    #[arg(long)]
    max_runs: Option<u64>,
    /// Run rows on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, clap::Args)]
struct CheckArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value = TwoStage::NAME)]
    algorithm: String,
    /// Agreement bound; defaults to the k recorded in the trace.
    #[arg(long)]
    k: Option<u32>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Check(args) => cmd_check(args),
        Command::Table { n_max } => {
            print!("{}", solvability_table(n_max));
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn algorithm(name: &str) -> Result<TwoStage> {
    TwoStage::by_name(name).ok_or_else(|| {
        anyhow!(
            "unknown algorithm {name:?} (known: {}, {})",
            TwoStage::NAME,
            TwoStage::STRICT_NAME
        )
    })
}

fn flag_scenario(args: &RunArgs) -> Result<Option<Scenario>> {
    let (n, f, k) = match (args.n, args.f, args.k) {
        (Some(n), Some(f), Some(k)) => (n, f, k),
        (None, None, None) => return Ok(None),
        _ => bail!("--n, --f and --k must be given together"),
    };
    let params = SystemParams::new(n, f, k)?;
    let base = match args.adversary {
        AdversaryArg::Fair => Scenario::new(params),
        AdversaryArg::InitialCrash => {
            Scenario::new(params).with_adversary(AdversaryKind::InitialCrash)
        }
        AdversaryArg::Partition => partition_scenario(params)?,
        AdversaryArg::Isolate => {
            let group = if args.group.is_empty() {
                (1..=params.quota()).map(ProcessId).collect()
            } else {
                args.group.iter().map(|&p| ProcessId(p)).collect()
            };
            Scenario::new(params).with_adversary(AdversaryKind::Isolate { group })
        }
    };
    let mut s = base.with_seed(args.seed);
    if let Some(b) = args.fairness_bound {
        s = s.with_fairness_bound(b);
    }
    Ok(Some(s))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn report(verdicts: &[Verdict]) -> bool {
    for v in verdicts {
        println!("{v}");
    }
    verdicts.iter().all(|v| v.outcome == Outcome::Pass)
}

fn cmd_run(args: RunArgs) -> Result<bool> {
    let base = flag_scenario(&args)?;
    let mut name = args.algorithm.clone();
    let scenario = match &args.scenario {
        Some(path) => {
            let file =
                parse_scenario(&read(path)?).with_context(|| format!("{}", path.display()))?;
            if file.algorithm.is_some() {
                name = file.algorithm.clone();
            }
            file.resolve(base.as_ref())
                .with_context(|| format!("{}", path.display()))?
        }
        None => base.ok_or_else(|| anyhow!("give --scenario or all of --n, --f and --k"))?,
    };
    let alg = algorithm(name.as_deref().unwrap_or(TwoStage::NAME))?;
    let trace = run_simulation(&alg, &scenario)?;
    if let Some(out) = &args.trace_out {
        fs::write(out, write_trace(&trace))
            .with_context(|| format!("writing {}", out.display()))?;
    }
    println!(
        "run n={} f={} k={} adversary={} seed={} steps={} complete={}",
        scenario.params.n(),
        scenario.params.f(),
        scenario.params.k(),
        scenario.adversary,
        scenario.seed,
        trace.steps.len(),
        trace.is_complete()
    );
    Ok(report(&check_all(&trace, scenario.params.k())))
}

fn cmd_sweep(args: SweepArgs) -> Result<bool> {
    if args.n_max == 0 || args.n_max > MAX_SWEEP_N {
        bail!("--n-max must be between 1 and {MAX_SWEEP_N}");
    }
    let config = SweepConfig {
        max_runs: args.max_runs,
        execution: if args.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
        ..SweepConfig::new(args.n_max, args.seeds)
    };
    let report = run_sweep(&config)?;
    print!("{}", report.to_table());
    if let Some(out) = &args.report_out {
        fs::write(out, report.to_records())
            .with_context(|| format!("writing {}", out.display()))?;
    }
    if report.partial {
        eprintln!(
            "warning: run budget reached, report is partial ({} rows)",
            report.rows.len()
        );
    }
    Ok(report.all_match())
}

fn cmd_check(args: CheckArgs) -> Result<bool> {
    let alg = algorithm(&args.algorithm)?;
    let text = read(&args.trace)?;
    let trace = parse_trace(&text).with_context(|| format!("{}", args.trace.display()))?;
    let k = args.k.unwrap_or(trace.params.k());
    let mut verdicts = vec![replay(&trace, &alg)];
    verdicts.extend(check_all(&trace, k));
    Ok(report(&verdicts))
}
