//! Command-line experiment driver.
//!
//! `frd run` executes a sweep (one setting × agent counts × seeds) and
//! writes one CSV per run plus a combined summary; `frd presets` lists the
//! built-in numbered settings; `frd stats` recomputes sweep statistics
//! from any results CSV.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use frd_core::federation::AggregationMode;
use frd_core::harness::{
    group_stats, parse_agent_counts, parse_config, parse_csv, parse_seed_spec, preset, run_sweep,
    ExperimentSetting, GroupRunResult, SweepCell, PRESET_COUNT,
};
use frd_core::rounds::{Mode, MODE_NAMES};

#[derive(Parser)]
#[command(
    name = "frd",
    version,
    about = "Federated reinforcement distillation simulator for CartPole agent groups"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one setting across agent counts and seeds, writing CSV results.
    Run(RunArgs),
    /// List the built-in numbered settings.
    Presets,
    /// Recompute sweep statistics from a results CSV.
    Stats {
        /// Path to a CSV produced by `frd run` (for example `out/summary.csv`).
        csv: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Built-in setting number (1..7) or path to a `key = value` config file.
    #[arg(long)]
    setting: String,
    /// Exchange mode override: solo, frd_policy, frd_value, frd_both,
    /// policy_distillation, or fedavg.
    #[arg(long)]
    mode: Option<String>,
    /// Agent counts to sweep, e.g. "4" or "1,4".
    #[arg(long)]
    agents: Option<String>,
    /// Seeds: single value, comma list, or half-open range like "0..10".
    #[arg(long)]
    seeds: Option<String>,
    /// Mission threshold override (mean trailing-window duration).
    #[arg(long)]
    threshold: Option<f64>,
    /// Results directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Per-agent episode budget override.
    #[arg(long)]
    episode_cap: Option<u32>,
    /// Aggregation override: unweighted or visit_weighted.
    #[arg(long)]
    aggregation: Option<String>,
    /// Print one line per finished run.
    #[arg(long)]
    verbose: bool,
}

fn main() {
    let cli = Cli::parse();
    if let Err(message) = execute(cli) {
        eprintln!("error: {message}");
        std::process::exit(1);
    }
}

fn execute(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Presets => {
            print_presets();
            Ok(())
        }
        Command::Stats { csv } => {
            let text = std::fs::read_to_string(&csv)
                .map_err(|e| format!("{}: {e}", csv.display()))?;
            let rows = parse_csv(&text).map_err(|e| format!("{}: {e}", csv.display()))?;
            if rows.is_empty() {
                return Err(format!("{}: no result rows", csv.display()));
            }
            print_cells(&group_stats(&rows));
            Ok(())
        }
        Command::Run(args) => run_command(args),
    }
}

fn load_setting(spec: &str) -> Result<ExperimentSetting, String> {
    if let Ok(number) = spec.parse::<u32>() {
        return preset(number)
            .ok_or_else(|| format!("no built-in setting {number} (valid: 1..{PRESET_COUNT})"));
    }
    let text = std::fs::read_to_string(spec).map_err(|e| format!("{spec}: {e}"))?;
    parse_config(&text).map_err(|e| format!("{spec}: {e}"))
}

fn run_command(args: RunArgs) -> Result<(), String> {
    let mut base = load_setting(&args.setting)?;
    if let Some(mode) = &args.mode {
        base.mode = Mode::from_str(mode)?;
    }
    if let Some(threshold) = args.threshold {
        base.threshold = threshold;
    }
    if let Some(cap) = args.episode_cap {
        base.episode_cap = cap;
    }
    if let Some(aggregation) = &args.aggregation {
        base.aggregation = AggregationMode::from_str(aggregation)?;
    }
    let agent_counts = match &args.agents {
        Some(spec) => parse_agent_counts(spec)?,
        None => vec![base.agents],
    };
    let seeds = match &args.seeds {
        Some(spec) => parse_seed_spec(spec)?,
        None => vec![base.seed],
    };

    let total = agent_counts.len() * seeds.len();
    let verbose = args.verbose;
    let mut finished = 0usize;
    let on_run = |result: &GroupRunResult| {
        finished += 1;
        if verbose {
            let status = if result.complete {
                format!("completed in {} episodes", result.episodes)
            } else {
                format!("incomplete after {} episodes", result.episodes)
            };
            eprintln!(
                "[{finished}/{total}] setting {} mode {} U={} seed {}: {status}, \
                 {} payload records / {} bytes",
                result.setting_id,
                result.mode,
                result.agents,
                result.seed,
                result.total_payload_records,
                result.total_payload_bytes
            );
        }
    };

    let outcome = run_sweep(&base, &agent_counts, &seeds, Some(&args.out), on_run)
        .map_err(|e| e.to_string())?;
    println!(
        "{} runs written under {} (summary: {})",
        outcome.rows.len(),
        args.out.display(),
        args.out.join("summary.csv").display()
    );
    print_cells(&outcome.cells);
    Ok(())
}

fn print_presets() {
    println!("{:<8} {:>5} {:>5} {:>5} {:>5} {:>7}", "setting", "S", "E", "I", "n", "layers");
    for number in 1..=PRESET_COUNT {
        let p = preset(number).expect("all numbered presets exist");
        println!(
            "{:<8} {:>5} {:>5} {:>5} {:>5} {:>7}",
            p.id, p.subsections, p.exchange_period, p.initial_episodes, p.hidden_width, p.hidden_layers
        );
    }
    println!();
    println!(
        "defaults: mode {}, U {}, threshold {}, window {}, episode cap {}",
        ExperimentSetting::default().mode,
        ExperimentSetting::default().agents,
        ExperimentSetting::default().threshold,
        ExperimentSetting::default().window,
        ExperimentSetting::default().episode_cap,
    );
    println!("modes: {}", MODE_NAMES.join(", "));
}

fn print_cells(cells: &[SweepCell]) {
    println!(
        "{:<8} {:<20} {:>6} {:>5} {:>9} {:>8} {:>8} {:>8} {:>8} {:>6} {:>6}",
        "setting", "mode", "agents", "runs", "completed", "mean", "median", "q25", "q75", "min", "max"
    );
    for cell in cells {
        let s = &cell.stats;
        println!(
            "{:<8} {:<20} {:>6} {:>5} {:>9} {:>8.1} {:>8.1} {:>8.1} {:>8.1} {:>6} {:>6}",
            cell.setting,
            cell.mode.to_string(),
            cell.agents,
            s.runs,
            s.completed,
            s.mean,
            s.median,
            s.q25,
            s.q75,
            s.min,
            s.max
        );
    }
}
