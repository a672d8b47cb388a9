use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mamps::harness::{
    audit, check_outputs, run_batch, trace_file_name, write_summary, write_traces, RewardParams, ShieldMode,
    TraceHeader,
};
use mamps::model::PRESETS;
use mamps::policy::{ControllerGains, PolicyKind};
use mamps::Scenario;

/// Batch runner for multi-agent shielded navigation.
///
/// Worker threads follow RAYON_NUM_THREADS.
#[derive(Parser)]
#[command(name = "mamps", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate seeded episodes and write traces and summary.csv.
    Run(RunArgs),
    /// Recompute flags and metrics from traces and compare with summary.csv.
    Check {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write the four preset scenarios as TOML files.
    Demo {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML file; repeat to run several. The file stem names the preset.
    #[arg(long, required = true)]
    scenario: Vec<PathBuf>,
    #[arg(long, value_parser = parse_mode, default_values = ["mamps"])]
    mode: Vec<ShieldMode>,
    #[arg(long, default_value_t = 500)]
    episodes: usize,
    /// Base seed; episode i uses seed + i. Defaults to the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyChoice::Proportional)]
    policy: PolicyChoice,
    /// MLP weights file; implies --policy weights.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    #[arg(long, default_value_t = 10.0)]
    lambda_prime: f64,
    /// Goal radius for the bonus and the reach flag; defaults to r_goal.
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyChoice {
    Proportional,
    Weights,
    Stable,
    Recovery,
    Backup,
}

fn parse_mode(s: &str) -> Result<ShieldMode, String> {
    s.parse()
}

fn policy_kind(args: &RunArgs) -> Result<PolicyKind> {
    Ok(match (args.policy, &args.weights) {
        (PolicyChoice::Weights | PolicyChoice::Proportional, Some(path)) => PolicyKind::TaskFromFile(path.clone()),
        (PolicyChoice::Weights, None) => bail!("--policy weights needs --weights <file>"),
        (PolicyChoice::Proportional, None) => PolicyKind::TaskProportional(ControllerGains::default()),
        (PolicyChoice::Stable, _) => PolicyKind::Stable,
        (PolicyChoice::Recovery, _) => PolicyKind::Recovery,
        (PolicyChoice::Backup, _) => PolicyKind::Backup,
    })
}

fn preset_name(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .with_context(|| format!("cannot name preset from {}", path.display()))
}

/// Returns the number of audit failures.
fn run(args: &RunArgs) -> Result<usize> {
    if args.episodes == 0 {
        bail!("--episodes must be at least 1");
    }
    let mut modes = args.mode.clone();
    modes.dedup();
    let kind = policy_kind(args)?;
    let traces = args.out_dir.join("traces");
    fs::create_dir_all(&traces).with_context(|| format!("creating {}", traces.display()))?;

    let mut rows = Vec::new();
    let mut timing = String::from("preset,mode,episodes,wall_clock_secs\n");
    let mut failures = 0;
    for path in &args.scenario {
        let s = Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
        let preset = preset_name(path)?;
        for w in s.warnings() {
            eprintln!("warning: {preset}: {w}");
        }
        let rewards = RewardParams {
            lambda: args.lambda,
            lambda_prime: args.lambda_prime,
            epsilon: args.epsilon.unwrap_or(s.r_goal),
        };
        let seed = args.seed.unwrap_or(s.seed);
        let batches = run_batch(&s, &preset, &modes, &kind, args.episodes, seed, &rewards)?;
        for b in batches {
            let header = TraceHeader::new(&preset, b.mode, s, rewards.epsilon);
            let file = traces.join(trace_file_name(&preset, b.mode.as_str()));
            write_traces(&file, &header, &b.records).with_context(|| format!("writing {}", file.display()))?;
            let problems = audit(b.mode, &s, &b.records, &rewards);
            for p in &problems {
                eprintln!("audit: {preset}: {p}");
            }
            failures += problems.len();
            let m = &b.summary;
            println!(
                "{preset:>6} {:<6} K={} pr_safe={:.4} pr_reach_goal={:.4} learned={:.4} fallback={:.4} ({:.1}s)",
                m.mode, m.episodes, m.pr_safe, m.pr_reach_goal, m.learned_fraction, m.fallback_rate, m.wall_clock_secs
            );
            timing.push_str(&format!("{preset},{},{},{}\n", m.mode, m.episodes, m.wall_clock_secs));
            rows.push(b.summary);
        }
    }
    write_summary(&args.out_dir.join("summary.csv"), &rows)?;
    fs::write(args.out_dir.join("timing.csv"), timing)?;
    Ok(failures)
}

fn check(out_dir: &Path) -> Result<usize> {
    let report = check_outputs(out_dir).with_context(|| format!("checking {}", out_dir.display()))?;
    for m in report.mismatches.iter().chain(&report.audit_failures) {
        eprintln!("check: {m}");
    }
    println!(
        "checked {} summary rows, {} episodes: {} mismatches, {} audit failures",
        report.rows_checked,
        report.episodes_checked,
        report.mismatches.len(),
        report.audit_failures.len()
    );
    Ok(report.mismatches.len() + report.audit_failures.len())
}

fn demo(out_dir: &Path) -> Result<usize> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for name in PRESETS {
        let s = Scenario::preset(name).expect("known preset");
        let path = out_dir.join(format!("{name}.toml"));
        let mut f = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        f.write_all(s.to_toml_string().as_bytes())?;
        println!("{}", path.display());
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::Check { out_dir } => check(out_dir),
        Command::Demo { out_dir } => demo(out_dir),
    };
    match outcome {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} invariant failures");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
