//! `afg`: run the active-vs-observer experiment, compare CSV columns, or step the simulator.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afg_core::env::{Entity, Environment, FactorId, ResultId, Scope};
use afg_core::experiment::{
    export_csv, format_p, read_csv_column, render_summary, run_experiment, welch_t, ExperimentConfig, ExperimentError,
};
use afg_core::intervention::ActionPlan;
use afg_core::reasoner::{OracleReasoner, ReasonerError};
use clap::{Parser, Subcommand, ValueEnum};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "afg", version, about = "Actively Feedback Getting experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Oracle,
    Remote,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run both strategies, write the per-trial CSV and print summary statistics.
    Run {
        /// Flat key = value configuration file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "afg-report.csv")]
        out: PathBuf,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Trials per strategy.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_enum, default_value = "oracle")]
        backend: Backend,
        /// Result whose cause is sought, e.g. r2.
        #[arg(long)]
        target_result: Option<String>,
        /// Concurrent trials; 0 uses every logical processor.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Welch's t-test on one numeric column of two CSV files.
    Ttest {
        csv_a: PathBuf,
        csv_b: PathBuf,
        #[arg(long, default_value = "queries")]
        column: String,
    },
    /// Print the environment state after each drift step.
    Demo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Factors to enable before stepping, e.g. --enable f1.
        #[arg(long)]
        enable: Vec<String>,
    },
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let code = match &e {
            ExperimentError::Export(_) | ExperimentError::Reasoner(ReasonerError::Remote { .. }) => EXIT_IO,
            _ => EXIT_USAGE,
        };
        Self { code, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed, trials, backend, target_result, jobs } => {
            cmd_run(config.as_deref(), &out, Overrides { seed, trials, target_result }, backend, jobs)
        }
        Command::Ttest { csv_a, csv_b, column } => cmd_ttest(&csv_a, &csv_b, &column),
        Command::Demo { config, steps, seed, enable } => cmd_demo(config.as_deref(), steps, seed, &enable),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("afg: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

struct Overrides {
    seed: Option<u64>,
    trials: Option<usize>,
    target_result: Option<String>,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    match path {
        Some(p) => Ok(ExperimentConfig::load(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn cmd_run(
    config_path: Option<&Path>,
    out: &Path,
    overrides: Overrides,
    backend: Backend,
    jobs: usize,
) -> Result<String, Failure> {
    let mut config = load_config(config_path)?;
    if let Some(seed) = overrides.seed {
        config.master_seed = seed;
    }
    if let Some(trials) = overrides.trials {
        config.num_trials = trials;
    }
    if let Some(r) = overrides.target_result {
        config.target_result = match r.parse::<Entity>() {
            Ok(Entity::Result(id)) => id,
            _ => return Err(Failure::usage(format!("--target-result expects a result such as r2, got {r:?}"))),
        };
    }
    config.validate()?;

    let report = match backend {
        Backend::Oracle => run_experiment(&config, || OracleReasoner, jobs)?,
        Backend::Remote => run_remote(&config, jobs)?,
    };
    export_csv(&report, out)?;
    let mut text = render_summary(&report.stats);
    let _ = writeln!(text, "wrote {} trials to {}", report.outcomes.len(), out.display());
    Ok(text)
}

#[cfg(feature = "remote")]
fn run_remote(config: &ExperimentConfig, jobs: usize) -> Result<afg_core::experiment::ExperimentReport, Failure> {
    use afg_core::reasoner::{PromptTemplate, RemoteConfig, RemoteReasoner};

    let remote = RemoteConfig::from_env().map_err(|e| Failure::usage(e.to_string()))?;
    RemoteReasoner::new(remote.clone(), PromptTemplate::default()).map_err(|e| Failure::usage(e.to_string()))?;
    let make = || RemoteReasoner::new(remote.clone(), PromptTemplate::default()).expect("client built above");
    Ok(run_experiment(config, make, jobs)?)
}

#[cfg(not(feature = "remote"))]
fn run_remote(_: &ExperimentConfig, _: usize) -> Result<afg_core::experiment::ExperimentReport, Failure> {
    Err(Failure::usage("this build has no remote backend; rebuild with the `remote` feature"))
}

fn cmd_ttest(a: &Path, b: &Path, column: &str) -> Result<String, Failure> {
    let xs = read_csv_column(a, column).map_err(|e| Failure::usage(e.to_string()))?;
    let ys = read_csv_column(b, column).map_err(|e| Failure::usage(e.to_string()))?;
    let w = welch_t(&xs, &ys).map_err(|e| Failure::usage(e.to_string()))?;
    Ok(format!("t = {:.6}\ndf = {:.6}\np = {}\n", w.t, w.df, format_p(w.p_two_tailed)))
}

fn cmd_demo(config_path: Option<&Path>, steps: u64, seed: u64, enable: &[String]) -> Result<String, Failure> {
    let config = load_config(config_path)?;
    let mut env = Environment::new(config.env.clone(), seed).map_err(|e| Failure::usage(e.to_string()))?;
    let mut toggles = Vec::new();
    for name in enable {
        match name.parse::<Entity>() {
            Ok(Entity::Factor(f)) if f.0 < env.num_factors() => toggles.push((f, true)),
            _ => return Err(Failure::usage(format!("--enable expects a factor of this environment, got {name:?}"))),
        }
    }

    let scope = Scope::full(env.spec());
    let mut out = String::new();
    let header_f: Vec<String> = (0..env.num_factors()).map(|i| FactorId(i).to_string()).collect();
    let header_r: Vec<String> = (0..env.spec().num_results()).map(|k| ResultId(k).to_string()).collect();
    let _ = writeln!(out, "# factors {} | results {}", header_f.join(" "), header_r.join(" "));
    let row = |env: &Environment, note: &str, out: &mut String| {
        let s = env.observe(&scope).expect("full scope is valid");
        let _ = writeln!(out, "t={:<4} {}{}", s.time, s.table_row(), note);
    };
    row(&env, "", &mut out);
    if !toggles.is_empty() {
        let plan =
            ActionPlan::new(toggles, Vec::new(), "demo-enable".into()).map_err(|e| Failure::usage(e.to_string()))?;
        env.apply_intervention(&plan).map_err(|e| Failure::usage(e.to_string()))?;
        row(&env, &format!("  enabled {}", names(&env.last_event().toggled)), &mut out);
    }
    for _ in 0..steps {
        env.drift_step();
        let drifted = &env.last_event().drifted;
        let note = if drifted.is_empty() { String::new() } else { format!("  drift {}", names(drifted)) };
        row(&env, &note, &mut out);
    }
    Ok(out)
}

fn names(ids: &[FactorId]) -> String {
    ids.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}
