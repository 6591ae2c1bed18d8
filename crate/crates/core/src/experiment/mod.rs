//! Active-vs-observer comparison: seeded trials, query statistics and report export.

mod config;
mod report;
mod stats;
mod trial;

use thiserror::Error;

pub use config::{ExperimentConfig, Strategy};
pub use report::{
    export_csv, format_p, read_csv_column, render_summary, write_csv, ExperimentReport, StatReport, StrategyStats,
};
pub use stats::{
    ln_gamma, regularized_incomplete_beta, student_t_two_tailed, summarize, welch_from_summaries, welch_t, StatsError,
    Summary, WelchResult, CF_TOLERANCE,
};
pub use trial::{run_trial, run_trial_traced, trial_seed, TrialOutcome, TrialTrace};

use crate::difference::DiffError;
use crate::env::EnvError;
use crate::intervention::InterventionError;
use crate::memory::MemoryError;
use crate::reasoner::{Reasoner, ReasonerError};
use crate::screening::ScreeningError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("statistics: {0}")]
    Statistics(#[from] StatsError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Intervention(#[from] InterventionError),
    #[error(transparent)]
    Difference(#[from] DiffError),
    #[error(transparent)]
    Screening(#[from] ScreeningError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("export: {0}")]
    Export(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(String),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

/// Runs every enabled strategy for `num_trials` trials each on up to `jobs`
/// threads (0 means one per logical processor). `make_reasoner` supplies one
/// backend per trial.
pub fn run_experiment<F, R>(
    config: &ExperimentConfig,
    make_reasoner: F,
    jobs: usize,
) -> Result<ExperimentReport, ExperimentError>
where
    F: Fn() -> R + Sync,
    R: Reasoner,
{
    use rayon::prelude::*;

    config.validate()?;
    let mut strategies = config.strategies.clone();
    strategies.sort();
    strategies.dedup();
    let work: Vec<(Strategy, usize)> =
        strategies.iter().flat_map(|&s| (0..config.num_trials).map(move |i| (s, i))).collect();

    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let mut outcomes = pool.install(|| {
        work.par_iter()
            .map(|&(strategy, index)| {
                let mut reasoner = make_reasoner();
                run_trial(config, strategy, index, &mut reasoner)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    outcomes.sort_by_key(|o| (o.strategy, o.trial_index));
    ExperimentReport::from_outcomes(outcomes)
}
