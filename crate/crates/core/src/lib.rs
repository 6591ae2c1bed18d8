//! Actively Feedback Getting: difference-driven feedback detection, active
//! intervention planning and difference-keyed memory, plus a seeded
//! active-vs-observer causal identification experiment.

pub mod difference;
pub mod env;
pub mod experiment;
pub mod intervention;
pub mod memory;
pub mod reasoner;
pub mod screening;

pub use difference::{
    classify, degree, diff, diff_series, most_informative, DegreeClass, DegreeWeights, DiffError, DiffSignature,
    Difference, DifferenceSet, Dimension, Direction,
};
pub use env::{Entity, EnvError, EnvSpec, EnvState, Environment, FactorId, Obs, ResultId, Scope, StepEvent};
pub use experiment::{
    export_csv, run_experiment, run_trial, welch_t, ExperimentConfig, ExperimentError, ExperimentReport, StatReport,
    Strategy, TrialOutcome, WelchResult,
};
pub use intervention::{ActionPlan, InterventionError, ScopeOp, UtilityWeights};
pub use memory::{MemoryError, MemoryKey, MixedMemory, Store};
pub use reasoner::{AnswerStatus, OracleReasoner, QueryCache, Reasoner, ReasonerAnswer, ReasonerError, ReasonerQuery};
pub use screening::{ScreeningError, Verdict, VerdictStatus};
