use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::difference::DegreeWeights;
use crate::env::{EnvSpec, FactorId, ResultId};
use crate::intervention::UtilityWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Active,
    Observer,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Active => "active",
            Strategy::Observer => "observer",
        })
    }
}

impl FromStr for Strategy {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "active" => Ok(Strategy::Active),
            "observer" => Ok(Strategy::Observer),
            other => Err(ExperimentError::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub target_result: ResultId,
    pub num_trials: usize,
    pub master_seed: u64,
    pub strategies: Vec<Strategy>,
    pub max_queries_per_trial: usize,
    pub utility: UtilityWeights,
    pub degree: DegreeWeights,
    /// Window used for degree scoring of detected differences.
    pub observation_window: u64,
    pub epsilon: f64,
    pub min_support: u64,
    pub movability_threshold: usize,
    pub theta_screen: f64,
    pub repeat_threshold: u64,
    pub samples_per_plan: usize,
    /// Maximum toggles per plan; normalizes plan cost.
    pub plan_budget: usize,
    /// Realized ambiguity above which a plan round is repeated.
    pub ambiguity_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::with_counts(3, 4),
            target_result: ResultId(1),
            num_trials: 100,
            master_seed: 2024,
            strategies: vec![Strategy::Active, Strategy::Observer],
            max_queries_per_trial: 64,
            utility: UtilityWeights::default(),
            degree: DegreeWeights::default(),
            observation_window: 10,
            epsilon: 0.05,
            min_support: 10,
            movability_threshold: 2,
            theta_screen: 0.5,
            repeat_threshold: 2,
            samples_per_plan: 1,
            plan_budget: 1,
            ambiguity_threshold: 0.5,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        self.env.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        if self.target_result.0 >= self.env.num_results() {
            return bad(format!("target result {} does not exist", self.target_result));
        }
        if self.num_trials < 2 {
            return Err(ExperimentError::Statistics(super::StatsError::TooFewSamples(self.num_trials)));
        }
        if self.strategies.is_empty() {
            return bad("at least one strategy is required".into());
        }
        if self.max_queries_per_trial == 0 || self.plan_budget == 0 || self.samples_per_plan == 0 {
            return bad("max_queries_per_trial, plan_budget and samples_per_plan must be positive".into());
        }
        if self.observation_window == 0 || self.repeat_threshold == 0 {
            return bad("observation_window and repeat_threshold must be positive".into());
        }
        if self.movability_threshold < 2 {
            return bad("movability_threshold must be at least 2".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(-1.0..=1.0).contains(&self.theta_screen) {
            return bad(format!("theta_screen must lie in [-1, 1], got {}", self.theta_screen));
        }
        self.utility.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.degree.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(())
    }

    /// Parses the flat `key = value` configuration text. Unset keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        let cfg = file.apply(Self::default())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Renders every field as it would appear in a configuration file.
    pub fn to_toml_string(&self) -> String {
        ConfigFile::from(self).to_string()
    }
}

/// On-disk form: every field optional, names mirror [`ExperimentConfig`].
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    num_effective: Option<usize>,
    num_disturbing: Option<usize>,
    /// Factor names per result, e.g. `["f1", "f2", "f3"]`.
    result_map: Option<Vec<String>>,
    drift_interval: Option<u64>,
    drift_toggle_count: Option<usize>,
    causation_delay: Option<u64>,
    max_steps: Option<u64>,
    target_result: Option<String>,
    num_trials: Option<usize>,
    master_seed: Option<u64>,
    strategies: Option<Vec<Strategy>>,
    max_queries_per_trial: Option<usize>,
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    w_magnitude: Option<f64>,
    w_frequency: Option<f64>,
    w_persistence: Option<f64>,
    theta_significant: Option<f64>,
    theta_abnormal: Option<f64>,
    observation_window: Option<u64>,
    epsilon: Option<f64>,
    min_support: Option<u64>,
    movability_threshold: Option<usize>,
    theta_screen: Option<f64>,
    repeat_threshold: Option<u64>,
    samples_per_plan: Option<usize>,
    plan_budget: Option<usize>,
    ambiguity_threshold: Option<f64>,
}

fn parse_factor(s: &str) -> Result<FactorId, ExperimentError> {
    match s.parse() {
        Ok(crate::env::Entity::Factor(f)) => Ok(f),
        _ => Err(ExperimentError::Config(format!("{s:?} is not a factor name like \"f2\""))),
    }
}

fn parse_result(s: &str) -> Result<ResultId, ExperimentError> {
    match s.parse() {
        Ok(crate::env::Entity::Result(r)) => Ok(r),
        _ => Err(ExperimentError::Config(format!("{s:?} is not a result name like \"r2\""))),
    }
}

impl ConfigFile {
    fn apply(self, mut c: ExperimentConfig) -> Result<ExperimentConfig, ExperimentError> {
        macro_rules! set {
            ($($src:ident => $($dst:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$src { c.$($dst).+ = v; })*
            };
        }
        let counts_changed = self.num_effective.is_some();
        set! {
            num_effective => env.num_effective,
            num_disturbing => env.num_disturbing,
            drift_interval => env.drift_interval,
            drift_toggle_count => env.drift_toggle_count,
            causation_delay => env.causation_delay,
            max_steps => env.max_steps,
            num_trials => num_trials,
            master_seed => master_seed,
            strategies => strategies,
            max_queries_per_trial => max_queries_per_trial,
            alpha => utility.alpha,
            beta => utility.beta,
            gamma => utility.gamma,
            w_magnitude => degree.w_magnitude,
            w_frequency => degree.w_frequency,
            w_persistence => degree.w_persistence,
            theta_significant => degree.theta_significant,
            theta_abnormal => degree.theta_abnormal,
            observation_window => observation_window,
            epsilon => epsilon,
            min_support => min_support,
            movability_threshold => movability_threshold,
            theta_screen => theta_screen,
            repeat_threshold => repeat_threshold,
            samples_per_plan => samples_per_plan,
            plan_budget => plan_budget,
            ambiguity_threshold => ambiguity_threshold,
        }
        match self.result_map {
            Some(names) => c.env.result_map = names.iter().map(|s| parse_factor(s)).collect::<Result<_, _>>()?,
            None if counts_changed => c.env.result_map = (0..c.env.num_effective).map(FactorId).collect(),
            None => {}
        }
        if let Some(r) = self.target_result {
            c.target_result = parse_result(&r)?;
        }
        Ok(c)
    }
}

impl From<&ExperimentConfig> for ConfigFile {
    fn from(c: &ExperimentConfig) -> Self {
        Self {
            num_effective: Some(c.env.num_effective),
            num_disturbing: Some(c.env.num_disturbing),
            result_map: Some(c.env.result_map.iter().map(ToString::to_string).collect()),
            drift_interval: Some(c.env.drift_interval),
            drift_toggle_count: Some(c.env.drift_toggle_count),
            causation_delay: Some(c.env.causation_delay),
            max_steps: Some(c.env.max_steps),
            target_result: Some(c.target_result.to_string()),
            num_trials: Some(c.num_trials),
            master_seed: Some(c.master_seed),
            strategies: Some(c.strategies.clone()),
            max_queries_per_trial: Some(c.max_queries_per_trial),
            alpha: Some(c.utility.alpha),
            beta: Some(c.utility.beta),
            gamma: Some(c.utility.gamma),
            w_magnitude: Some(c.degree.w_magnitude),
            w_frequency: Some(c.degree.w_frequency),
            w_persistence: Some(c.degree.w_persistence),
            theta_significant: Some(c.degree.theta_significant),
            theta_abnormal: Some(c.degree.theta_abnormal),
            observation_window: Some(c.observation_window),
            epsilon: Some(c.epsilon),
            min_support: Some(c.min_support),
            movability_threshold: Some(c.movability_threshold),
            theta_screen: Some(c.theta_screen),
            repeat_threshold: Some(c.repeat_threshold),
            samples_per_plan: Some(c.samples_per_plan),
            plan_budget: Some(c.plan_budget),
            ambiguity_threshold: Some(c.ambiguity_threshold),
        }
    }
}

impl fmt::Display for ConfigFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&toml::to_string(self).map_err(|_| fmt::Error)?)
    }
}
