//! Seeded factor→result simulation.
//!
//! Factors are dense ids `0..n`, effective factors first. Result `k` is
//! produced by factor `result_map[k]`; disturbing factors never produce a
//! result. A result is present at time `t` iff its factor was enabled at
//! time `t - causation_delay`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intervention::ActionPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FactorId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResultId(pub usize);

// Displayed 1-based (`f1`, `r2`) to match how factors are named in prompts and reports.
impl fmt::Display for FactorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.0 + 1)
    }
}

impl fmt::Display for ResultId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0 + 1)
    }
}

/// Anything an observation can refer to. Factors order before results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Entity {
    Factor(FactorId),
    Result(ResultId),
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Factor(id) => id.fmt(f),
            Entity::Result(id) => id.fmt(f),
        }
    }
}

impl std::str::FromStr for Entity {
    type Err = EnvError;

    /// Parses the 1-based display form (`f3`, `r2`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EnvError::Parse(s.to_string());
        let (kind, digits) = s.split_at(s.char_indices().nth(1).map_or(s.len(), |(i, _)| i));
        let n: usize = digits.parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        match kind {
            "f" => Ok(Entity::Factor(FactorId(n - 1))),
            "r" => Ok(Entity::Result(ResultId(n - 1))),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment configuration: {0}")]
    Config(String),
    #[error("invalid scope: {0}")]
    Scope(String),
    #[error("invalid intervention: {0}")]
    Intervention(String),
    #[error("unknown result {0}")]
    Lookup(ResultId),
    #[error("cannot parse identifier {0:?}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub num_effective: usize,
    pub num_disturbing: usize,
    /// `result_map[k]` is the effective factor producing result `k`.
    pub result_map: Vec<FactorId>,
    pub drift_interval: u64,
    pub drift_toggle_count: usize,
    pub causation_delay: u64,
    pub max_steps: u64,
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self::with_counts(3, 4)
    }
}

impl EnvSpec {
    /// Identity result map, drift every step flipping one factor, no delay.
    pub fn with_counts(num_effective: usize, num_disturbing: usize) -> Self {
        Self {
            num_effective,
            num_disturbing,
            result_map: (0..num_effective).map(FactorId).collect(),
            drift_interval: 1,
            drift_toggle_count: 1,
            causation_delay: 0,
            max_steps: 1000,
        }
    }

    pub fn num_factors(&self) -> usize {
        self.num_effective + self.num_disturbing
    }

    pub fn num_results(&self) -> usize {
        self.num_effective
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.num_effective == 0 {
            return Err(EnvError::Config("at least one effective factor is required".into()));
        }
        if self.drift_interval == 0 {
            return Err(EnvError::Config("drift_interval must be at least 1".into()));
        }
        if self.drift_toggle_count > self.num_factors() {
            return Err(EnvError::Config(format!(
                "drift_toggle_count {} exceeds factor count {}",
                self.drift_toggle_count,
                self.num_factors()
            )));
        }
        if self.max_steps == 0 {
            return Err(EnvError::Config("max_steps must be at least 1".into()));
        }
        if self.result_map.len() != self.num_effective {
            return Err(EnvError::Config(format!(
                "result_map has {} entries for {} effective factors",
                self.result_map.len(),
                self.num_effective
            )));
        }
        let mut seen = vec![false; self.num_effective];
        for f in &self.result_map {
            if f.0 >= self.num_effective {
                return Err(EnvError::Config(format!("result_map targets non-effective factor {f}")));
            }
            if std::mem::replace(&mut seen[f.0], true) {
                return Err(EnvError::Config(format!("result_map maps {f} to more than one result")));
            }
        }
        Ok(())
    }

    /// Every factor and result identifier of this environment.
    pub fn all_entities(&self) -> BTreeSet<Entity> {
        (0..self.num_factors())
            .map(|i| Entity::Factor(FactorId(i)))
            .chain((0..self.num_results()).map(|k| Entity::Result(ResultId(k))))
            .collect()
    }

    pub fn contains(&self, entity: Entity) -> bool {
        match entity {
            Entity::Factor(f) => f.0 < self.num_factors(),
            Entity::Result(r) => r.0 < self.num_results(),
        }
    }
}

/// Observation window: how many past steps and which identifiers are visible.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scope {
    pub temporal_window: u64,
    pub spatial_set: BTreeSet<Entity>,
}

impl Scope {
    pub fn new(temporal_window: u64, spatial_set: BTreeSet<Entity>) -> Result<Self, EnvError> {
        if temporal_window == 0 {
            return Err(EnvError::Scope("temporal_window must be at least 1".into()));
        }
        if spatial_set.is_empty() {
            return Err(EnvError::Scope("spatial_set must not be empty".into()));
        }
        Ok(Self { temporal_window, spatial_set })
    }

    /// Everything visible, window of one step.
    pub fn full(spec: &EnvSpec) -> Self {
        Self { temporal_window: 1, spatial_set: spec.all_entities() }
    }

    pub fn contains(&self, entity: Entity) -> bool {
        self.spatial_set.contains(&entity)
    }

    pub fn validate_for(&self, spec: &EnvSpec) -> Result<(), EnvError> {
        if self.temporal_window == 0 || self.spatial_set.is_empty() {
            return Err(EnvError::Scope("scope must have a window and a nonempty spatial set".into()));
        }
        match self.spatial_set.iter().find(|e| !spec.contains(**e)) {
            Some(e) => Err(EnvError::Scope(format!("unknown identifier {e}"))),
            None => Ok(()),
        }
    }

    /// Short stable description used in scenario tags.
    pub fn summary(&self) -> String {
        format!("w{}:n{}", self.temporal_window, self.spatial_set.len())
    }
}

/// One observed entry. `Unobserved` is distinct from a negative reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Obs {
    Unobserved,
    Off,
    On,
}

impl Obs {
    pub fn from_flag(flag: bool) -> Self {
        if flag {
            Obs::On
        } else {
            Obs::Off
        }
    }

    pub fn flag(self) -> Option<bool> {
        match self {
            Obs::Unobserved => None,
            Obs::Off => Some(false),
            Obs::On => Some(true),
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Obs::Unobserved => '?',
            Obs::Off => '0',
            Obs::On => '1',
        }
    }
}

/// Snapshot of the environment at one step, possibly restricted to a scope.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub time: u64,
    pub factor_states: Vec<Obs>,
    pub results_present: Vec<Obs>,
}

impl EnvState {
    /// Fully observed state from raw flags.
    pub fn from_flags(time: u64, factors: &[bool], results: &[bool]) -> Self {
        Self {
            time,
            factor_states: factors.iter().copied().map(Obs::from_flag).collect(),
            results_present: results.iter().copied().map(Obs::from_flag).collect(),
        }
    }

    pub fn get(&self, entity: Entity) -> Option<Obs> {
        match entity {
            Entity::Factor(f) => self.factor_states.get(f.0).copied(),
            Entity::Result(r) => self.results_present.get(r.0).copied(),
        }
    }

    pub fn factor(&self, f: FactorId) -> Obs {
        self.factor_states.get(f.0).copied().unwrap_or(Obs::Unobserved)
    }

    pub fn result(&self, r: ResultId) -> Obs {
        self.results_present.get(r.0).copied().unwrap_or(Obs::Unobserved)
    }

    pub fn num_factors(&self) -> usize {
        self.factor_states.len()
    }

    /// Replaces every entry outside `scope` with `Unobserved`.
    pub fn restrict(&self, scope: &Scope) -> Self {
        let mask = |entity: Entity, obs: Obs| if scope.contains(entity) { obs } else { Obs::Unobserved };
        Self {
            time: self.time,
            factor_states: self
                .factor_states
                .iter()
                .enumerate()
                .map(|(i, &o)| mask(Entity::Factor(FactorId(i)), o))
                .collect(),
            results_present: self
                .results_present
                .iter()
                .enumerate()
                .map(|(k, &o)| mask(Entity::Result(ResultId(k)), o))
                .collect(),
        }
    }

    /// `f:0100000 r:010` style row.
    pub fn table_row(&self) -> String {
        let f: String = self.factor_states.iter().map(|o| o.symbol()).collect();
        let r: String = self.results_present.iter().map(|o| o.symbol()).collect();
        format!("f:{f} r:{r}")
    }
}

/// What happened on the most recent step.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StepEvent {
    pub drifted: Vec<FactorId>,
    pub toggled: Vec<FactorId>,
}

#[derive(Debug, Clone)]
pub struct Environment {
    spec: EnvSpec,
    /// Inverse of `result_map`: `produces[f]` is the result factor `f` produces.
    produces: Vec<Option<ResultId>>,
    time: u64,
    factors: Vec<bool>,
    results: Vec<bool>,
    /// Factor snapshots for the last `causation_delay` steps, oldest first.
    pending: VecDeque<Vec<bool>>,
    rng: ChaCha8Rng,
    last_event: StepEvent,
}

impl Environment {
    pub fn new(spec: EnvSpec, seed: u64) -> Result<Self, EnvError> {
        spec.validate()?;
        let n = spec.num_factors();
        let mut produces = vec![None; n];
        for (k, f) in spec.result_map.iter().enumerate() {
            produces[f.0] = Some(ResultId(k));
        }
        let delay = spec.causation_delay as usize;
        Ok(Self {
            pending: std::iter::repeat(vec![false; n]).take(delay).collect(),
            results: vec![false; spec.num_results()],
            factors: vec![false; n],
            produces,
            time: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_event: StepEvent::default(),
            spec,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn factor_enabled(&self, f: FactorId) -> Option<bool> {
        self.factors.get(f.0).copied()
    }

    pub fn last_event(&self) -> &StepEvent {
        &self.last_event
    }

    /// Result produced by `f`, if it is an effective factor.
    pub fn result_of(&self, f: FactorId) -> Option<ResultId> {
        self.produces.get(f.0).copied().flatten()
    }

    pub fn full_state(&self) -> EnvState {
        EnvState::from_flags(self.time, &self.factors, &self.results)
    }

    pub fn observe(&self, scope: &Scope) -> Result<EnvState, EnvError> {
        scope.validate_for(&self.spec)?;
        Ok(self.full_state().restrict(scope))
    }

    pub fn apply_intervention(&mut self, plan: &ActionPlan) -> Result<EnvState, EnvError> {
        if let Some((f, _)) = plan.toggles.iter().find(|(f, _)| f.0 >= self.factors.len()) {
            return Err(EnvError::Intervention(format!(
                "unknown factor {f} in an environment with {} factors",
                self.factors.len()
            )));
        }
        let mut toggled = Vec::new();
        for &(f, enabled) in &plan.toggles {
            if self.factors[f.0] != enabled {
                toggled.push(f);
            }
            self.factors[f.0] = enabled;
        }
        self.advance(StepEvent { drifted: Vec::new(), toggled });
        Ok(self.full_state())
    }

    pub fn drift_step(&mut self) -> EnvState {
        let next = self.time + 1;
        let mut drifted = Vec::new();
        if next % self.spec.drift_interval == 0 && self.spec.drift_toggle_count > 0 {
            let mut picked = sample(&mut self.rng, self.factors.len(), self.spec.drift_toggle_count).into_vec();
            picked.sort_unstable();
            for i in picked {
                self.factors[i] = !self.factors[i];
                drifted.push(FactorId(i));
            }
        }
        self.advance(StepEvent { drifted, toggled: Vec::new() });
        self.full_state()
    }

    pub fn ground_truth(&self, result: ResultId) -> Result<FactorId, EnvError> {
        self.spec.result_map.get(result.0).copied().ok_or(EnvError::Lookup(result))
    }

    fn advance(&mut self, event: StepEvent) {
        self.time += 1;
        let cause_state = if self.spec.causation_delay == 0 {
            self.factors.clone()
        } else {
            self.pending.push_back(self.factors.clone());
            self.pending.pop_front().expect("delay queue holds causation_delay snapshots")
        };
        for (k, f) in self.spec.result_map.iter().enumerate() {
            self.results[k] = cause_state[f.0];
        }
        self.last_event = event;
    }
}
