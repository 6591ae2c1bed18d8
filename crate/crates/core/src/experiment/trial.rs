//! One seeded trial of either strategy.

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, ExperimentError, Strategy};
use crate::difference::{classify, diff, DegreeClass, Direction};
use crate::env::{Entity, EnvState, Environment, Scope};
use crate::intervention::{
    assess_plan, evaluate_triggers, propose_plans, realized_ambiguity, select_plan, PlanEvidence, PlanningContext,
    Trigger, TriggerState, TriggerThresholds,
};
use crate::memory::{MixedMemory, Scenario};
use crate::reasoner::{canonical_key, QueryCache, Reasoner, ReasonerAnswer, ReasonerError, ReasonerQuery, StateKey};
use crate::screening::{
    judge_correctness, screen_by_action, screen_by_expectation, CooccurrenceStats, ExpectationTemplate, JudgeContext,
    TemplateSource, VerdictStatus,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub strategy: Strategy,
    pub trial_index: usize,
    pub seed: u64,
    /// Fresh reasoner queries.
    pub queries: usize,
    pub success: bool,
    pub steps_taken: u64,
}

/// Outcome plus what the trial showed the reasoner, for accounting checks.
#[derive(Debug, Clone)]
pub struct TrialTrace {
    pub outcome: TrialOutcome,
    /// Canonical key of every state presented to the query cache, in order.
    pub presented: Vec<StateKey>,
    /// Active only: plan rounds whose realized ambiguity stayed above the threshold.
    pub reproposals: usize,
    /// Active only: the agent's memory at the end of the trial.
    pub memory: Option<MixedMemory>,
}

/// Per-trial seed from the master seed and trial index (SplitMix64 finalizer).
pub fn trial_seed(master_seed: u64, trial_index: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(master_seed ^ mix(trial_index as u64))
}

pub fn run_trial(
    config: &ExperimentConfig,
    strategy: Strategy,
    trial_index: usize,
    reasoner: &mut dyn Reasoner,
) -> Result<TrialOutcome, ExperimentError> {
    run_trial_traced(config, strategy, trial_index, reasoner).map(|t| t.outcome)
}

pub fn run_trial_traced(
    config: &ExperimentConfig,
    strategy: Strategy,
    trial_index: usize,
    reasoner: &mut dyn Reasoner,
) -> Result<TrialTrace, ExperimentError> {
    config.validate()?;
    let seed = trial_seed(config.master_seed, trial_index);
    let env = Environment::new(config.env.clone(), seed)?;
    let session = Session::new(config, env, reasoner)?;
    match strategy {
        Strategy::Observer => session.observe_only(strategy, trial_index, seed),
        Strategy::Active => ActiveAgent::new(config, session)?.run(trial_index, seed),
    }
}

/// Environment, reasoner and query bookkeeping shared by both strategies.
struct Session<'a> {
    config: &'a ExperimentConfig,
    env: Environment,
    scope: Scope,
    reasoner: &'a mut dyn Reasoner,
    cache: QueryCache,
    /// Distinct observed states in order of first appearance.
    history: Vec<EnvState>,
    presented: Vec<StateKey>,
}

impl<'a> Session<'a> {
    fn new(
        config: &'a ExperimentConfig,
        env: Environment,
        reasoner: &'a mut dyn Reasoner,
    ) -> Result<Self, ExperimentError> {
        let scope = Scope::full(env.spec());
        let first = env.observe(&scope)?;
        Ok(Self { config, scope, reasoner, cache: QueryCache::new(), presented: Vec::new(), history: vec![first], env })
    }

    fn current(&self) -> Result<EnvState, ExperimentError> {
        Ok(self.env.observe(&self.scope)?)
    }

    /// Presents the current state to the cache; the backend only sees new
    /// states. `None` when the observations contradict the reasoner's model.
    fn ask(&mut self) -> Result<Option<ReasonerAnswer>, ExperimentError> {
        let current = self.current()?;
        let key = canonical_key(&current);
        if !self.history.iter().any(|s| canonical_key(s) == key) {
            self.history.push(current.clone());
        }
        let mut states = self.history.clone();
        if states.last().map(canonical_key) != Some(key.clone()) {
            states.push(current);
        }
        self.presented.push(key);
        let query = ReasonerQuery::new(states, self.config.target_result)?;
        match self.cache.dedup_query(self.reasoner, &query) {
            Ok((answer, _fresh)) => Ok(Some(answer)),
            Err(ReasonerError::Inconsistent(_)) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn solved(&self, answer: &ReasonerAnswer) -> Result<bool, ExperimentError> {
        let truth = self.env.ground_truth(self.config.target_result)?;
        Ok(answer.identified() == Some(truth))
    }

    fn out_of_budget(&self) -> bool {
        self.cache.fresh_count() >= self.config.max_queries_per_trial || self.env.time() >= self.config.env.max_steps
    }

    fn finish(self, strategy: Strategy, trial_index: usize, seed: u64, success: bool) -> TrialTrace {
        TrialTrace {
            outcome: TrialOutcome {
                strategy,
                trial_index,
                seed,
                queries: self.cache.fresh_count(),
                success,
                steps_taken: self.env.time(),
            },
            presented: self.presented,
            reproposals: 0,
            memory: None,
        }
    }

    /// Passive loop: the environment drifts and every step's state is put to the reasoner.
    fn observe_only(
        mut self,
        strategy: Strategy,
        trial_index: usize,
        seed: u64,
    ) -> Result<TrialTrace, ExperimentError> {
        loop {
            let Some(answer) = self.ask()? else {
                return Ok(self.finish(strategy, trial_index, seed, false));
            };
            if self.solved(&answer)? {
                return Ok(self.finish(strategy, trial_index, seed, true));
            }
            if self.out_of_budget() {
                return Ok(self.finish(strategy, trial_index, seed, false));
            }
            self.env.drift_step();
        }
    }
}

struct ActiveAgent<'a> {
    session: Session<'a>,
    stats: CooccurrenceStats,
    memory: MixedMemory,
    triggers: TriggerState,
    last_delta_empty: bool,
    reproposals: usize,
}

impl<'a> ActiveAgent<'a> {
    fn new(config: &ExperimentConfig, session: Session<'a>) -> Result<Self, ExperimentError> {
        let memory = MixedMemory::new(config.epsilon, config.min_support, config.movability_threshold)?;
        Ok(Self {
            session,
            stats: CooccurrenceStats::new(),
            memory,
            triggers: TriggerState { goal_gap: 1.0, abnormal_seen: false, self_cost_exceeded: false },
            last_delta_empty: false,
            reproposals: 0,
        })
    }

    fn run(mut self, trial_index: usize, seed: u64) -> Result<TrialTrace, ExperimentError> {
        let config = self.session.config;
        let mut success = false;
        loop {
            self.triggers.self_cost_exceeded = self.session.out_of_budget();
            let fired = evaluate_triggers(&self.triggers, &TriggerThresholds::default());
            // Budget exhaustion ends the trial; no further action without a goal gap.
            if fired.contains(&Trigger::SelfImpact) || !fired.contains(&Trigger::Goal) {
                break;
            }
            let Some(answer) = self.session.ask()? else {
                break;
            };
            if self.session.solved(&answer)? {
                success = true;
                self.triggers.goal_gap = 0.0;
                continue;
            }
            if self.session.out_of_budget() {
                self.triggers.self_cost_exceeded = true;
                continue;
            }
            let hypotheses = answer.hypotheses();
            self.act(&hypotheses, config)?;
        }
        let mut trace = self.session.finish(Strategy::Active, trial_index, seed, success);
        trace.reproposals = self.reproposals;
        trace.memory = Some(self.memory);
        Ok(trace)
    }

    /// Plans, executes and screens one intervention.
    fn act(
        &mut self,
        hypotheses: &std::collections::BTreeSet<crate::env::FactorId>,
        config: &ExperimentConfig,
    ) -> Result<(), ExperimentError> {
        let target = config.target_result;
        let before = self.session.current()?;
        let plans = propose_plans(PlanningContext {
            hypotheses,
            current: &before,
            scope: &self.session.scope,
            spec: self.session.env.spec(),
            last_delta_empty: self.last_delta_empty,
            budget: config.plan_budget,
        })?;
        let evidence = PlanEvidence { stats: &self.stats, target, hypotheses, budget: config.plan_budget };
        let pick = select_plan(&plans, |p, _| assess_plan(p, &evidence, &config.utility), config.samples_per_plan)?;
        let plan = &plans[pick];

        self.session.scope = plan.apply_scope(&self.session.scope, self.session.env.spec())?;
        let before = self.session.current()?;
        self.session.env.apply_intervention(plan)?;
        let after = self.session.current()?;
        let delta = diff(&before, &after, &self.session.scope)?;
        self.last_delta_empty = delta.is_empty();
        self.stats.record_observation(&plan.label, &delta, true);

        let window = config.observation_window;
        self.triggers.abnormal_seen = delta.items.iter().any(|d| {
            classify(crate::difference::degree(d, &config.degree, window), &config.degree) == DegreeClass::Abnormal
        });

        let expected = ExpectationTemplate::at(Entity::Result(target), TemplateSource::Reasoner);
        let candidates =
            screen_by_action(&self.stats, &plan.label, &delta, config.theta_screen, &config.degree, window)?;
        let ranked = screen_by_expectation(candidates, std::slice::from_ref(&expected));
        if let Some(top) = ranked.first().filter(|c| expected.matches(&c.difference)) {
            let sig = top.difference.signature();
            let ctx = JudgeContext { action_sig: &plan.label, weights: &config.degree, window };
            let repeats = self.stats.counts(&plan.label, &sig).count_with_action;
            let verdict = judge_correctness(&top.difference, &self.memory, ctx, repeats, config.repeat_threshold);
            if verdict.status != VerdictStatus::Suspect {
                let scenario = Scenario::new("sim", &self.session.scope.summary(), after.time / window);
                self.memory.record(&plan.label, sig, scenario, &verdict, &delta, &config.degree, window)?;
            }
        }

        // Hypotheses the outcome leaves standing, by direct elimination.
        let target_moved = delta.items.iter().any(|d| {
            d.location == Entity::Result(target) && matches!(d.direction, Direction::Appeared | Direction::Disappeared)
        });
        let toggled: std::collections::BTreeSet<_> = plan.toggles.iter().map(|(f, _)| *f).collect();
        let left = if plan.toggles.is_empty() {
            hypotheses.len()
        } else if target_moved {
            hypotheses.intersection(&toggled).count()
        } else {
            hypotheses.difference(&toggled).count()
        };
        if realized_ambiguity(hypotheses.len(), left) > config.ambiguity_threshold {
            self.reproposals += 1;
        }
        Ok(())
    }
}
