//! Active actions: candidate plans, their utility, and the argmax choice.
//!
//! A plan's utility is `alpha * rel - beta * cost - gamma * amb` where `rel`
//! is the co-occurrence reliability of the feedback the plan targets, `cost`
//! the number of operations relative to the budget, and `amb` the expected
//! share of hypotheses left standing after the outcome.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::difference::{DiffSignature, Dimension, Direction};
use crate::env::{Entity, EnvError, EnvSpec, EnvState, Environment, FactorId, Obs, ResultId, Scope};
use crate::screening::CooccurrenceStats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterventionError {
    #[error("no plan available: hypotheses exhausted and scope already maximal")]
    NoPlan,
    #[error("cannot select from an empty plan set")]
    EmptySelection,
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("invalid utility weights: {0}")]
    Weights(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScopeOp {
    ExpandTemporal,
    ExpandSpatial(BTreeSet<Entity>),
    ReduceSpatial(BTreeSet<Entity>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionPlan {
    pub toggles: Vec<(FactorId, bool)>,
    pub scope_ops: Vec<ScopeOp>,
    /// Signature under which statistics and memory file this action.
    pub label: String,
}

impl ActionPlan {
    pub fn new(
        toggles: Vec<(FactorId, bool)>,
        scope_ops: Vec<ScopeOp>,
        label: String,
    ) -> Result<Self, InterventionError> {
        let mut seen = BTreeSet::new();
        for (f, _) in &toggles {
            if !seen.insert(*f) {
                return Err(InterventionError::Plan(format!("{f} toggled twice")));
            }
        }
        if scope_ops.iter().any(|op| matches!(op, ScopeOp::ReduceSpatial(keep) if keep.is_empty())) {
            return Err(InterventionError::Plan("reduction would empty the spatial set".into()));
        }
        Ok(Self { toggles, scope_ops, label })
    }

    /// Single factor set to `enabled`, labelled `set:f2=on`.
    pub fn toggle(factor: FactorId, enabled: bool) -> Self {
        Self {
            toggles: vec![(factor, enabled)],
            scope_ops: Vec::new(),
            label: format!("set:{factor}={}", if enabled { "on" } else { "off" }),
        }
    }

    pub fn scope_only(op: ScopeOp) -> Self {
        let label = match &op {
            ScopeOp::ExpandTemporal => "scope:expand-temporal".to_string(),
            ScopeOp::ExpandSpatial(_) => "scope:expand-spatial".to_string(),
            ScopeOp::ReduceSpatial(keep) => {
                let ids: Vec<String> = keep.iter().map(ToString::to_string).collect();
                format!("scope:reduce={}", ids.join(","))
            }
        };
        Self { toggles: Vec::new(), scope_ops: vec![op], label }
    }

    pub fn operation_count(&self) -> usize {
        self.toggles.len() + self.scope_ops.len()
    }

    /// Lowest factor this plan touches, `usize::MAX` for scope-only plans.
    pub fn lowest_factor(&self) -> usize {
        self.toggles.iter().map(|(f, _)| f.0).min().unwrap_or(usize::MAX)
    }

    /// Applies the scope operations in order.
    pub fn apply_scope(&self, scope: &Scope, spec: &EnvSpec) -> Result<Scope, InterventionError> {
        let mut out = scope.clone();
        for op in &self.scope_ops {
            out = match op {
                ScopeOp::ExpandTemporal => {
                    Scope { temporal_window: expand_window(out.temporal_window, spec.max_steps), ..out }
                }
                ScopeOp::ExpandSpatial(ids) => {
                    let mut s = out.clone();
                    s.spatial_set.extend(ids.iter().copied());
                    s
                }
                ScopeOp::ReduceSpatial(keep) => reduce_scope(&out, keep)?,
            };
        }
        out.validate_for(spec)?;
        Ok(out)
    }
}

impl fmt::Display for ActionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

fn expand_window(window: u64, max_steps: u64) -> u64 {
    if window >= max_steps {
        window
    } else {
        window.saturating_mul(2).min(max_steps)
    }
}

/// Doubles the window (up to `max_steps`) and makes every identifier visible.
pub fn expand_scope(scope: &Scope, spec: &EnvSpec) -> Scope {
    let mut spatial_set = scope.spatial_set.clone();
    spatial_set.extend(spec.all_entities());
    Scope { temporal_window: expand_window(scope.temporal_window, spec.max_steps), spatial_set }
}

pub fn reduce_scope(scope: &Scope, keep: &BTreeSet<Entity>) -> Result<Scope, InterventionError> {
    if keep.is_empty() {
        return Err(EnvError::Scope("reduction must keep at least one identifier".into()).into());
    }
    if let Some(e) = keep.iter().find(|e| !scope.contains(**e)) {
        return Err(EnvError::Scope(format!("{e} is not in the current scope")).into());
    }
    Ok(Scope { temporal_window: scope.temporal_window, spatial_set: keep.clone() })
}

pub fn scope_is_maximal(scope: &Scope, spec: &EnvSpec) -> bool {
    scope.temporal_window >= spec.max_steps && spec.all_entities().is_subset(&scope.spatial_set)
}

#[derive(Debug, Clone, Copy)]
pub struct PlanningContext<'a> {
    pub hypotheses: &'a BTreeSet<FactorId>,
    pub current: &'a EnvState,
    pub scope: &'a Scope,
    pub spec: &'a EnvSpec,
    pub last_delta_empty: bool,
    pub budget: usize,
}

/// One flip per hypothesis factor, plus scope expansions when nothing changed last step.
pub fn propose_plans(ctx: PlanningContext<'_>) -> Result<Vec<ActionPlan>, InterventionError> {
    if ctx.budget == 0 {
        return Err(InterventionError::Precondition("budget must be at least 1".into()));
    }
    let maximal = scope_is_maximal(ctx.scope, ctx.spec);
    if ctx.hypotheses.is_empty() && maximal {
        return Err(InterventionError::NoPlan);
    }
    let mut plans: Vec<ActionPlan> =
        ctx.hypotheses.iter().map(|&f| ActionPlan::toggle(f, ctx.current.factor(f) != Obs::On)).collect();
    if (ctx.last_delta_empty || ctx.hypotheses.is_empty()) && !maximal {
        let hidden: BTreeSet<Entity> = ctx.spec.all_entities().difference(&ctx.scope.spatial_set).copied().collect();
        plans.push(ActionPlan::scope_only(ScopeOp::ExpandSpatial(hidden)));
        plans.push(ActionPlan::scope_only(ScopeOp::ExpandTemporal));
    }
    Ok(plans)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.1, gamma: 0.5 }
    }
}

impl UtilityWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, InterventionError> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), InterventionError> {
        if [self.alpha, self.beta, self.gamma].iter().all(|w| w.is_finite() && *w > 0.0) {
            Ok(())
        } else {
            Err(InterventionError::Weights("alpha, beta and gamma must be finite and positive".into()))
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { alpha: self.alpha * c, beta: self.beta * c, gamma: self.gamma * c }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanAssessment {
    pub rel: f64,
    pub cost: f64,
    pub amb: f64,
    pub utility: f64,
}

impl PlanAssessment {
    pub fn new(rel: f64, cost: f64, amb: f64, weights: &UtilityWeights) -> Self {
        Self { rel, cost, amb, utility: weights.alpha * rel - weights.beta * cost - weights.gamma * amb }
    }
}

/// What the planner knows when scoring a plan.
#[derive(Debug, Clone, Copy)]
pub struct PlanEvidence<'a> {
    pub stats: &'a CooccurrenceStats,
    pub target: ResultId,
    pub hypotheses: &'a BTreeSet<FactorId>,
    pub budget: usize,
}

/// The target change a plan is trying to provoke.
pub fn targeted_signature(plan: &ActionPlan, target: ResultId) -> DiffSignature {
    let direction = match plan.toggles.first() {
        Some((_, false)) => Direction::Disappeared,
        _ => Direction::Appeared,
    };
    DiffSignature { dimension: Dimension::Spatial, location: Entity::Result(target), direction }
}

/// Expected ambiguity after the plan's outcome, assuming each hypothesis is
/// equally likely to be the cause. Flipping `s` of `h` hypotheses leaves `s`
/// of them if the target reacts and `h - s` otherwise.
pub fn expected_ambiguity(plan: &ActionPlan, hypotheses: &BTreeSet<FactorId>) -> f64 {
    let h = hypotheses.len();
    if h == 0 {
        return 0.0;
    }
    let s = plan.toggles.iter().filter(|(f, _)| hypotheses.contains(f)).count();
    let expected_left = ((s * s + (h - s) * (h - s)) as f64) / h as f64;
    ((expected_left - 1.0) / (h.saturating_sub(1).max(1) as f64)).clamp(0.0, 1.0)
}

/// Ambiguity actually left after an executed plan.
pub fn realized_ambiguity(before: usize, after: usize) -> f64 {
    ((after.saturating_sub(1)) as f64 / (before.saturating_sub(1).max(1)) as f64).clamp(0.0, 1.0)
}

pub fn assess_plan(plan: &ActionPlan, evidence: &PlanEvidence<'_>, weights: &UtilityWeights) -> PlanAssessment {
    let rel = evidence
        .stats
        .cooccurrence_score(&plan.label, &targeted_signature(plan, evidence.target))
        .map_or(0.5, |s| (s + 1.0) / 2.0);
    let cost = plan.operation_count() as f64 / evidence.budget.max(1) as f64;
    let amb = expected_ambiguity(plan, evidence.hypotheses);
    PlanAssessment::new(rel, cost, amb, weights)
}

fn nearly_equal(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Index of the plan with the highest mean utility over `samples_per_plan`
/// assessments. Ties go to the lower mean cost, then the lowest factor id.
pub fn select_plan<F>(
    plans: &[ActionPlan],
    mut assessor: F,
    samples_per_plan: usize,
) -> Result<usize, InterventionError>
where
    F: FnMut(&ActionPlan, usize) -> PlanAssessment,
{
    if plans.is_empty() {
        return Err(InterventionError::EmptySelection);
    }
    if samples_per_plan == 0 {
        return Err(InterventionError::Precondition("samples_per_plan must be at least 1".into()));
    }
    let n = samples_per_plan as f64;
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, plan) in plans.iter().enumerate() {
        let (mut u, mut c) = (0.0, 0.0);
        for s in 0..samples_per_plan {
            let a = assessor(plan, s);
            u += a.utility;
            c += a.cost;
        }
        let (u, c) = (u / n, c / n);
        let better = match best {
            None => true,
            Some((j, bu, bc)) => {
                if !nearly_equal(u, bu) {
                    u > bu
                } else if !nearly_equal(c, bc) {
                    c < bc
                } else {
                    plan.lowest_factor() < plans[j].lowest_factor()
                }
            }
        };
        if better {
            best = Some((i, u, c));
        }
    }
    Ok(best.expect("plans is nonempty").0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorEffect {
    /// Results that followed the factor across both settings.
    Associated(Vec<ResultId>),
    NotAssociated,
}

/// Sets `factor` to `first` then to `second`, observing under `scope` after each.
/// Consumes exactly two interventions.
pub fn compare_factor(
    env: &mut Environment,
    scope: &Scope,
    factor: FactorId,
    first: bool,
    second: bool,
) -> Result<FactorEffect, InterventionError> {
    if first == second {
        return Err(InterventionError::Precondition("the two settings must differ".into()));
    }
    if factor.0 >= env.num_factors() {
        return Err(EnvError::Intervention(format!("unknown factor {factor}")).into());
    }
    scope.validate_for(env.spec())?;
    env.apply_intervention(&ActionPlan::toggle(factor, first))?;
    let a = env.observe(scope)?;
    env.apply_intervention(&ActionPlan::toggle(factor, second))?;
    let b = env.observe(scope)?;
    let tracking: Vec<ResultId> = (0..a.results_present.len())
        .map(ResultId)
        .filter(|&r| match (a.result(r).flag(), b.result(r).flag()) {
            (Some(x), Some(y)) => x == first && y == second,
            _ => false,
        })
        .collect();
    Ok(if tracking.is_empty() { FactorEffect::NotAssociated } else { FactorEffect::Associated(tracking) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Trigger {
    Goal,
    AbnormalFeedback,
    SelfImpact,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TriggerState {
    pub goal_gap: f64,
    pub abnormal_seen: bool,
    pub self_cost_exceeded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TriggerThresholds {
    /// Goal fires when the gap exceeds this.
    pub goal_gap: f64,
}

pub fn evaluate_triggers(ts: &TriggerState, thresholds: &TriggerThresholds) -> BTreeSet<Trigger> {
    let mut fired = BTreeSet::new();
    if ts.goal_gap > thresholds.goal_gap {
        fired.insert(Trigger::Goal);
    }
    if ts.abnormal_seen {
        fired.insert(Trigger::AbnormalFeedback);
    }
    if ts.self_cost_exceeded {
        fired.insert(Trigger::SelfImpact);
    }
    fired
}
