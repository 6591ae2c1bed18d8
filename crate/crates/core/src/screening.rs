//! Turning raw differences into validated feedback.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::difference::{
    classify, degree, DegreeClass, DegreeWeights, DiffSignature, Difference, DifferenceSet, Direction,
};
use crate::env::{Entity, Scope};
use crate::memory::MixedMemory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScreeningError {
    #[error("no trials recorded for action {0:?}")]
    InsufficientData(String),
    #[error("screening threshold must be a number")]
    Threshold,
    #[error("expectation template must constrain location or direction")]
    EmptyTemplate,
    #[error("absence analysis misuse: {0}")]
    Misuse(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooccurrenceCounts {
    pub count_with_action: u64,
    pub count_without_action: u64,
    pub trials_with_action: u64,
    pub trials_without_action: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CooccurrenceStats {
    trials: BTreeMap<String, (u64, u64)>,
    counts: BTreeMap<(String, DiffSignature), (u64, u64)>,
}

impl CooccurrenceStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Counts one observation window for `action_sig`. With `action_performed`
    /// false the window is a control (e.g. drift only) and fills the without-action columns.
    pub fn record_observation(&mut self, action_sig: &str, delta: &DifferenceSet, action_performed: bool) {
        let trials = self.trials.entry(action_sig.to_string()).or_default();
        if action_performed {
            trials.0 += 1;
        } else {
            trials.1 += 1;
        }
        for sig in delta.signatures() {
            let c = self.counts.entry((action_sig.to_string(), sig)).or_default();
            if action_performed {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
    }

    pub fn counts(&self, action_sig: &str, diff_sig: &DiffSignature) -> CooccurrenceCounts {
        let (tw, two) = self.trials.get(action_sig).copied().unwrap_or_default();
        let (cw, cwo) = self.counts.get(&(action_sig.to_string(), *diff_sig)).copied().unwrap_or_default();
        CooccurrenceCounts {
            count_with_action: cw,
            count_without_action: cwo,
            trials_with_action: tw,
            trials_without_action: two,
        }
    }

    pub fn has_trials(&self, action_sig: &str) -> bool {
        self.trials.get(action_sig).is_some_and(|t| t.0 > 0)
    }

    /// P(δ | action) − P(δ | no action), in [−1, 1].
    pub fn cooccurrence_score(&self, action_sig: &str, diff_sig: &DiffSignature) -> Result<f64, ScreeningError> {
        let c = self.counts(action_sig, diff_sig);
        if c.trials_with_action == 0 {
            return Err(ScreeningError::InsufficientData(action_sig.to_string()));
        }
        if c.trials_without_action == 0 {
            return Ok(c.count_with_action as f64 / c.trials_with_action as f64);
        }
        // Cross-multiplied so that independent counts give exactly zero.
        let num = i128::from(c.count_with_action) * i128::from(c.trials_without_action)
            - i128::from(c.count_without_action) * i128::from(c.trials_with_action);
        let den = i128::from(c.trials_with_action) * i128::from(c.trials_without_action);
        Ok(num as f64 / den as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub difference: Difference,
    pub score: f64,
    pub degree: f64,
}

/// Keeps differences whose co-occurrence with `action_sig` reaches `theta`,
/// best score first, then highest degree.
pub fn screen_by_action(
    stats: &CooccurrenceStats,
    action_sig: &str,
    delta: &DifferenceSet,
    theta: f64,
    weights: &DegreeWeights,
    window: u64,
) -> Result<Vec<Candidate>, ScreeningError> {
    if theta.is_nan() {
        return Err(ScreeningError::Threshold);
    }
    if delta.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for d in &delta.items {
        let score = stats.cooccurrence_score(action_sig, &d.signature())?;
        if score >= theta {
            out.push(Candidate { difference: d.clone(), score, degree: degree(d, weights, window) });
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(b.degree.total_cmp(&a.degree)));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemplateSource {
    Reasoner,
    Memory,
}

/// Soft expectation; `None` fields are wildcards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectationTemplate {
    pub expected_location: Option<Entity>,
    pub expected_direction: Option<Direction>,
    pub source: TemplateSource,
}

impl ExpectationTemplate {
    pub fn new(
        expected_location: Option<Entity>,
        expected_direction: Option<Direction>,
        source: TemplateSource,
    ) -> Result<Self, ScreeningError> {
        if expected_location.is_none() && expected_direction.is_none() {
            return Err(ScreeningError::EmptyTemplate);
        }
        Ok(Self { expected_location, expected_direction, source })
    }

    pub fn at(location: Entity, source: TemplateSource) -> Self {
        Self { expected_location: Some(location), expected_direction: None, source }
    }

    pub fn matches(&self, d: &Difference) -> bool {
        self.expected_location.map_or(true, |l| l == d.location)
            && self.expected_direction.map_or(true, |dir| dir == d.direction)
    }
}

/// Stable partition: template matches first, nothing removed.
pub fn screen_by_expectation(candidates: Vec<Candidate>, templates: &[ExpectationTemplate]) -> Vec<Candidate> {
    let (mut hit, miss): (Vec<_>, Vec<_>) =
        candidates.into_iter().partition(|c| templates.iter().any(|t| t.matches(&c.difference)));
    hit.extend(miss);
    hit
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictStatus {
    Reliable,
    Suspect,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictReason {
    ConsistentWithMemory,
    ContradictsMemory,
    AbnormalNovel,
    NeedsRepetition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    pub reason: VerdictReason,
}

#[derive(Debug, Clone, Copy)]
pub struct JudgeContext<'a> {
    pub action_sig: &'a str,
    pub weights: &'a DegreeWeights,
    pub window: u64,
}

pub fn judge_correctness(
    candidate: &Difference,
    memory: &MixedMemory,
    ctx: JudgeContext<'_>,
    repeat_evidence: u64,
    repeat_threshold: u64,
) -> Verdict {
    let repeat_threshold = repeat_threshold.max(1);
    let same_place = |r: &&crate::memory::RelationshipRecord| r.feedback.location == candidate.location;
    let prior: Vec<_> = memory.records_for_action(ctx.action_sig).filter(same_place).collect();
    let consistent = prior.iter().any(|r| r.feedback.direction == candidate.direction);
    let contradicted = !consistent && !prior.is_empty();
    let abnormal = classify(degree(candidate, ctx.weights, ctx.window), ctx.weights) == DegreeClass::Abnormal;

    let (status, reason) = if contradicted {
        (VerdictStatus::Suspect, VerdictReason::ContradictsMemory)
    } else if consistent && repeat_evidence >= repeat_threshold {
        (VerdictStatus::Reliable, VerdictReason::ConsistentWithMemory)
    } else if abnormal {
        (VerdictStatus::Suspect, VerdictReason::AbnormalNovel)
    } else {
        (VerdictStatus::Unknown, VerdictReason::NeedsRepetition)
    };
    Verdict { status, reason }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AbsenceHypothesis {
    InsufficientStrength,
    LimitedScope,
    Interference,
    DelayedEffect,
}

/// Ranks explanations for expected feedback that did not show up.
///
/// `known_delay` is the causation delay the caller believes in, if any.
pub fn analyze_absence(
    templates: &[ExpectationTemplate],
    scope: &Scope,
    observed: &DifferenceSet,
    known_delay: Option<u64>,
) -> Result<Vec<AbsenceHypothesis>, ScreeningError> {
    use AbsenceHypothesis::*;
    if templates.is_empty() {
        return Err(ScreeningError::Misuse("no expectation to explain".into()));
    }
    if observed.items.iter().any(|d| templates.iter().any(|t| t.matches(d))) {
        return Err(ScreeningError::Misuse("expected feedback was observed".into()));
    }
    let mut ranked = Vec::with_capacity(4);
    if templates.iter().any(|t| t.expected_location.is_some_and(|l| !scope.contains(l))) {
        ranked.push(LimitedScope);
    }
    if known_delay.is_some_and(|d| d > scope.temporal_window) {
        ranked.push(DelayedEffect);
    }
    if !observed.is_empty() {
        ranked.push(Interference);
    }
    for h in [InsufficientStrength, Interference, DelayedEffect, LimitedScope] {
        if !ranked.contains(&h) {
            ranked.push(h);
        }
    }
    Ok(ranked)
}
