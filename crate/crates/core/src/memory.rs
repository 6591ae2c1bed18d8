//! Difference-keyed memory of action→feedback relationships.
//!
//! Pair frequencies form the parametric model: a pair whose empirical
//! probability reaches `epsilon` (with enough total support) is routed to the
//! parametric store, everything rarer stays as an explicit obvious record.
//! Records are keyed by the most informative difference of the event that
//! produced them, optionally refined by extra distinguishing differences.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::difference::{most_informative, DegreeWeights, DiffSignature, DifferenceSet};
use crate::screening::{Verdict, VerdictStatus};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("difference set is empty, nothing to key the record on")]
    NoKey,
    #[error("memory holds no events yet")]
    InsufficientData,
    #[error("no record under key {0}")]
    UnknownKey(MemoryKey),
    #[error("feedback judged suspect cannot be recorded")]
    Unvalidated,
    #[error("movability threshold must be at least 2, got {0}")]
    Threshold(usize),
    #[error("invalid signature {0:?}: tabs, newlines and '|' are reserved")]
    Signature(String),
    #[error("invalid memory parameters: {0}")]
    Config(String),
    #[error("malformed snapshot line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Store {
    Parametric,
    Obvious,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Generality {
    General,
    Specific,
}

/// δ* plus any refinements; more refinements means a more specific key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MemoryKey {
    pub base: DiffSignature,
    pub refinements: Vec<DiffSignature>,
}

impl MemoryKey {
    pub fn new(base: DiffSignature) -> Self {
        Self { base, refinements: Vec::new() }
    }

    pub fn specificity(&self) -> usize {
        self.refinements.len()
    }

    fn matches(&self, base: &DiffSignature, present: &BTreeSet<DiffSignature>) -> bool {
        self.base == *base && self.refinements.iter().all(|r| present.contains(r))
    }
}

impl fmt::Display for MemoryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.base)?;
        for r in &self.refinements {
            write!(f, "+{r}")?;
        }
        Ok(())
    }
}

impl FromStr for MemoryKey {
    type Err = crate::difference::DiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split('+');
        let base = parts.next().unwrap_or_default().parse()?;
        let refinements = parts.map(str::parse).collect::<Result<_, _>>()?;
        Ok(Self { base, refinements })
    }
}

/// Flat scenario tag built from environment label, scope summary and time bucket.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Scenario(pub String);

impl Scenario {
    pub fn new(environment: &str, scope_summary: &str, time_bucket: u64) -> Self {
        Self(format!("env={environment};scope={scope_summary};t={time_bucket}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationshipRecord {
    pub key: MemoryKey,
    pub action_sig: String,
    pub feedback: DiffSignature,
    /// Every scenario the relationship has been seen in.
    pub scenarios: BTreeSet<Scenario>,
    pub generality: Generality,
    pub evidence_count: u64,
}

impl RelationshipRecord {
    pub fn distinct_scenarios(&self) -> usize {
        self.scenarios.len()
    }
}

type Pair = (String, DiffSignature);
type RecordId = (MemoryKey, String, DiffSignature);

#[derive(Debug, Clone, PartialEq)]
pub struct MixedMemory {
    epsilon: f64,
    min_support: u64,
    movability_threshold: usize,
    pair_counts: BTreeMap<Pair, u64>,
    total: u64,
    parametric: BTreeMap<RecordId, RelationshipRecord>,
    obvious: BTreeMap<RecordId, RelationshipRecord>,
}

impl Default for MixedMemory {
    fn default() -> Self {
        Self::new(0.05, 10, 2).expect("default parameters are valid")
    }
}

pub fn assess_movability(
    record: &RelationshipRecord,
    distinct_scenarios_seen: usize,
    movability_threshold: usize,
) -> Result<Generality, MemoryError> {
    if movability_threshold < 2 {
        return Err(MemoryError::Threshold(movability_threshold));
    }
    let distinct = distinct_scenarios_seen.max(record.distinct_scenarios());
    Ok(if distinct >= movability_threshold { Generality::General } else { Generality::Specific })
}

fn check_sig(s: &str) -> Result<(), MemoryError> {
    if s.is_empty() || s.contains(['\t', '\n', '\r', '|']) {
        Err(MemoryError::Signature(s.to_string()))
    } else {
        Ok(())
    }
}

impl MixedMemory {
    pub fn new(epsilon: f64, min_support: u64, movability_threshold: usize) -> Result<Self, MemoryError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(MemoryError::Config(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        if movability_threshold < 2 {
            return Err(MemoryError::Threshold(movability_threshold));
        }
        Ok(Self {
            epsilon,
            min_support,
            movability_threshold,
            pair_counts: BTreeMap::new(),
            total: 0,
            parametric: BTreeMap::new(),
            obvious: BTreeMap::new(),
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn total_events(&self) -> u64 {
        self.total
    }

    pub fn pair_count(&self, action_sig: &str, feedback: &DiffSignature) -> u64 {
        self.pair_counts.get(&(action_sig.to_string(), *feedback)).copied().unwrap_or(0)
    }

    pub fn occurrence_prob(&self, action_sig: &str, feedback: &DiffSignature) -> Result<f64, MemoryError> {
        if self.total == 0 {
            return Err(MemoryError::InsufficientData);
        }
        Ok(self.pair_count(action_sig, feedback) as f64 / self.total as f64)
    }

    pub fn route(&self, action_sig: &str, feedback: &DiffSignature) -> Store {
        if self.total < self.min_support {
            return Store::Obvious;
        }
        match self.occurrence_prob(action_sig, feedback) {
            Ok(p) if p >= self.epsilon => Store::Parametric,
            _ => Store::Obvious,
        }
    }

    /// Records one validated action→feedback event, keyed by δ* of `delta`.
    /// Returns the base key.
    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        action_sig: &str,
        feedback: DiffSignature,
        scenario: Scenario,
        verdict: &Verdict,
        delta: &DifferenceSet,
        weights: &DegreeWeights,
        window: u64,
    ) -> Result<MemoryKey, MemoryError> {
        check_sig(action_sig)?;
        if verdict.status == VerdictStatus::Suspect {
            return Err(MemoryError::Unvalidated);
        }
        let star = most_informative(delta, weights, window).ok_or(MemoryError::NoKey)?.signature();
        let key = MemoryKey::new(star);
        let present: BTreeSet<_> = delta.signatures().collect();

        *self.pair_counts.entry((action_sig.to_string(), feedback)).or_default() += 1;
        self.total += 1;

        // Every key for this pair that the event matches: the base key and any
        // compound keys whose refinements are all present.
        let mut ids: Vec<RecordId> = self
            .parametric
            .keys()
            .chain(self.obvious.keys())
            .filter(|(k, a, f)| a == action_sig && *f == feedback && k.specificity() > 0 && k.matches(&star, &present))
            .cloned()
            .collect();
        ids.push((key.clone(), action_sig.to_string(), feedback));

        let threshold = self.movability_threshold;
        for id in ids {
            let rec = match self.parametric.remove(&id).or_else(|| self.obvious.remove(&id)) {
                Some(mut rec) => {
                    rec.evidence_count += 1;
                    rec.scenarios.insert(scenario.clone());
                    rec
                }
                None => RelationshipRecord {
                    key: id.0.clone(),
                    action_sig: action_sig.to_string(),
                    feedback,
                    scenarios: BTreeSet::from([scenario.clone()]),
                    generality: Generality::Specific,
                    evidence_count: 1,
                },
            };
            let mut rec = rec;
            rec.generality = assess_movability(&rec, rec.distinct_scenarios(), threshold)?;
            self.obvious.insert(id, rec);
        }
        self.reroute();
        Ok(key)
    }

    /// Moves every record into the store its pair currently routes to.
    fn reroute(&mut self) {
        let mut moves = Vec::new();
        for id in self.parametric.keys() {
            if self.route(&id.1, &id.2) == Store::Obvious {
                moves.push((id.clone(), Store::Obvious));
            }
        }
        for id in self.obvious.keys() {
            if self.route(&id.1, &id.2) == Store::Parametric {
                moves.push((id.clone(), Store::Parametric));
            }
        }
        for (id, to) in moves {
            match to {
                Store::Obvious => {
                    let rec = self.parametric.remove(&id).expect("listed from parametric");
                    self.obvious.insert(id, rec);
                }
                Store::Parametric => {
                    let rec = self.obvious.remove(&id).expect("listed from obvious");
                    self.parametric.insert(id, rec);
                }
            }
        }
    }

    /// Which store currently holds records of this pair, if any.
    pub fn store_of(&self, action_sig: &str, feedback: &DiffSignature) -> Option<Store> {
        let hit =
            |m: &BTreeMap<RecordId, RelationshipRecord>| m.keys().any(|(_, a, f)| a == action_sig && f == feedback);
        match (hit(&self.parametric), hit(&self.obvious)) {
            (true, false) => Some(Store::Parametric),
            (false, true) => Some(Store::Obvious),
            (false, false) => None,
            (true, true) => unreachable!("pair split across stores"),
        }
    }

    pub fn records(&self) -> impl Iterator<Item = (&RelationshipRecord, Store)> {
        self.parametric
            .values()
            .map(|r| (r, Store::Parametric))
            .chain(self.obvious.values().map(|r| (r, Store::Obvious)))
    }

    pub fn records_for_action<'a>(&'a self, action_sig: &'a str) -> impl Iterator<Item = &'a RelationshipRecord> + 'a {
        self.records().map(|(r, _)| r).filter(move |r| r.action_sig == action_sig)
    }

    pub fn len(&self) -> usize {
        self.parametric.len() + self.obvious.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records whose key matches δ* of `observed`, most specific first, then by evidence.
    pub fn retrieve(&self, observed: &DifferenceSet, weights: &DegreeWeights, window: u64) -> Vec<&RelationshipRecord> {
        let Some(star) = most_informative(observed, weights, window) else {
            return Vec::new();
        };
        let star = star.signature();
        let present: BTreeSet<_> = observed.signatures().collect();
        let mut hits: Vec<_> = self.records().map(|(r, _)| r).filter(|r| r.key.matches(&star, &present)).collect();
        hits.sort_by(|a, b| {
            b.key
                .specificity()
                .cmp(&a.key.specificity())
                .then(b.evidence_count.cmp(&a.evidence_count))
                .then_with(|| (&a.key, &a.action_sig, a.feedback).cmp(&(&b.key, &b.action_sig, b.feedback)))
        });
        hits
    }

    /// Adds a compound key `key + extra` alongside every record stored under `key`.
    pub fn refine_key(&mut self, key: &MemoryKey, extra: DiffSignature) -> Result<MemoryKey, MemoryError> {
        let sources: Vec<RelationshipRecord> =
            self.records().map(|(r, _)| r).filter(|r| r.key == *key).cloned().collect();
        if sources.is_empty() {
            return Err(MemoryError::UnknownKey(key.clone()));
        }
        let mut refined = key.clone();
        if extra != key.base && !refined.refinements.contains(&extra) {
            refined.refinements.push(extra);
        }
        for mut rec in sources {
            rec.key = refined.clone();
            let id = (refined.clone(), rec.action_sig.clone(), rec.feedback);
            if self.parametric.contains_key(&id) || self.obvious.contains_key(&id) {
                continue;
            }
            match self.route(&rec.action_sig, &rec.feedback) {
                Store::Parametric => self.parametric.insert(id, rec),
                Store::Obvious => self.obvious.insert(id, rec),
            };
        }
        Ok(refined)
    }

    /// One tab-separated line per record:
    /// `key  action_sig  feedback_sig  scenario[|scenario…]  evidence_count  store`.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (rec, store) in self.records() {
            let scenarios: Vec<&str> = rec.scenarios.iter().map(|s| s.0.as_str()).collect();
            let store = match store {
                Store::Parametric => "parametric",
                Store::Obvious => "obvious",
            };
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                rec.key,
                rec.action_sig,
                rec.feedback,
                scenarios.join("|"),
                rec.evidence_count,
                store
            )?;
        }
        Ok(())
    }

    /// Rebuilds a memory from a snapshot. Pair frequencies come from the
    /// base-key records; stores are re-derived from the given parameters.
    pub fn read_snapshot<R: BufRead>(
        input: R,
        epsilon: f64,
        min_support: u64,
        movability_threshold: usize,
    ) -> Result<Self, MemoryError> {
        let mut mem = Self::new(epsilon, min_support, movability_threshold)?;
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |reason: &str| MemoryError::Snapshot { line: idx + 1, reason: reason.to_string() };
            let fields: Vec<&str> = line.split('\t').collect();
            let [key, action, feedback, scenarios, evidence, store] = fields[..] else {
                return Err(bad("expected 6 tab-separated fields"));
            };
            let key: MemoryKey = key.parse().map_err(|_| bad("bad key"))?;
            let feedback: DiffSignature = feedback.parse().map_err(|_| bad("bad feedback signature"))?;
            check_sig(action).map_err(|_| bad("bad action signature"))?;
            let evidence_count: u64 = evidence.parse().map_err(|_| bad("bad evidence count"))?;
            if evidence_count == 0 {
                return Err(bad("evidence count must be at least 1"));
            }
            if !matches!(store, "parametric" | "obvious") {
                return Err(bad("store must be parametric or obvious"));
            }
            let scenarios: BTreeSet<Scenario> =
                scenarios.split('|').filter(|s| !s.is_empty()).map(|s| Scenario(s.to_string())).collect();
            if key.specificity() == 0 {
                *mem.pair_counts.entry((action.to_string(), feedback)).or_default() += evidence_count;
                mem.total += evidence_count;
            }
            let mut rec = RelationshipRecord {
                key: key.clone(),
                action_sig: action.to_string(),
                feedback,
                scenarios,
                generality: Generality::Specific,
                evidence_count,
            };
            rec.generality = assess_movability(&rec, 0, movability_threshold)?;
            mem.obvious.insert((key, action.to_string(), feedback), rec);
        }
        mem.reroute();
        Ok(mem)
    }
}
