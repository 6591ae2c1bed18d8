//! Difference detection between environment states and degree-of-difference scoring.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Entity, EnvState, Obs, Scope};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("states are not comparable: {0}")]
    Comparison(String),
    #[error("invalid degree weights: {0}")]
    Weights(String),
    #[error("cannot parse difference signature {0:?}")]
    Parse(String),
}

/// Declaration order is the tie-break order for δ* selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Temporal,
    Spatial,
    Magnitude,
    Frequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Appeared,
    Disappeared,
    Changed,
}

impl Direction {
    pub fn reversed(self) -> Self {
        match self {
            Direction::Appeared => Direction::Disappeared,
            Direction::Disappeared => Direction::Appeared,
            Direction::Changed => Direction::Changed,
        }
    }
}

/// The identity of a difference: what changed, where, and which way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DiffSignature {
    pub dimension: Dimension,
    pub location: Entity,
    pub direction: Direction,
}

impl fmt::Display for DiffSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dim = match self.dimension {
            Dimension::Temporal => "temporal",
            Dimension::Spatial => "spatial",
            Dimension::Magnitude => "magnitude",
            Dimension::Frequency => "frequency",
        };
        let dir = match self.direction {
            Direction::Appeared => "appeared",
            Direction::Disappeared => "disappeared",
            Direction::Changed => "changed",
        };
        write!(f, "{dim}:{}:{dir}", self.location)
    }
}

impl FromStr for DiffSignature {
    type Err = DiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DiffError::Parse(s.to_string());
        let mut parts = s.split(':');
        let (Some(dim), Some(loc), Some(dir), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let dimension = match dim {
            "temporal" => Dimension::Temporal,
            "spatial" => Dimension::Spatial,
            "magnitude" => Dimension::Magnitude,
            "frequency" => Dimension::Frequency,
            _ => return Err(bad()),
        };
        let direction = match dir {
            "appeared" => Direction::Appeared,
            "disappeared" => Direction::Disappeared,
            "changed" => Direction::Changed,
            _ => return Err(bad()),
        };
        let location = loc.parse().map_err(|_| bad())?;
        Ok(Self { dimension, location, direction })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Difference {
    pub dimension: Dimension,
    pub location: Entity,
    pub direction: Direction,
    /// 1.0 for boolean flips.
    pub delta_magnitude: f64,
    pub first_seen: u64,
    pub occurrence_count: u32,
    /// Steps the changed value has held, counting `first_seen`.
    pub persistence: u64,
}

impl Difference {
    pub fn signature(&self) -> DiffSignature {
        DiffSignature { dimension: self.dimension, location: self.location, direction: self.direction }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceSet {
    pub items: Vec<Difference>,
    pub scope: Scope,
    pub from_time: u64,
    pub to_time: u64,
}

impl DifferenceSet {
    pub fn empty(scope: Scope, time: u64) -> Self {
        Self { items: Vec::new(), scope, from_time: time, to_time: time }
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn signatures(&self) -> impl Iterator<Item = DiffSignature> + '_ {
        self.items.iter().map(Difference::signature)
    }

    pub fn find(&self, sig: &DiffSignature) -> Option<&Difference> {
        self.items.iter().find(|d| d.signature() == *sig)
    }

    pub fn touches(&self, location: Entity) -> bool {
        self.items.iter().any(|d| d.location == location)
    }
}

/// Parameters of the degree function and the classification thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeWeights {
    pub w_magnitude: f64,
    pub w_frequency: f64,
    pub w_persistence: f64,
    pub theta_significant: f64,
    pub theta_abnormal: f64,
}

impl Default for DegreeWeights {
    fn default() -> Self {
        Self { w_magnitude: 1.0, w_frequency: 1.0, w_persistence: 1.0, theta_significant: 0.5, theta_abnormal: 1.5 }
    }
}

impl DegreeWeights {
    pub fn new(w_magnitude: f64, w_frequency: f64, w_persistence: f64) -> Self {
        Self { w_magnitude, w_frequency, w_persistence, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), DiffError> {
        let ws = [self.w_magnitude, self.w_frequency, self.w_persistence];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(DiffError::Weights("weights must be finite and nonnegative".into()));
        }
        if ws.iter().all(|w| *w == 0.0) {
            return Err(DiffError::Weights("at least one weight must be positive".into()));
        }
        if self.theta_significant.partial_cmp(&self.theta_abnormal) != Some(std::cmp::Ordering::Less) {
            return Err(DiffError::Weights("theta_significant must be below theta_abnormal".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DegreeClass {
    Minor,
    Significant,
    Abnormal,
}

/// Differences between two states under `scope`.
///
/// `before.time + 1` is taken as the action step, so a change first seen
/// later than that is classed as temporal.
pub fn diff(before: &EnvState, after: &EnvState, scope: &Scope) -> Result<DifferenceSet, DiffError> {
    diff_series(&[before.clone(), after.clone()], scope)
}

/// Net differences between the first and last state of a series. The
/// intermediate states supply first-seen time, occurrence count and persistence.
pub fn diff_series(states: &[EnvState], scope: &Scope) -> Result<DifferenceSet, DiffError> {
    let (Some(first), Some(last)) = (states.first(), states.last()) else {
        return Err(DiffError::Comparison("no states given".into()));
    };
    if states.iter().any(|s| {
        s.factor_states.len() != first.factor_states.len() || s.results_present.len() != first.results_present.len()
    }) {
        return Err(DiffError::Comparison("states come from differently shaped environments".into()));
    }
    let action_step = first.time + 1;
    let mut items = Vec::new();
    for &location in &scope.spatial_set {
        let (Some(a), Some(b)) = (first.get(location), last.get(location)) else {
            return Err(DiffError::Comparison(format!("{location} is outside the observed environment")));
        };
        if a == Obs::Unobserved || b == Obs::Unobserved {
            return Err(DiffError::Comparison(format!("{location} is in scope but was not observed")));
        }
        if a == b {
            continue;
        }
        let direction = match (a, b) {
            (Obs::Off, Obs::On) => Direction::Appeared,
            (Obs::On, Obs::Off) => Direction::Disappeared,
            _ => Direction::Changed,
        };
        let mut occurrence_count = 0u32;
        let mut first_seen = last.time;
        let mut prev = a;
        for s in &states[1..] {
            let cur = s.get(location).unwrap_or(Obs::Unobserved);
            if cur == Obs::Unobserved {
                continue;
            }
            if cur != prev {
                occurrence_count += 1;
                first_seen = s.time;
                prev = cur;
            }
        }
        let dimension = if first_seen > action_step { Dimension::Temporal } else { Dimension::Spatial };
        items.push(Difference {
            dimension,
            location,
            direction,
            delta_magnitude: 1.0,
            first_seen,
            occurrence_count: occurrence_count.max(1),
            persistence: last.time.saturating_sub(first_seen) + 1,
        });
    }
    Ok(DifferenceSet { items, scope: scope.clone(), from_time: first.time, to_time: last.time })
}

/// Weighted sum of clipped magnitude, frequency in the window and persisted fraction of the window.
pub fn degree(delta: &Difference, weights: &DegreeWeights, window: u64) -> f64 {
    let window = window.max(1) as f64;
    let magnitude = delta.delta_magnitude.clamp(0.0, 1.0);
    let frequency = f64::from(delta.occurrence_count) / window;
    let persistence = (delta.persistence as f64).min(window) / window;
    weights.w_magnitude * magnitude + weights.w_frequency * frequency + weights.w_persistence * persistence
}

pub fn classify(score: f64, weights: &DegreeWeights) -> DegreeClass {
    if score < weights.theta_significant {
        DegreeClass::Minor
    } else if score < weights.theta_abnormal {
        DegreeClass::Significant
    } else {
        DegreeClass::Abnormal
    }
}

/// Total order used to pick δ*: higher degree first, then lower location, then dimension order.
pub fn informativeness_order(a: (&Difference, f64), b: (&Difference, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then_with(|| a.0.location.cmp(&b.0.location))
        .then_with(|| a.0.dimension.cmp(&b.0.dimension))
        .then_with(|| a.0.direction.cmp(&b.0.direction))
}

/// δ*: the highest-degree difference in the set.
pub fn most_informative<'a>(set: &'a DifferenceSet, weights: &DegreeWeights, window: u64) -> Option<&'a Difference> {
    set.items
        .iter()
        .map(|d| (d, degree(d, weights, window)))
        .min_by(|a, b| informativeness_order(*a, *b))
        .map(|(d, _)| d)
}
