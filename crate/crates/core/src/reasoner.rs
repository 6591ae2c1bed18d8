//! Causal reasoners answering "which factor produces the target result?".

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvState, FactorId, Obs, ResultId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReasonerError {
    #[error("invalid query: {0}")]
    Query(String),
    #[error("observations are inconsistent with any single cause of {0}")]
    Inconsistent(ResultId),
    #[error("remote reasoner failed after {attempts} attempt(s): {message}")]
    Remote { attempts: u32, message: String },
    #[error("remote reasoner is not configured: {0}")]
    NotConfigured(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonerQuery {
    /// Oldest first; the last entry is the state being asked about.
    pub observed_states: Vec<EnvState>,
    pub target_result: ResultId,
}

impl ReasonerQuery {
    pub fn new(observed_states: Vec<EnvState>, target_result: ResultId) -> Result<Self, ReasonerError> {
        let q = Self { observed_states, target_result };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), ReasonerError> {
        let Some(first) = self.observed_states.first() else {
            return Err(ReasonerError::Query("no observed states".into()));
        };
        if self.target_result.0 >= first.results_present.len() {
            return Err(ReasonerError::Query(format!("unknown target result {}", self.target_result)));
        }
        Ok(())
    }

    pub fn latest(&self) -> &EnvState {
        self.observed_states.last().expect("validated query has states")
    }

    pub fn num_factors(&self) -> usize {
        self.latest().num_factors()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerStatus {
    Identified(FactorId),
    Undetermined(BTreeSet<FactorId>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonerAnswer {
    pub status: AnswerStatus,
    /// Factor to set and the state to set it to.
    pub suggested_toggle: Option<(FactorId, bool)>,
}

impl ReasonerAnswer {
    pub fn identified(&self) -> Option<FactorId> {
        match self.status {
            AnswerStatus::Identified(f) => Some(f),
            AnswerStatus::Undetermined(_) => None,
        }
    }

    pub fn hypotheses(&self) -> BTreeSet<FactorId> {
        match &self.status {
            AnswerStatus::Identified(f) => [*f].into(),
            AnswerStatus::Undetermined(h) => h.clone(),
        }
    }
}

pub trait Reasoner {
    fn infer(&mut self, query: &ReasonerQuery) -> Result<ReasonerAnswer, ReasonerError>;
}

impl<R: Reasoner + ?Sized> Reasoner for Box<R> {
    fn infer(&mut self, query: &ReasonerQuery) -> Result<ReasonerAnswer, ReasonerError> {
        (**self).infer(query)
    }
}

/// Observable content of a state, time excluded.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(String);

pub fn canonical_key(state: &EnvState) -> StateKey {
    let mut s = String::with_capacity(state.factor_states.len() + state.results_present.len() + 1);
    s.extend(state.factor_states.iter().map(|o| o.symbol()));
    s.push('|');
    s.extend(state.results_present.iter().map(|o| o.symbol()));
    StateKey(s)
}

/// Drops every hypothesis whose enabled flag disagrees with the target's
/// presence in `state`. Unobserved entries carry no evidence.
pub fn refine_hypotheses(hypotheses: &mut BTreeSet<FactorId>, state: &EnvState, target: ResultId) {
    let Some(present) = state.result(target).flag() else {
        return;
    };
    hypotheses.retain(|&f| state.factor(f).flag().map_or(true, |on| on == present));
}

pub fn consistent_factors(states: &[EnvState], target: ResultId) -> BTreeSet<FactorId> {
    let n = states.first().map_or(0, EnvState::num_factors);
    let mut h: BTreeSet<FactorId> = (0..n).map(FactorId).collect();
    for s in states {
        refine_hypotheses(&mut h, s, target);
    }
    h
}

/// Hypothesis elimination over biconditional tracking: a factor stays a
/// candidate while it is enabled exactly when the target is present.
pub fn infer_cause_oracle(query: &ReasonerQuery) -> Result<ReasonerAnswer, ReasonerError> {
    query.validate()?;
    let h = consistent_factors(&query.observed_states, query.target_result);
    let Some(&probe) = h.iter().next() else {
        return Err(ReasonerError::Inconsistent(query.target_result));
    };
    let suggested_toggle = Some((probe, query.latest().factor(probe) != Obs::On));
    let status = if h.len() == 1 { AnswerStatus::Identified(probe) } else { AnswerStatus::Undetermined(h) };
    Ok(ReasonerAnswer { status, suggested_toggle })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleReasoner;

impl Reasoner for OracleReasoner {
    fn infer(&mut self, query: &ReasonerQuery) -> Result<ReasonerAnswer, ReasonerError> {
        infer_cause_oracle(query)
    }
}

/// Counts backend invocations; used to cross-check query accounting.
#[derive(Debug, Default)]
pub struct CountingReasoner<R> {
    pub inner: R,
    pub invocations: usize,
    pub keys_seen: Vec<StateKey>,
}

impl<R> CountingReasoner<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, invocations: 0, keys_seen: Vec::new() }
    }
}

impl<R: Reasoner> Reasoner for CountingReasoner<R> {
    fn infer(&mut self, query: &ReasonerQuery) -> Result<ReasonerAnswer, ReasonerError> {
        self.invocations += 1;
        query.validate()?;
        self.keys_seen.push(canonical_key(query.latest()));
        self.inner.infer(query)
    }
}

/// Per-trial cache: a state already asked about is never resubmitted.
#[derive(Debug, Clone, Default)]
pub struct QueryCache {
    answers: HashMap<StateKey, ReasonerAnswer>,
    fresh: usize,
}

impl QueryCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of queries that reached the backend and succeeded.
    pub fn fresh_count(&self) -> usize {
        self.fresh
    }

    pub fn distinct_keys(&self) -> usize {
        self.answers.len()
    }

    /// Returns the answer and whether the backend was consulted.
    pub fn dedup_query(
        &mut self,
        reasoner: &mut dyn Reasoner,
        query: &ReasonerQuery,
    ) -> Result<(ReasonerAnswer, bool), ReasonerError> {
        query.validate()?;
        let key = canonical_key(query.latest());
        if let Some(answer) = self.answers.get(&key) {
            return Ok((answer.clone(), false));
        }
        let answer = reasoner.infer(query)?;
        self.answers.insert(key, answer.clone());
        self.fresh += 1;
        Ok((answer, true))
    }
}

#[cfg(feature = "remote")]
pub use remote::{parse_reply, PromptTemplate, RemoteConfig, RemoteReasoner};

#[cfg(feature = "remote")]
mod remote {
    use std::collections::BTreeSet;
    use std::fmt::Write as _;
    use std::sync::OnceLock;
    use std::time::Duration;

    use regex::Regex;
    use serde::{Deserialize, Serialize};

    use super::{AnswerStatus, Reasoner, ReasonerAnswer, ReasonerError, ReasonerQuery};
    use crate::env::FactorId;

    pub const ENDPOINT_VAR: &str = "AFG_LLM_ENDPOINT";
    pub const API_KEY_VAR: &str = "AFG_LLM_API_KEY";

    #[derive(Debug, Clone, PartialEq)]
    pub struct RemoteConfig {
        /// Full URL of the chat-completions endpoint.
        pub endpoint: String,
        pub api_key: Option<String>,
        pub model: String,
        pub max_retries: u32,
        pub timeout: Duration,
        pub backoff: Duration,
    }

    impl RemoteConfig {
        pub fn new(endpoint: impl Into<String>) -> Self {
            Self {
                endpoint: endpoint.into(),
                api_key: None,
                model: "deepseek-r1:70b".to_string(),
                max_retries: 3,
                timeout: Duration::from_secs(120),
                backoff: Duration::from_millis(500),
            }
        }

        /// Reads `AFG_LLM_ENDPOINT` and (optionally) `AFG_LLM_API_KEY`.
        pub fn from_env() -> Result<Self, ReasonerError> {
            let endpoint = std::env::var(ENDPOINT_VAR)
                .map_err(|_| ReasonerError::NotConfigured(format!("{ENDPOINT_VAR} is not set")))?;
            let mut cfg = Self::new(endpoint);
            cfg.api_key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty());
            Ok(cfg)
        }
    }

    /// Fixed instruction plus a rendered state table.
    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct PromptTemplate {
        pub system: String,
        pub instruction: String,
    }

    impl Default for PromptTemplate {
        fn default() -> Self {
            Self {
                system: "You analyse a simulated environment made of binary factors and binary results. \
                         Each result is produced by exactly one factor; some factors produce nothing. \
                         Reason only from the observations you are given."
                    .to_string(),
                instruction: "Which factor causes {target}? If the observations determine it, answer \
                              exactly `the cause is factor fN`. Otherwise answer `undetermined` and propose \
                              one intervention as `enable fN` or `disable fN`."
                    .to_string(),
            }
        }
    }

    impl PromptTemplate {
        pub fn render(&self, query: &ReasonerQuery) -> String {
            let mut out = String::new();
            let latest = query.latest();
            let _ = writeln!(
                out,
                "Observed states, oldest first (1 = enabled/present, 0 = disabled/absent, ? = not visible):"
            );
            for s in &query.observed_states {
                let _ = write!(out, "t={}:", s.time);
                for (i, o) in s.factor_states.iter().enumerate() {
                    let _ = write!(out, " f{}={}", i + 1, o.symbol());
                }
                let _ = write!(out, " |");
                for (k, o) in s.results_present.iter().enumerate() {
                    let _ = write!(out, " r{}={}", k + 1, o.symbol());
                }
                out.push('\n');
            }
            let _ = writeln!(
                out,
                "There are {} factors and {} results.",
                latest.num_factors(),
                latest.results_present.len()
            );
            out.push_str(&self.instruction.replace("{target}", &query.target_result.to_string()));
            out
        }
    }

    fn factor_token(n: &str, num_factors: usize) -> Option<FactorId> {
        let n: usize = n.parse().ok()?;
        (1..=num_factors).contains(&n).then(|| FactorId(n - 1))
    }

    /// Extracts the named cause and an optional suggested toggle. Anything
    /// that does not name exactly one factor is undetermined over all factors.
    pub fn parse_reply(reply: &str, num_factors: usize) -> ReasonerAnswer {
        static CAUSE: OnceLock<Regex> = OnceLock::new();
        static ANY: OnceLock<Regex> = OnceLock::new();
        static TOGGLE: OnceLock<Regex> = OnceLock::new();
        let cause = CAUSE.get_or_init(|| Regex::new(r"(?i)\bcause\b[^.\n]*?\bf(\d+)\b").unwrap());
        let any = ANY.get_or_init(|| Regex::new(r"(?i)\bf(\d+)\b").unwrap());
        let toggle = TOGGLE.get_or_init(|| Regex::new(r"(?i)\b(enable|disable)\s+(?:factor\s+)?f(\d+)\b").unwrap());

        let suggested_toggle = toggle.captures(reply).and_then(|c| {
            let f = factor_token(&c[2], num_factors)?;
            Some((f, c[1].eq_ignore_ascii_case("enable")))
        });
        let undetermined = reply.to_ascii_lowercase().contains("undetermined");
        let named = if undetermined {
            None
        } else {
            cause.captures(reply).and_then(|c| factor_token(&c[1], num_factors)).or_else(|| {
                let all: BTreeSet<FactorId> =
                    any.captures_iter(reply).filter_map(|c| factor_token(&c[1], num_factors)).collect();
                (all.len() == 1).then(|| *all.iter().next().unwrap())
            })
        };
        let status = match named {
            Some(f) => AnswerStatus::Identified(f),
            None => AnswerStatus::Undetermined((0..num_factors).map(FactorId).collect()),
        };
        ReasonerAnswer { status, suggested_toggle }
    }

    #[derive(Serialize)]
    struct ChatMessage<'a> {
        role: &'a str,
        content: &'a str,
    }

    #[derive(Serialize)]
    struct ChatRequest<'a> {
        model: &'a str,
        messages: Vec<ChatMessage<'a>>,
        temperature: f32,
    }

    #[derive(Deserialize)]
    struct ChatResponse {
        choices: Vec<Choice>,
    }

    #[derive(Deserialize)]
    struct Choice {
        message: ResponseMessage,
    }

    #[derive(Deserialize)]
    struct ResponseMessage {
        content: Option<String>,
    }

    pub struct RemoteReasoner {
        config: RemoteConfig,
        template: PromptTemplate,
        client: reqwest::blocking::Client,
    }

    impl RemoteReasoner {
        pub fn new(config: RemoteConfig, template: PromptTemplate) -> Result<Self, ReasonerError> {
            let client = reqwest::blocking::Client::builder()
                .timeout(config.timeout)
                .build()
                .map_err(|e| ReasonerError::NotConfigured(e.to_string()))?;
            Ok(Self { config, template, client })
        }

        fn send_once(&self, body: &ChatRequest<'_>) -> Result<String, (bool, String)> {
            let mut req = self.client.post(&self.config.endpoint).json(body);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            let resp = req.send().map_err(|e| (true, e.to_string()))?;
            let status = resp.status();
            if !status.is_success() {
                let retryable = status.is_server_error() || status.as_u16() == 429;
                return Err((retryable, format!("HTTP {status}")));
            }
            let parsed: ChatResponse = resp.json().map_err(|e| (false, format!("bad response body: {e}")))?;
            Ok(parsed.choices.into_iter().next().and_then(|c| c.message.content).unwrap_or_default())
        }

        /// Sends one chat completion, retrying transport errors, 429 and 5xx.
        pub fn complete(&self, user: &str) -> Result<String, ReasonerError> {
            let body = ChatRequest {
                model: &self.config.model,
                messages: vec![
                    ChatMessage { role: "system", content: &self.template.system },
                    ChatMessage { role: "user", content: user },
                ],
                temperature: 0.0,
            };
            let mut attempts = 0;
            loop {
                attempts += 1;
                match self.send_once(&body) {
                    Ok(text) => return Ok(text),
                    Err((retryable, message)) => {
                        if !retryable || attempts > self.config.max_retries {
                            return Err(ReasonerError::Remote { attempts, message });
                        }
                        std::thread::sleep(self.config.backoff * attempts);
                    }
                }
            }
        }
    }

    impl Reasoner for RemoteReasoner {
        fn infer(&mut self, query: &ReasonerQuery) -> Result<ReasonerAnswer, ReasonerError> {
            query.validate()?;
            let reply = self.complete(&self.template.render(query))?;
            Ok(parse_reply(&reply, query.num_factors()))
        }
    }
}
