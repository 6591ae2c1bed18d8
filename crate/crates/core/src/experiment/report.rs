use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{summarize, welch_from_summaries, StatsError, Summary, WelchResult};
use super::{ExperimentError, Strategy, TrialOutcome};

pub const CSV_HEADER: [&str; 6] = ["strategy", "trial", "seed", "queries", "success", "steps"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyStats {
    pub strategy: Strategy,
    pub queries: Summary,
    pub successes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    /// Ordered by strategy.
    pub per_strategy: Vec<StrategyStats>,
    /// Active against observer on query counts. `None` unless both ran, or
    /// when both samples have zero variance.
    pub welch: Option<WelchResult>,
}

impl StatReport {
    pub fn get(&self, strategy: Strategy) -> Option<&StrategyStats> {
        self.per_strategy.iter().find(|s| s.strategy == strategy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Ordered by (strategy, trial_index).
    pub outcomes: Vec<TrialOutcome>,
    pub stats: StatReport,
}

impl ExperimentReport {
    pub fn from_outcomes(outcomes: Vec<TrialOutcome>) -> Result<Self, ExperimentError> {
        let mut per_strategy = Vec::new();
        for strategy in [Strategy::Active, Strategy::Observer] {
            let rows: Vec<_> = outcomes.iter().filter(|o| o.strategy == strategy).collect();
            if rows.is_empty() {
                continue;
            }
            let samples: Vec<f64> = rows.iter().map(|o| o.queries as f64).collect();
            per_strategy.push(StrategyStats {
                strategy,
                queries: summarize(&samples)?,
                successes: rows.iter().filter(|o| o.success).count(),
            });
        }
        let find = |s| per_strategy.iter().find(|p: &&StrategyStats| p.strategy == s).map(|p| p.queries);
        let welch = match (find(Strategy::Active), find(Strategy::Observer)) {
            (Some(a), Some(b)) => match welch_from_summaries(&a, &b) {
                Ok(w) => Some(w),
                Err(StatsError::Degenerate) => None,
                Err(e) => return Err(e.into()),
            },
            _ => None,
        };
        Ok(Self { outcomes, stats: StatReport { per_strategy, welch } })
    }

    pub fn queries_for(&self, strategy: Strategy) -> Vec<f64> {
        self.outcomes.iter().filter(|o| o.strategy == strategy).map(|o| o.queries as f64).collect()
    }
}

/// Fixed-precision rendering so that reports are byte-stable.
fn num(x: f64) -> String {
    format!("{x:.6}")
}

/// Like [`num`], switching to scientific notation below 1e-4.
pub fn format_p(p: f64) -> String {
    if p != 0.0 && p < 1e-4 {
        format!("{p:.6e}")
    } else {
        num(p)
    }
}

fn summary_lines(stats: &StatReport) -> Vec<String> {
    let mut lines = Vec::new();
    for s in &stats.per_strategy {
        let q = &s.queries;
        lines.push(format!(
            "{}: n={} mean={} sd={} max={} successes={}",
            s.strategy,
            q.n,
            num(q.mean),
            num(q.sd),
            num(q.max),
            s.successes
        ));
    }
    match &stats.welch {
        Some(w) => lines.push(format!("welch: t={} df={} p={}", num(w.t), num(w.df), format_p(w.p_two_tailed))),
        None => lines.push("welch: not available".to_string()),
    }
    lines
}

/// Writes the trial rows followed by the summary block as `#` comment lines.
pub fn write_csv<W: Write>(report: &ExperimentReport, out: W) -> Result<(), ExperimentError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let csv_err = |e: csv::Error| ExperimentError::Csv(e.to_string());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for o in &report.outcomes {
        w.write_record([
            o.strategy.to_string(),
            o.trial_index.to_string(),
            o.seed.to_string(),
            o.queries.to_string(),
            o.success.to_string(),
            o.steps_taken.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let mut out = w.into_inner().map_err(|e| ExperimentError::Export(io::Error::other(e.to_string())))?;
    for line in summary_lines(&report.stats) {
        writeln!(out, "# {line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn export_csv(report: &ExperimentReport, path: &Path) -> Result<(), ExperimentError> {
    let mut buf = Vec::new();
    write_csv(report, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Reads one numeric column by header name; `#` lines are skipped.
pub fn read_csv_column(path: &Path, column: &str) -> Result<Vec<f64>, ExperimentError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ExperimentError::Csv(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(|e| ExperimentError::Csv(e.to_string()))?.clone();
    let idx = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| ExperimentError::Csv(format!("{}: no column {column:?}", path.display())))?;
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| ExperimentError::Csv(e.to_string()))?;
        let cell = rec.get(idx).unwrap_or("");
        let v: f64 = cell.parse().map_err(|_| {
            ExperimentError::Csv(format!("{}: row {}: {cell:?} is not numeric", path.display(), line + 1))
        })?;
        values.push(v);
    }
    Ok(values)
}

/// Human-readable summary: one line per strategy, then the Welch result.
pub fn render_summary(stats: &StatReport) -> String {
    let mut s = String::new();
    for line in summary_lines(stats) {
        let _ = writeln!(s, "{line}");
    }
    s
}
