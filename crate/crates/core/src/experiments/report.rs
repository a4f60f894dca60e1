use serde::{Deserialize, Serialize};

use super::fit::RateFit;
use crate::models::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Inconclusive,
    Fail,
}

impl Verdict {
    /// Worst of a set of verdicts; an empty set passes.
    pub fn combine(items: impl IntoIterator<Item = Verdict>) -> Verdict {
        items.into_iter().max().unwrap_or(Verdict::Pass)
    }

    pub fn from_bool(ok: bool) -> Verdict {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 1,
            Verdict::Inconclusive => 2,
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Inconclusive => "INCONCLUSIVE",
            Verdict::Fail => "FAIL",
        })
    }
}

/// One named predicate that feeds the verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// Relation that must hold between `value` and `threshold`, e.g. `"<="`.
    pub relation: String,
    pub status: Verdict,
}

impl Check {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self::new(name, value, threshold, "<=", value <= threshold)
    }

    pub fn below(name: &str, value: f64, threshold: f64) -> Self {
        Self::new(name, value, threshold, "<", value < threshold)
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self::new(name, value, threshold, ">=", value >= threshold)
    }

    pub fn above(name: &str, value: f64, threshold: f64) -> Self {
        Self::new(name, value, threshold, ">", value > threshold)
    }

    fn new(name: &str, value: f64, threshold: f64, relation: &str, ok: bool) -> Self {
        Self { name: name.to_string(), value, threshold, relation: relation.to_string(), status: Verdict::from_bool(ok) }
    }

    /// Downgrades a failure to INCONCLUSIVE when the fit behind it is poor.
    pub fn gated_by_fit(mut self, fit: &RateFit) -> Self {
        if fit.r_squared < super::MIN_R_SQUARED && self.status == Verdict::Fail {
            self.status = Verdict::Inconclusive;
        }
        self
    }

    pub fn passed(&self) -> bool {
        self.status == Verdict::Pass
    }
}

/// Tabular data series; mirrored to CSV and optionally plotted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Plot the value columns on a logarithmic axis.
    pub log_y: bool,
}

impl Series {
    pub fn new(name: impl Into<String>, columns: &[&str], log_y: bool) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new(), log_y }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// Header row plus one line per row, floats with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub name: String,
    /// `"exponential"` or `"power_law"`.
    pub model: String,
    pub fit: RateFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub scenario: Scenario,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub rng_scheme: String,
    pub series: Vec<Series>,
    pub fits: Vec<FitRecord>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub verdict: Verdict,
    /// Wall-clock duration; the only field allowed to differ between reruns.
    pub runtime_s: f64,
}

impl Report {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn series_named(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    /// JSON with the timing field zeroed, for reproducibility comparisons.
    pub fn numerics_json(&self) -> String {
        let mut copy = self.clone();
        copy.runtime_s = 0.0;
        copy.to_json()
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        let failing: Vec<&str> =
            self.checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
        if failing.is_empty() {
            format!("{} on {}: {} ({} checks)", self.experiment, self.scenario.name, self.verdict, self.checks.len())
        } else {
            format!("{} on {}: {} (not passing: {})", self.experiment, self.scenario.name, self.verdict, failing.join(", "))
        }
    }
}
