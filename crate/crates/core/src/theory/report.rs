use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    IdRecovery,
    BcConfounding,
    FdComplexity,
}

impl Experiment {
    pub const ALL: [Experiment; 3] = [Experiment::IdRecovery, Experiment::BcConfounding, Experiment::FdComplexity];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::IdRecovery => "id-recovery",
            Experiment::BcConfounding => "bc-confounding",
            Experiment::FdComplexity => "fd-complexity",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == name)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown experiment {name:?}")))
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bound {
    AtMost,
    AtLeast,
}

/// `metrics[metric]` compared against `thresholds[threshold]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub metric: String,
    pub bound: Bound,
    pub threshold: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub experiment: Experiment,
    pub metrics: BTreeMap<String, f64>,
    pub thresholds: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl TheoryReport {
    pub fn new(experiment: Experiment) -> Self {
        TheoryReport {
            experiment,
            metrics: BTreeMap::new(),
            thresholds: BTreeMap::new(),
            checks: Vec::new(),
            pass: false,
        }
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn threshold(&mut self, name: impl Into<String>, value: f64) {
        self.thresholds.insert(name.into(), value);
    }

    pub fn check(&mut self, metric: impl Into<String>, bound: Bound, threshold: impl Into<String>) {
        self.checks.push(Check { metric: metric.into(), bound, threshold: threshold.into() });
    }

    /// Recomputes `pass` from metrics and thresholds.
    pub fn finish(mut self) -> Self {
        self.pass = self.evaluate();
        self
    }

    fn holds(&self, c: &Check) -> bool {
        match (self.metrics.get(&c.metric), self.thresholds.get(&c.threshold)) {
            (Some(&m), Some(&t)) if m.is_finite() && !t.is_nan() => match c.bound {
                Bound::AtMost => m <= t,
                Bound::AtLeast => m >= t,
            },
            _ => false,
        }
    }

    pub fn evaluate(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| self.holds(c))
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !self.holds(c)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "experiment: {}", self.experiment).unwrap();
        writeln!(out, "pass: {}", self.pass).unwrap();
        writeln!(out, "metrics:").unwrap();
        for (k, v) in &self.metrics {
            writeln!(out, "  {k}: {v:.6e}").unwrap();
        }
        writeln!(out, "thresholds:").unwrap();
        for (k, v) in &self.thresholds {
            writeln!(out, "  {k}: {v:.6e}").unwrap();
        }
        writeln!(out, "checks:").unwrap();
        for c in &self.checks {
            let op = match c.bound {
                Bound::AtMost => "<=",
                Bound::AtLeast => ">=",
            };
            let status = if self.holds(c) { "ok" } else { "FAIL" };
            writeln!(out, "  [{status}] {} {op} {}", c.metric, c.threshold).unwrap();
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment,kind,name,value\n");
        for (k, v) in &self.metrics {
            writeln!(out, "{},metric,{k},{v:e}", self.experiment).unwrap();
        }
        for (k, v) in &self.thresholds {
            writeln!(out, "{},threshold,{k},{v:e}", self.experiment).unwrap();
        }
        out
    }

    /// Writes `<name>.txt`, `<name>.csv` and `<name>.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let base = dir.join(self.experiment.name());
        let write = |ext: &str, body: String| {
            let p = base.with_extension(ext);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        write("txt", self.to_text())?;
        write("csv", self.to_csv())?;
        write("json", serde_json::to_string_pretty(self).expect("report serializes"))?;
        Ok(base.with_extension("json"))
    }

    /// Loads a JSON report; `pass` is recomputed rather than trusted.
    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: TheoryReport =
            serde_json::from_str(&body).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Ok(report.finish())
    }
}
