use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::Regime;
use super::store::MetricsRecord;
use super::svg::{bar_chart, line_chart, objective_color, Bar, Series};
use crate::error::{Error, Result};
use crate::pretrain::Objective;
use crate::theory::{Experiment, TheoryReport};

/// Mean and standard error (sample standard deviation over `√n`). A single
/// value has standard error 0.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Averages per-environment `(mean, se)` pairs with equal weight per
/// environment present.
fn pool_environments(per_env: &[(f64, f64)]) -> (f64, f64) {
    let n = per_env.len() as f64;
    let mean = per_env.iter().map(|p| p.0).sum::<f64>() / n;
    let se = per_env.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt() / n;
    (mean, se)
}

/// Which size a sweep varies; the other is held at its default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    FinetuneSize,
    PretrainSize,
}

impl SweepAxis {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "finetune" | "finetune_size" | "finetune-size" => Ok(SweepAxis::FinetuneSize),
            "pretrain" | "pretrain_size" | "pretrain-size" => Ok(SweepAxis::PretrainSize),
            _ => Err(Error::InvalidSpec(format!("unknown sweep axis {name:?}"))),
        }
    }

    fn label(self) -> &'static str {
        match self {
            SweepAxis::FinetuneSize => "finetune_size",
            SweepAxis::PretrainSize => "pretrain_size",
        }
    }

    fn x(self, r: &MetricsRecord) -> usize {
        match self {
            SweepAxis::FinetuneSize => r.finetune_size,
            SweepAxis::PretrainSize => r.pretrain_size,
        }
    }

    fn other(self, r: &MetricsRecord) -> usize {
        match self {
            SweepAxis::FinetuneSize => r.pretrain_size,
            SweepAxis::PretrainSize => r.finetune_size,
        }
    }
}

/// Default sizes when none are given: the largest pretraining size and a
/// finetuning size of 2 (or the smallest present).
pub fn default_sizes(records: &[MetricsRecord]) -> (usize, usize) {
    let pre = records.iter().map(|r| r.pretrain_size).max().unwrap_or(0);
    let fines: BTreeSet<usize> = records.iter().map(|r| r.finetune_size).collect();
    let fine = if fines.contains(&2) { 2 } else { fines.first().copied().unwrap_or(0) };
    (pre, fine)
}

/// Objectives whose cells do not use pretraining data.
fn is_size_independent(objective: &str) -> bool {
    objective == Objective::States.tag() || objective == Objective::Scratch.tag()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub objective: String,
    /// `None` for a size-independent baseline pooled over the axis.
    pub x: Option<usize>,
    pub n: usize,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub fixed: usize,
    pub environments: Vec<String>,
    pub points: Vec<SweepPoint>,
    /// `objective@x` combinations with no successful record.
    pub missing: Vec<String>,
}

/// Mean success per objective along `axis`, the other size fixed at `fixed`
/// (defaulted from the store). Multiple environments are pooled with equal
/// weight. In a pretraining-size sweep, States and Scratch are pooled over
/// the axis and reported once.
pub fn sweep_report(records: &[MetricsRecord], axis: SweepAxis, fixed: Option<usize>) -> SweepReport {
    let (dp, df) = default_sizes(records);
    let fixed = fixed.unwrap_or(match axis {
        SweepAxis::FinetuneSize => dp,
        SweepAxis::PretrainSize => df,
    });
    let slice: Vec<&MetricsRecord> = records.iter().filter(|r| axis.other(r) == fixed).collect();
    let objectives: BTreeSet<&str> = slice.iter().map(|r| r.objective.as_str()).collect();
    let xs: BTreeSet<usize> = slice.iter().map(|r| axis.x(r)).collect();
    let envs: BTreeSet<&str> = slice.iter().filter(|r| r.succeeded()).map(|r| r.env.as_str()).collect();

    // (objective, x or None, env) -> success rates
    let mut groups: BTreeMap<(&str, Option<usize>, &str), Vec<f64>> = BTreeMap::new();
    for r in slice.iter().filter(|r| r.succeeded()) {
        let Some(s) = r.success_rate else { continue };
        let pooled = axis == SweepAxis::PretrainSize && is_size_independent(&r.objective);
        let x = if pooled { None } else { Some(axis.x(r)) };
        groups.entry((r.objective.as_str(), x, r.env.as_str())).or_default().push(s);
    }

    let mut points = Vec::new();
    let mut missing = Vec::new();
    for &obj in &objectives {
        let pooled = axis == SweepAxis::PretrainSize && is_size_independent(obj);
        let keys: Vec<Option<usize>> = if pooled { vec![None] } else { xs.iter().map(|&x| Some(x)).collect() };
        for x in keys {
            let per_env: Vec<((f64, f64), usize)> =
                envs.iter().filter_map(|&e| groups.get(&(obj, x, e)).map(|v| (mean_se(v), v.len()))).collect();
            if per_env.is_empty() {
                missing.push(match x {
                    Some(x) => format!("{obj}@{x}"),
                    None => obj.to_string(),
                });
                continue;
            }
            let stats: Vec<(f64, f64)> = per_env.iter().map(|p| p.0).collect();
            let (mean, se) = pool_environments(&stats);
            points.push(SweepPoint { objective: obj.to_string(), x, n: per_env.iter().map(|p| p.1).sum(), mean, se });
        }
    }
    for m in &missing {
        log::warn!("sweep report: no successful cells for {m}");
    }
    SweepReport { axis, fixed, environments: envs.into_iter().map(String::from).collect(), points, missing }
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("objective,{},n,mean,se,baseline\n", self.axis.label());
        for p in &self.points {
            let x = p.x.map_or("all".to_string(), |x| x.to_string());
            writeln!(out, "{},{x},{},{},{},{}", p.objective, p.n, p.mean, p.se, p.x.is_none()).unwrap();
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let mut by_obj: BTreeMap<&str, Series> = BTreeMap::new();
        for p in &self.points {
            let s = by_obj.entry(p.objective.as_str()).or_insert_with(|| Series {
                name: p.objective.clone(),
                color: objective_color(&p.objective).to_string(),
                points: Vec::new(),
                horizontal: p.x.is_none(),
            });
            s.points.push((p.x.unwrap_or(0) as f64, p.mean, p.se));
        }
        let (title, fixed) = match self.axis {
            SweepAxis::FinetuneSize => ("Success vs finetuning size", "pretrain"),
            SweepAxis::PretrainSize => ("Success vs pretraining size", "finetune"),
        };
        let series: Vec<Series> = by_obj.into_values().collect();
        line_chart(&format!("{title} ({fixed} size {})", self.fixed), self.axis.label(), "success rate", &series)
    }

    /// Writes `sweep_<axis>.csv` and `.svg` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let base = dir.join(format!("sweep_{}", self.axis.label()));
        write_pair(&base, &self.to_csv(), &self.to_svg())
    }
}

fn write_pair(base: &Path, csv: &str, svg: &str) -> Result<PathBuf> {
    if let Some(dir) = base.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let csv_path = base.with_extension("csv");
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    let svg_path = base.with_extension("svg");
    fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;
    Ok(csv_path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeRow {
    pub objective: String,
    pub regime: String,
    pub n: usize,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeReport {
    pub rows: Vec<RegimeRow>,
    pub warnings: Vec<String>,
}

/// Mean success per (objective, regime), environments pooled with equal
/// weight. Objective/regime pairs without records are omitted with a warning.
pub fn regime_report(records: &[MetricsRecord]) -> RegimeReport {
    let ok: Vec<&MetricsRecord> = records.iter().filter(|r| r.succeeded() && r.success_rate.is_some()).collect();
    let objectives: BTreeSet<&str> = records.iter().map(|r| r.objective.as_str()).collect();
    let present: BTreeSet<&str> = records.iter().map(|r| r.regime.as_str()).collect();
    let regimes: Vec<&str> = Regime::ALL.iter().map(|r| r.name()).filter(|r| present.contains(r)).collect();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &obj in &objectives {
        for &regime in &regimes {
            let mut per_env: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for r in ok.iter().filter(|r| r.objective == obj && r.regime == regime) {
                per_env.entry(r.env.as_str()).or_default().extend(r.success_rate);
            }
            if per_env.is_empty() {
                warnings.push(format!("no successful cells for {obj} in {regime}; omitted"));
                continue;
            }
            let stats: Vec<(f64, f64)> = per_env.values().map(|v| mean_se(v)).collect();
            let (mean, se) = pool_environments(&stats);
            rows.push(RegimeRow {
                objective: obj.to_string(),
                regime: regime.to_string(),
                n: per_env.values().map(Vec::len).sum(),
                mean,
                se,
            });
        }
    }
    for w in &warnings {
        log::warn!("regime report: {w}");
    }
    RegimeReport { rows, warnings }
}

fn regime_color(regime: &str) -> &'static str {
    match regime {
        "latent-held-out" => "#4c72b0",
        "latent-in-distribution" => "#55a868",
        "inferrable-held-out" => "#c44e52",
        _ => "#dd8452",
    }
}

impl RegimeReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("objective,regime,n,mean,se\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.objective, r.regime, r.n, r.mean, r.se).unwrap();
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let mut groups: Vec<(String, Vec<Bar>)> = Vec::new();
        for r in &self.rows {
            if groups.last().map(|g| g.0 != r.objective).unwrap_or(true) {
                groups.push((r.objective.clone(), Vec::new()));
            }
            let g = groups.last_mut().expect("just pushed");
            g.1.push((r.regime.clone(), regime_color(&r.regime).to_string(), r.mean, r.se));
        }
        bar_chart("Success by context regime", "success rate", &groups)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        write_pair(&dir.join("regimes"), &self.to_csv(), &self.to_svg())
    }
}

/// Collated theory reports and the process exit status: 0 when every
/// experiment is present and passes, 1 when one fails, 2 when one is missing.
#[derive(Debug, Clone, PartialEq)]
pub struct TheorySummary {
    pub reports: Vec<TheoryReport>,
    pub missing: Vec<Experiment>,
    pub text: String,
    pub exit_code: i32,
}

/// Looks for `<name>.json` in `dir/theory` (if present) or `dir`.
pub fn theory_report(dir: &Path) -> Result<TheorySummary> {
    let sub = dir.join("theory");
    let dir = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let mut reports = Vec::new();
    let mut missing = Vec::new();
    for e in Experiment::ALL {
        let p = dir.join(format!("{}.json", e.name()));
        if p.exists() {
            reports.push(TheoryReport::load(&p)?);
        } else {
            missing.push(e);
        }
    }
    let mut text = String::new();
    for r in &reports {
        let status = if r.pass { "PASS" } else { "FAIL" };
        writeln!(text, "{status} {}", r.experiment).unwrap();
        for c in r.failures() {
            let value = r.metrics.get(&c.metric).copied().unwrap_or(f64::NAN);
            let bound = r.thresholds.get(&c.threshold).copied().unwrap_or(f64::NAN);
            writeln!(text, "  {} = {value:.4e} violates {:?} {} = {bound:.4e}", c.metric, c.bound, c.threshold)
                .unwrap();
        }
    }
    for e in &missing {
        writeln!(text, "MISSING {e}").unwrap();
    }
    let exit_code = if !missing.is_empty() {
        2
    } else if reports.iter().any(|r| !r.pass) {
        1
    } else {
        0
    };
    Ok(TheorySummary { reports, missing, text, exit_code })
}
