use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{ContextSpec, ExpertPolicy, MdpSpec};
use crate::error::{Error, Result};
use crate::pretrain::{ArchSpec, Objective};

/// Whether the context is visible in the first observation, and whether the
/// finetuning context also appears in pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    LatentHeldOut,
    LatentInDistribution,
    InferrableHeldOut,
    InferrableInDistribution,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::LatentHeldOut,
        Regime::LatentInDistribution,
        Regime::InferrableHeldOut,
        Regime::InferrableInDistribution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::LatentHeldOut => "latent-held-out",
            Regime::LatentInDistribution => "latent-in-distribution",
            Regime::InferrableHeldOut => "inferrable-held-out",
            Regime::InferrableInDistribution => "inferrable-in-distribution",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == name)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown regime {name:?}")))
    }

    pub fn inferrable(self) -> bool {
        matches!(self, Regime::InferrableHeldOut | Regime::InferrableInDistribution)
    }

    pub fn in_distribution(self) -> bool {
        matches!(self, Regime::LatentInDistribution | Regime::InferrableInDistribution)
    }
}

fn default_policy() -> ExpertPolicy {
    ExpertPolicy::pd_to_goal()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub name: String,
    pub mdp: MdpSpec,
    #[serde(default)]
    pub mdp_seed: u64,
    pub contexts: ContextSpec,
    #[serde(default = "default_policy")]
    pub policy: ExpertPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    pub batch_size: usize,
    pub fd_explicit_batch_size: usize,
    pub eval_episodes: usize,
    /// State-probe steps; 0 skips probing.
    pub probe_steps: usize,
    /// Write each cell's encoder checkpoint and pretraining dataset.
    pub save_artifacts: bool,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            pretrain_steps: 20_000,
            finetune_steps: 2000,
            batch_size: 256,
            fd_explicit_batch_size: 128,
            eval_episodes: 100,
            probe_steps: 0,
            save_artifacts: false,
        }
    }
}

fn default_step_gaps() -> Vec<usize> {
    vec![1]
}

fn default_regimes() -> Vec<Regime> {
    vec![Regime::LatentHeldOut]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Output directory; `--out` and the environment override win.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub environments: Vec<EnvironmentConfig>,
    pub objectives: Vec<Objective>,
    pub pretrain_sizes: Vec<usize>,
    pub finetune_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_step_gaps")]
    pub step_gaps: Vec<usize>,
    #[serde(default = "default_regimes")]
    pub regimes: Vec<Regime>,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub arch: ArchSpec,
}

/// SHA-256 of the canonical (sorted-key, compact) JSON form, truncated to 64
/// bits and rendered as hex.
pub fn canonical_hash<T: Serialize>(value: &T) -> String {
    // serde_json::Value keeps object keys sorted, which makes the text canonical
    let v = serde_json::to_value(value).expect("value serializes");
    let digest = Sha256::digest(v.to_string().as_bytes());
    format!("{:016x}", u64::from_be_bytes(digest[..8].try_into().expect("32-byte digest")))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let nonempty = [
            ("environments", self.environments.is_empty()),
            ("objectives", self.objectives.is_empty()),
            ("pretrain_sizes", self.pretrain_sizes.is_empty()),
            ("finetune_sizes", self.finetune_sizes.is_empty()),
            ("seeds", self.seeds.is_empty()),
            ("step_gaps", self.step_gaps.is_empty()),
            ("regimes", self.regimes.is_empty()),
        ];
        if let Some((field, _)) = nonempty.iter().find(|(_, empty)| *empty) {
            return Err(Error::config(*field, "list must be non-empty"));
        }
        for (field, values) in [
            ("pretrain_sizes", &self.pretrain_sizes),
            ("finetune_sizes", &self.finetune_sizes),
            ("step_gaps", &self.step_gaps),
        ] {
            if let Some(i) = values.iter().position(|&v| v == 0) {
                return Err(Error::config(format!("{field}[{i}]"), "must be at least 1"));
            }
        }
        let mut names = BTreeSet::new();
        for (i, env) in self.environments.iter().enumerate() {
            if !names.insert(env.name.as_str()) {
                return Err(Error::config(format!("environments[{i}].name"), format!("duplicate name {:?}", env.name)));
            }
            env.mdp.validate().map_err(|e| Error::config(format!("environments[{i}].mdp"), e.to_string()))?;
            env.contexts.validate().map_err(|e| Error::config(format!("environments[{i}].contexts"), e.to_string()))?;
            if matches!(env.contexts, ContextSpec::Discrete { ref allowed, .. } if allowed.len() < 2)
                && self.regimes.iter().any(|r| !r.in_distribution())
            {
                return Err(Error::config(
                    format!("environments[{i}].contexts"),
                    "held-out regimes need at least two allowed discrete goals",
                ));
            }
        }
        let b = &self.budget;
        for (field, v) in [
            ("budget.pretrain_steps", b.pretrain_steps),
            ("budget.batch_size", b.batch_size),
            ("budget.fd_explicit_batch_size", b.fd_explicit_batch_size),
            ("budget.eval_episodes", b.eval_episodes),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        Ok(())
    }

    /// Identifies the whole grid; the output directory is not part of it.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        canonical_hash(&c)
    }

    pub fn cell_count(&self) -> usize {
        self.environments.len()
            * self.objectives.len()
            * self.pretrain_sizes.len()
            * self.finetune_sizes.len()
            * self.regimes.len()
            * self.step_gaps.len()
            * self.seeds.len()
    }
}

/// Overlays `top` on `base`: tables merge key by key, everything else is
/// replaced.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn load_table(path: &Path, stack: &mut Vec<PathBuf>) -> Result<toml::Table> {
    let canonical = path.canonicalize().map_err(|e| Error::io(path, e))?;
    if stack.contains(&canonical) {
        return Err(Error::config(path.display().to_string(), "include cycle"));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(toml::Value::String(s)) => vec![s],
        Some(toml::Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(s),
                _ => Err(Error::config(format!("{}: include", path.display()), "entries must be strings")),
            })
            .collect::<Result<_>>()?,
        Some(_) => return Err(Error::config(format!("{}: include", path.display()), "must be a string or array")),
    };
    stack.push(canonical);
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut merged = toml::Table::new();
    for inc in includes {
        merge(&mut merged, load_table(&dir.join(inc), stack)?);
    }
    stack.pop();
    merge(&mut merged, table);
    Ok(merged)
}

/// Parses a TOML config. Top-level `include = [...]` pulls in other files
/// (relative to this one) underneath the current file's keys.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let table = load_table(path, &mut Vec::new())?;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let field = e.path().to_string();
        Error::config(format!("{}: {field}", path.display()), e.into_inner().to_string())
    })?;
    cfg.validate().map_err(|e| match e {
        Error::Config { location, message } => Error::config(format!("{}: {location}", path.display()), message),
        other => other,
    })?;
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::config("<string>", e.to_string()))?;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(table))
        .map_err(|e| Error::config(e.path().to_string(), e.into_inner().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
