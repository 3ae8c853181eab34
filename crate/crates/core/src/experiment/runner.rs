use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{canonical_hash, Budget, EnvironmentConfig, ExperimentConfig, Regime};
use super::store::{read_records, store_path, MetricsRecord, StoreWriter};
use crate::data::{self, generate_finetuning, generate_pretraining, DatasetHandle, Provenance};
use crate::env::{make_mdp, Context, ContextSpec, EvaluationSpec, LatentMdp};
use crate::error::{Error, Result};
use crate::finetune::{action_losses, evaluate, finetune, FinetuneConfig};
use crate::nn::save_checkpoint;
use crate::pretrain::{pretrain, scratch_encoder, states_oracle, ArchSpec, Encoder, Objective, PretrainConfig};
use crate::probes::{probe_state, subspace_alignment, ProbeConfig};
use crate::rng;

/// One point of the grid. Its canonical hash keys the store and the
/// training RNG.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub env: EnvironmentConfig,
    pub objective: Objective,
    pub regime: Regime,
    pub pretrain_size: usize,
    pub finetune_size: usize,
    pub step_gap: usize,
    pub seed: u64,
    pub budget: Budget,
    pub arch: ArchSpec,
}

impl Cell {
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.budget.save_artifacts = false;
        canonical_hash(&c)
    }

    /// Data, finetuning context and evaluation streams do not depend on the
    /// objective, so objectives are compared on identical data.
    fn data_seed(&self, label: &str) -> u64 {
        let env = canonical_hash(&self.env);
        rng::derive_seed(self.seed, &[label, &env, self.regime.name()])
    }
}

/// The grid in a fixed order: environment, objective, pretrain size,
/// finetune size, regime, step gap, seed.
pub fn cells(cfg: &ExperimentConfig, seed_offset: u64) -> Vec<Cell> {
    let mut out = Vec::with_capacity(cfg.cell_count());
    for env in &cfg.environments {
        for &objective in &cfg.objectives {
            for &pretrain_size in &cfg.pretrain_sizes {
                for &finetune_size in &cfg.finetune_sizes {
                    for &regime in &cfg.regimes {
                        for &step_gap in &cfg.step_gaps {
                            for &seed in &cfg.seeds {
                                out.push(Cell {
                                    env: env.clone(),
                                    objective,
                                    regime,
                                    pretrain_size,
                                    finetune_size,
                                    step_gap,
                                    seed: seed.wrapping_add(seed_offset),
                                    budget: cfg.budget.clone(),
                                    arch: cfg.arch.clone(),
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn with_inferrable(spec: &ContextSpec, inferrable: bool) -> Result<ContextSpec> {
    Ok(match spec {
        ContextSpec::Goal { radius, .. } => ContextSpec::Goal { radius: *radius, inferrable },
        ContextSpec::Discrete { goals, allowed, .. } => {
            ContextSpec::Discrete { goals: goals.clone(), allowed: allowed.clone(), inferrable }
        }
        ContextSpec::Rotation if inferrable => {
            return Err(Error::InvalidSpec("rotation contexts cannot be inferrable".into()))
        }
        ContextSpec::Rotation => ContextSpec::Rotation,
    })
}

/// The finetuning context and the pretraining context spec for a regime.
/// Discrete families hold the finetuning id out of (or keep it in) the
/// allowed set; continuous families draw a fresh context.
pub(crate) fn contexts(cell: &Cell, mdp: &LatentMdp) -> Result<(Context, ContextSpec)> {
    let spec = with_inferrable(&cell.env.contexts, cell.regime.inferrable())?;
    let (l, k) = (mdp.latent_dim(), mdp.action_dim());
    let mut r = rng::stream(cell.data_seed("finetune-context"), &[]);
    match &spec {
        ContextSpec::Discrete { allowed, .. } => {
            let fine = allowed[(cell.seed as usize) % allowed.len()];
            let c_fine = spec.with_allowed(vec![fine])?.sample(0, l, k, &mut r)?;
            let pre = if cell.regime.in_distribution() {
                spec.clone()
            } else {
                spec.with_allowed(allowed.iter().copied().filter(|&i| i != fine).collect())?
            };
            Ok((c_fine, pre))
        }
        _ => Ok((spec.sample(0, l, k, &mut r)?, spec)),
    }
}

/// Pretraining data. For continuous families the in-distribution regime
/// replaces a tenth of the trajectories (at least one) with demonstrations
/// in the finetuning context; evaluation episodes are never included.
pub(crate) fn pretraining_data(
    cell: &Cell,
    mdp: &LatentMdp,
    c_fine: &Context,
    spec: &ContextSpec,
) -> Result<DatasetHandle> {
    let n = cell.pretrain_size;
    let seed = cell.data_seed("pretrain-data");
    let continuous = !matches!(spec, ContextSpec::Discrete { .. });
    if !(cell.regime.in_distribution() && continuous) {
        return generate_pretraining(mdp, &cell.env.policy, spec, n, seed);
    }
    let extra = (n / 10).max(1);
    let mut trajectories = Vec::with_capacity(n);
    if n > extra {
        trajectories
            .extend_from_slice(generate_pretraining(mdp, &cell.env.policy, spec, n - extra, seed)?.trajectories());
    }
    let own = generate_finetuning(mdp, &cell.env.policy, c_fine, extra, rng::derive_seed(seed, &["in-distribution"]))?;
    trajectories.extend_from_slice(own.trajectories());
    let provenance = Provenance {
        mdp_fingerprint: mdp.fingerprint(),
        policy: format!("{:?}", cell.env.policy.family),
        context: format!("{}+finetune-context", spec.kind_name()),
        seed,
    };
    DatasetHandle::new(trajectories, provenance)
}

/// Measurements of one cell, before bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct CellMetrics {
    pub success_rate: f64,
    pub std_error: f64,
    pub episodes: usize,
    pub pretrain_loss: Option<f64>,
    pub finetune_val_loss: Option<f64>,
    pub probe_state_mse: Option<f64>,
    pub probe_state_normalized: Option<f64>,
    pub alignment: Option<f64>,
}

fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::EmptyDataset(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs one cell end to end. `artifacts` receives the encoder checkpoint and
/// the pretraining dataset when set.
pub fn run_cell(cell: &Cell, artifacts: Option<&Path>) -> Result<CellMetrics> {
    let mdp = make_mdp(&cell.env.mdp, cell.env.mdp_seed)?;
    let (c_fine, spec) = contexts(cell, &mdp)?;
    let train_seed = rng::derive_seed(cell.seed, &["train", &cell.hash()]);
    let b = &cell.budget;

    let needs_data = !matches!(cell.objective, Objective::Scratch | Objective::States) || b.probe_steps > 0;
    let pre = if needs_data { Some(pretraining_data(cell, &mdp, &c_fine, &spec)?) } else { None };
    let mut pc = PretrainConfig::new(cell.objective, b.pretrain_steps, train_seed);
    pc.arch = cell.arch.clone();
    pc.batch_size = b.batch_size;
    pc.fd_explicit_batch_size = b.fd_explicit_batch_size;
    pc.step_gap = cell.step_gap;
    let encoder: Encoder = match (cell.objective, &pre) {
        (Objective::States, _) => states_oracle(&mdp),
        (Objective::Scratch, _) => scratch_encoder(mdp.obs_dim(), &pc)?,
        (_, Some(ds)) => pretrain(ds, &pc)?,
        (_, None) => unreachable!("pretraining data is generated for learned objectives"),
    };

    let fine =
        generate_finetuning(&mdp, &cell.env.policy, &c_fine, cell.finetune_size, cell.data_seed("finetune-data"))?;
    let mut fc = FinetuneConfig::for_objective(cell.objective, b.finetune_steps, train_seed);
    fc.arch = cell.arch.clone();
    fc.batch_size = b.batch_size;
    let head = finetune(&encoder, &fine, &fc)?;
    let eval = EvaluationSpec { episodes: b.eval_episodes, ..EvaluationSpec::default_for(&mdp) };
    let ev = evaluate(&mdp, &c_fine, &head, &eval, cell.data_seed("eval"), cell.env.policy.action_clip)?;

    let mut m = CellMetrics {
        success_rate: ev.success_rate,
        std_error: ev.std_error,
        episodes: ev.outcomes.len(),
        pretrain_loss: encoder.plateau((b.pretrain_steps / 10).max(1)),
        finetune_val_loss: (b.finetune_steps > 0).then(|| action_losses(&head).1),
        ..CellMetrics::default()
    };
    let n_align = 20 * mdp.latent_dim().max(10);
    m.alignment = Some(subspace_alignment(head.encoder(), &mdp, n_align, cell.data_seed("alignment"))?.score);
    if let (Some(ds), true) = (&pre, b.probe_steps > 0) {
        if let Some(p) = optional(probe_state(head.encoder(), ds, &ProbeConfig::new(b.probe_steps, train_seed)))? {
            m.probe_state_mse = Some(p.val_loss);
            m.probe_state_normalized = Some(p.normalized());
        }
    }
    if let Some(dir) = artifacts {
        let hash = cell.hash();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Ok(ck) = head.encoder().to_checkpoint() {
            save_checkpoint(&ck, &dir.join(format!("{hash}.enc")))?;
        }
        if let Some(ds) = &pre {
            data::save(ds, &dir.join(format!("{hash}.ds")))?;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub workers: usize,
    pub seed_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub store: PathBuf,
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
}

fn record(cell: &Cell, config_hash: &str, threads: usize, result: Result<CellMetrics>, wall: f64) -> MetricsRecord {
    let (m, error) = match result {
        Ok(m) => (Some(m), String::new()),
        Err(e) => (None, format!("E{}: {e}", e.code())),
    };
    MetricsRecord {
        cell_hash: cell.hash(),
        config_hash: config_hash.to_string(),
        env: cell.env.name.clone(),
        objective: cell.objective.tag().to_string(),
        regime: cell.regime.name().to_string(),
        pretrain_size: cell.pretrain_size,
        finetune_size: cell.finetune_size,
        step_gap: cell.step_gap,
        seed: cell.seed,
        success_rate: m.as_ref().map(|m| m.success_rate),
        std_error: m.as_ref().map(|m| m.std_error),
        episodes: m.as_ref().map_or(0, |m| m.episodes),
        pretrain_loss: m.as_ref().and_then(|m| m.pretrain_loss),
        finetune_val_loss: m.as_ref().and_then(|m| m.finetune_val_loss),
        probe_state_mse: m.as_ref().and_then(|m| m.probe_state_mse),
        probe_state_normalized: m.as_ref().and_then(|m| m.probe_state_normalized),
        alignment: m.as_ref().and_then(|m| m.alignment),
        wall_seconds: wall,
        threads,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        error,
    }
}

/// Executes every cell not already recorded as successful in the store.
/// Failed cells are recorded with an error tag and retried on the next run.
/// Records reach the store in grid order whatever the worker count.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(&opts.out).map_err(|e| Error::io(&opts.out, e))?;
    let resolved = opts.out.join("config.json");
    fs::write(&resolved, serde_json::to_string_pretty(cfg).expect("config serializes"))
        .map_err(|e| Error::io(&resolved, e))?;

    let path = store_path(&opts.out);
    let done: HashSet<String> =
        read_records(&path)?.into_iter().filter(|r| r.succeeded()).map(|r| r.cell_hash).collect();
    let all = cells(cfg, opts.seed_offset);
    let todo: Vec<&Cell> = all.iter().filter(|c| !done.contains(&c.hash())).collect();
    let skipped = all.len() - todo.len();
    log::info!("{} cells, {} already done, {} to run", all.len(), skipped, todo.len());

    let workers = opts.workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidSpec(format!("worker pool: {e}")))?;
    let config_hash = cfg.hash();
    let artifacts = cfg.budget.save_artifacts.then(|| opts.out.join("artifacts"));
    let mut writer = StoreWriter::open(&path)?;
    let (tx, rx) = mpsc::channel::<(usize, MetricsRecord)>();

    let failed = std::thread::scope(|scope| -> Result<usize> {
        let todo = &todo;
        let config_hash = &config_hash;
        let artifacts = artifacts.as_deref();
        scope.spawn(move || {
            pool.install(|| {
                todo.par_iter().enumerate().for_each_with(tx, |tx, (i, cell)| {
                    let t = Instant::now();
                    let result = run_cell(cell, artifacts);
                    if let Err(e) = &result {
                        log::warn!("cell {} failed: {e}", cell.hash());
                    }
                    let rec = record(cell, config_hash, workers, result, t.elapsed().as_secs_f64());
                    // the receiver only disappears if the writer failed
                    let _ = tx.send((i, rec));
                });
            })
        });
        // single writer; out-of-order completions wait in `pending`
        let mut pending = std::collections::BTreeMap::new();
        let mut next = 0;
        let mut failed = 0;
        for (i, rec) in rx {
            pending.insert(i, rec);
            while let Some(rec) = pending.remove(&next) {
                failed += usize::from(!rec.succeeded());
                writer.append(&rec)?;
                log::info!("[{}/{}] {} {} seed {}", next + 1, todo.len(), rec.env, rec.objective, rec.seed);
                next += 1;
            }
        }
        Ok(failed)
    })?;
    Ok(RunSummary { store: path, executed: todo.len(), skipped, failed })
}

pub fn run_config_file(config: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let cfg = super::config::load_config(config)?;
    run(&cfg, opts)
}
