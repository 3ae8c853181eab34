//! The rotation construction: each context rotates the unit-normalized state,
//! so over Haar-distributed contexts the action is uniform on the sphere
//! whatever the observation, and the Bayes-optimal BC predictor is constant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::median;
use super::report::{Bound, Experiment, TheoryReport};
use crate::data::{generate_finetuning, generate_grouped};
use crate::env::{
    expert_action, make_mdp, ContextSpec, DynamicsKind, EvaluationSpec, ExpertPolicy, LatentMdp, LiftSpec, MdpSpec,
    RandomActor,
};
use crate::error::Result;
use crate::finetune::{evaluate, finetune, FinetuneConfig};
use crate::linalg::Vector;
use crate::pretrain::{pretrain, ArchSpec, Objective, PretrainConfig};
use crate::probes::subspace_alignment;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcConfoundingConfig {
    /// `k = ℓ`.
    pub action_dim: usize,
    pub obs_dim: usize,
    pub horizon: usize,
    pub n_contexts: usize,
    /// One-step samples drawn per pretraining context.
    pub per_context: usize,
    pub pretrain_steps: usize,
    pub batch_size: usize,
    pub finetune_steps: usize,
    pub finetune_trajectories: usize,
    pub eval_episodes: usize,
    pub arch: ArchSpec,
    pub seeds: Vec<u64>,
    pub mean_norm_scale: f64,
    pub bc_plateau_fraction: f64,
    pub id_plateau_fraction: f64,
    pub min_gap: f64,
    pub random_band: f64,
}

impl Default for BcConfoundingConfig {
    fn default() -> Self {
        BcConfoundingConfig {
            action_dim: 2,
            obs_dim: 16,
            horizon: 10,
            n_contexts: 500,
            per_context: 8,
            pretrain_steps: 1000,
            batch_size: 256,
            finetune_steps: 500,
            finetune_trajectories: 10,
            eval_episodes: 100,
            arch: ArchSpec::default(),
            seeds: (0..5).collect(),
            mean_norm_scale: 3.0,
            bc_plateau_fraction: 0.9,
            id_plateau_fraction: 0.1,
            min_gap: 0.4,
            random_band: 0.1,
        }
    }
}

impl BcConfoundingConfig {
    pub fn mdp_spec(&self) -> MdpSpec {
        let k = self.action_dim;
        MdpSpec {
            horizon: self.horizon,
            dynamics: DynamicsKind::ActionIsState,
            ..MdpSpec::new(k, self.obs_dim, k, LiftSpec::LinearOrthonormal)
        }
    }
}

/// Norm of the mean expert action at `s = e₁` over the first `n_contexts`
/// pretraining contexts of `seed`.
pub fn conditional_action_mean(mdp: &LatentMdp, n_contexts: usize, seed: u64) -> Result<f64> {
    let k = mdp.action_dim();
    let mut s = Vector::zeros(k);
    s[0] = 1.0;
    let policy = ExpertPolicy::rotation_linear();
    let mut mean = Vector::zeros(k);
    for c in 0..n_contexts {
        let mut r = rng::stream(seed, &["context", &c.to_string()]);
        let ctx = ContextSpec::Rotation.sample(c, k, k, &mut r)?;
        mean += expert_action(&policy, mdp, &ctx, &s)?;
    }
    Ok((mean / n_contexts as f64).norm())
}

struct SeedOutcome {
    action_sq_norm: f64,
    bc_plateau: f64,
    id_plateau: f64,
    bc_success: f64,
    id_success: f64,
    random_success: f64,
    bc_alignment: f64,
    id_alignment: f64,
}

fn run_seed(cfg: &BcConfoundingConfig, mdp: &LatentMdp, seed: u64) -> Result<SeedOutcome> {
    let k = cfg.action_dim;
    let policy = ExpertPolicy::rotation_linear();
    let ds = generate_grouped(mdp, &policy, &ContextSpec::Rotation, cfg.n_contexts, cfg.per_context, 1, seed)?;
    let actions = ds.learner().transitions(1, crate::data::Split::All)?.a;
    let action_sq_norm = actions.norm_squared() / actions.nrows() as f64;

    let window = (cfg.pretrain_steps / 10).max(1);
    let encoder = |objective| {
        let mut pc = PretrainConfig::new(objective, cfg.pretrain_steps, seed);
        pc.arch = cfg.arch.clone();
        pc.batch_size = cfg.batch_size;
        pretrain(&ds, &pc)
    };
    let bc = encoder(Objective::BehaviorCloning)?;
    let id = encoder(Objective::InverseDynamics)?;
    // mean over coordinates times k gives the squared-norm error E‖a − â‖²
    let bc_plateau = bc.plateau(window).unwrap_or(f64::NAN) * k as f64;
    let id_plateau = id.plateau(window).unwrap_or(f64::NAN) * k as f64;
    // how much latent state each frozen encoder still carries
    let n_align = 100 * k;
    let bc_alignment = subspace_alignment(&bc, mdp, n_align, seed)?.score;
    let id_alignment = subspace_alignment(&id, mdp, n_align, seed)?.score;

    let mut r = rng::stream(seed, &["held-out"]);
    let c_fine = ContextSpec::Rotation.sample(cfg.n_contexts, k, k, &mut r)?;
    let fine =
        generate_finetuning(mdp, &policy, &c_fine, cfg.finetune_trajectories, rng::derive_seed(seed, &["fine"]))?;
    let eval = EvaluationSpec { episodes: cfg.eval_episodes, ..EvaluationSpec::default_for(mdp) };
    let eval_seed = rng::derive_seed(seed, &["eval"]);
    let success = |enc| -> Result<f64> {
        let mut fc = FinetuneConfig::new(cfg.finetune_steps, seed);
        fc.arch = cfg.arch.clone();
        fc.batch_size = cfg.batch_size;
        let head = finetune(enc, &fine, &fc)?;
        Ok(evaluate(mdp, &c_fine, &head, &eval, eval_seed, policy.action_clip)?.success_rate)
    };
    let bc_success = success(&bc)?;
    let id_success = success(&id)?;
    let random = RandomActor { action_dim: k, action_clip: policy.action_clip };
    let random_success = evaluate(mdp, &c_fine, &random, &eval, eval_seed, policy.action_clip)?.success_rate;
    Ok(SeedOutcome {
        action_sq_norm,
        bc_plateau,
        id_plateau,
        bc_success,
        id_success,
        random_success,
        bc_alignment,
        id_alignment,
    })
}

pub fn verify_bc_confounding(cfg: &BcConfoundingConfig) -> Result<TheoryReport> {
    let mdp = make_mdp(&cfg.mdp_spec(), 0)?;
    let first = cfg.seeds.first().copied().unwrap_or(0);
    let mean_norm = conditional_action_mean(&mdp, cfg.n_contexts, first)?;
    let outcomes: Vec<SeedOutcome> = cfg.seeds.par_iter().map(|&s| run_seed(cfg, &mdp, s)).collect::<Result<_>>()?;

    let mut rep = TheoryReport::new(Experiment::BcConfounding);
    rep.metric("action_mean_norm", mean_norm);
    rep.threshold("action_mean_bound", cfg.mean_norm_scale / (cfg.n_contexts as f64).sqrt());
    rep.check("action_mean_norm", Bound::AtMost, "action_mean_bound");

    let col = |f: fn(&SeedOutcome) -> f64| outcomes.iter().map(f).collect::<Vec<_>>();
    let sq = median(&col(|o| o.action_sq_norm));
    rep.metric("action_sq_norm", sq);
    rep.metric("bc_plateau", median(&col(|o| o.bc_plateau)));
    rep.metric("id_plateau", median(&col(|o| o.id_plateau)));
    rep.metric("bc_alignment", median(&col(|o| o.bc_alignment)));
    rep.metric("id_alignment", median(&col(|o| o.id_alignment)));
    rep.threshold("bc_plateau_min", cfg.bc_plateau_fraction * sq);
    rep.threshold("id_plateau_max", cfg.id_plateau_fraction * sq);
    rep.check("bc_plateau", Bound::AtLeast, "bc_plateau_min");
    rep.check("id_plateau", Bound::AtMost, "id_plateau_max");

    for (o, s) in outcomes.iter().zip(&cfg.seeds) {
        rep.metric(format!("seed{s}_bc_success"), o.bc_success);
        rep.metric(format!("seed{s}_id_success"), o.id_success);
        rep.metric(format!("seed{s}_random_success"), o.random_success);
    }
    let gap = median(&col(|o| o.id_success - o.bc_success));
    let bc = median(&col(|o| o.bc_success));
    let random = median(&col(|o| o.random_success));
    rep.metric("median_success_gap", gap);
    rep.metric("median_bc_success", bc);
    rep.metric("median_id_success", median(&col(|o| o.id_success)));
    rep.metric("median_random_success", random);
    rep.metric("bc_random_distance", (bc - random).abs());
    rep.threshold("min_success_gap", cfg.min_gap);
    rep.threshold("random_band", cfg.random_band);
    rep.check("median_success_gap", Bound::AtLeast, "min_success_gap");
    rep.check("bc_random_distance", Bound::AtMost, "random_band");
    Ok(rep.finish())
}
