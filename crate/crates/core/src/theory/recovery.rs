//! Closed-form inverse dynamics on a linear lift: `a = B⁺Qᵀo' − B⁺AQᵀo`.

use serde::{Deserialize, Serialize};

use super::report::{Bound, Experiment, TheoryReport};
use crate::data::{ContextTag, DatasetHandle, Provenance, Split, Trajectory};
use crate::env::{make_mdp, LatentMdp, LiftSpec, MdpSpec};
use crate::error::{Error, Result};
use crate::linalg::{condition_number, hcat, normal_equations, Mat, Vector};
use crate::nn::mse_loss;
use crate::pretrain::{pretrain, ArchSpec, Objective, PretrainConfig};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdRecoveryConfig {
    pub mdp: MdpSpec,
    pub mdp_seed: u64,
    pub n_samples: usize,
    /// Latent states are drawn from a ball of this radius and actions from
    /// the box `[−action_scale, action_scale]^k`; both small enough that the
    /// arena projection never fires.
    pub state_radius: f64,
    pub action_scale: f64,
    /// Sample sizes for the convergence-rate check (empty to skip).
    pub rate_sizes: Vec<usize>,
    pub rate_replicates: usize,
    /// Gradient steps for the linear-network comparison (0 to skip).
    pub gradient_steps: usize,
    pub gradient_lr: f64,
    pub seed: u64,
    pub max_rel_error: f64,
    pub min_alignment: f64,
    pub rate_band: (f64, f64),
    pub max_gradient_gap: f64,
}

impl IdRecoveryConfig {
    pub fn noiseless(latent_dim: usize, obs_dim: usize, action_dim: usize) -> Self {
        IdRecoveryConfig {
            mdp: MdpSpec::new(latent_dim, obs_dim, action_dim, LiftSpec::LinearOrthonormal),
            mdp_seed: 0,
            n_samples: 10 * latent_dim * obs_dim,
            state_radius: 0.4,
            action_scale: 0.2,
            rate_sizes: Vec::new(),
            rate_replicates: 32,
            gradient_steps: 0,
            gradient_lr: 1e-2,
            seed: 0,
            max_rel_error: 1e-8,
            min_alignment: 1.0 - 1e-8,
            rate_band: (0.4, 0.6),
            max_gradient_gap: 1e-4,
        }
    }

    /// Process noise `σ` with the rate check over `{1e3, 4e3, 1.6e4}`.
    /// `σ` must stay well below the action spread, or the errors-in-variables
    /// bias of least squares swamps the `1/√n` term.
    pub fn noisy(latent_dim: usize, obs_dim: usize, action_dim: usize, sigma: f64) -> Self {
        let mut c = IdRecoveryConfig::noiseless(latent_dim, obs_dim, action_dim);
        c.mdp.noise_std = sigma;
        c.rate_sizes = vec![1000, 4000, 16000];
        c.max_rel_error = 1e-2;
        c.min_alignment = 1.0 - 1e-6;
        c
    }
}

/// `n` one-step transitions with random latents and random actions, stored as
/// two-frame trajectories. Also returns how many successors hit the arena
/// boundary.
pub fn excitation_dataset(
    mdp: &LatentMdp,
    n: usize,
    state_radius: f64,
    action_scale: f64,
    seed: u64,
) -> Result<(DatasetHandle, usize)> {
    let (l, k) = (mdp.latent_dim(), mdp.action_dim());
    let mut projected = 0;
    let mut trajectories = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng::stream(seed, &["excite", &i.to_string()]);
        let s = Vector::from_vec(rng::ball(&mut r, l, state_radius));
        let a = Vector::from_fn(k, |_, _| rng::uniform(&mut r, -action_scale, action_scale));
        let (s_next, o_next) = mdp.step(&s, &a, &mut r)?;
        if s_next.norm() >= mdp.arena_radius * (1.0 - 1e-12) {
            projected += 1;
        }
        let observations = Mat::from_rows(&[mdp.lift.decode(&s).transpose(), o_next.transpose()]);
        let latents = Mat::from_rows(&[s.transpose(), s_next.transpose()]);
        trajectories.push(Trajectory {
            observations,
            actions: Mat::from_row_slice(1, k, a.as_slice()),
            latents,
            context_tag: ContextTag(0),
        });
    }
    let provenance =
        Provenance { mdp_fingerprint: mdp.fingerprint(), policy: "random".into(), context: "none".into(), seed };
    Ok((DatasetHandle::new(trajectories, provenance)?, projected))
}

/// Least-squares `a ≈ W₁o + W₂o'`, with `W₁, W₂` stored `k × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdSolution {
    pub w1: Mat,
    pub w2: Mat,
    /// Rank of the design `[O | O']`.
    pub rank: usize,
    /// Orthonormal basis (`2d × rank`) of the design's row space.
    pub row_space: Mat,
}

impl IdSolution {
    pub fn predict(&self, o: &Mat, o_next: &Mat) -> Mat {
        o * self.w1.transpose() + o_next * self.w2.transpose()
    }
}

/// Observations on a linear lift span only the excited subspace of `ℝ^{2d}`,
/// so the full normal equations are singular. They are solved in the design's
/// row space instead, which gives the minimum-norm solution.
pub fn solve_id_closed_form(o: &Mat, o_next: &Mat, a: &Mat) -> Result<IdSolution> {
    let d = o.ncols();
    let x = hcat(o, o_next);
    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested v");
    let smax = svd.singular_values.max();
    let tol = smax * x.nrows().max(x.ncols()) as f64 * f64::EPSILON * 16.0;
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > tol).collect();
    if keep.is_empty() {
        return Err(Error::Singular("design matrix is zero".into()));
    }
    let p = Mat::from_fn(2 * d, keep.len(), |r, c| v_t[(keep[c], r)]);
    let coef = normal_equations(&(&x * &p), a)?;
    let w = &p * coef;
    Ok(IdSolution { w1: w.rows(0, d).transpose(), w2: w.rows(d, d).transpose(), rank: keep.len(), row_space: p })
}

fn rel_error(est: &Mat, truth: &Mat) -> f64 {
    let scale = truth.norm();
    if scale == 0.0 {
        est.norm()
    } else {
        (est - truth).norm() / scale
    }
}

/// Analytic `(W₁, W₂) = (−B⁺AQᵀ, B⁺Qᵀ)`.
pub fn analytic_id(mdp: &LatentMdp) -> Result<(Mat, Mat)> {
    let q = mdp.lift.basis().ok_or_else(|| Error::InvalidSpec("closed-form recovery needs a linear lift".into()))?;
    let w2 = &mdp.b_pinv * q.transpose();
    let w1 = -(&mdp.b_pinv * &mdp.a * q.transpose());
    Ok((w1, w2))
}

/// Projects the stacked analytic map onto the excited row space: the part of
/// it that any data-consistent solution shares.
fn project_onto(sol: &IdSolution, w1: &Mat, w2: &Mat) -> (Mat, Mat) {
    let d = w1.ncols();
    let w = crate::linalg::vcat(&w1.transpose(), &w2.transpose());
    let proj = &sol.row_space * (sol.row_space.transpose() * w);
    (proj.rows(0, d).transpose(), proj.rows(d, d).transpose())
}

/// Share of the recovered rows' energy inside the true latent subspace.
pub fn latent_alignment(sol: &IdSolution, q: &Mat) -> f64 {
    let rows = crate::linalg::vcat(&sol.w1, &sol.w2);
    let total = rows.norm_squared();
    if total == 0.0 {
        return 0.0;
    }
    (&rows * q).norm_squared() / total
}

fn recover(mdp: &LatentMdp, cfg: &IdRecoveryConfig, n: usize, seed: u64) -> Result<(IdSolution, DatasetHandle, usize)> {
    let (ds, projected) = excitation_dataset(mdp, n, cfg.state_radius, cfg.action_scale, seed)?;
    let t = ds.learner().transitions(1, Split::All)?;
    let sol = solve_id_closed_form(&t.o, &t.o_next, &t.a)?;
    let needed = mdp.latent_dim() + mdp.action_dim();
    if sol.rank < needed {
        return Err(Error::Singular(format!("design rank {} below {needed}: insufficient excitation", sol.rank)));
    }
    Ok((sol, ds, projected))
}

pub fn verify_id_recovery(cfg: &IdRecoveryConfig) -> Result<TheoryReport> {
    let mdp = make_mdp(&cfg.mdp, cfg.mdp_seed)?;
    let q = mdp
        .lift
        .basis()
        .cloned()
        .ok_or_else(|| Error::InvalidSpec("closed-form recovery needs a linear lift".into()))?;
    let (w1_true, w2_true) = analytic_id(&mdp)?;
    let (sol, ds, projected) = recover(&mdp, cfg, cfg.n_samples, cfg.seed)?;
    let (w1_ref, w2_ref) = project_onto(&sol, &w1_true, &w2_true);

    let mut rep = TheoryReport::new(Experiment::IdRecovery);
    let e1 = rel_error(&sol.w1, &w1_ref);
    let e2 = rel_error(&sol.w2, &w2_ref);
    rep.metric("w1_rel_error", e1);
    rep.metric("w2_rel_error", e2);
    rep.metric("max_rel_error", e1.max(e2));
    rep.metric("alignment", latent_alignment(&sol, &q));
    rep.metric("design_rank", sol.rank as f64);
    rep.metric("excited_fraction", sol.rank as f64 / (2 * mdp.latent_dim()) as f64);
    rep.metric("unexcited_analytic_share", {
        let full = crate::linalg::vcat(&w1_true, &w2_true).norm();
        let shared = crate::linalg::vcat(&w1_ref, &w2_ref).norm();
        ((full * full - shared * shared).max(0.0)).sqrt() / full
    });
    rep.metric("condition_number_b", condition_number(&mdp.b));
    rep.metric("projected_fraction", projected as f64 / cfg.n_samples as f64);
    rep.threshold("max_rel_error", cfg.max_rel_error);
    rep.threshold("min_alignment", cfg.min_alignment);
    rep.threshold("max_projected_fraction", 0.0);
    rep.check("max_rel_error", Bound::AtMost, "max_rel_error");
    rep.check("alignment", Bound::AtLeast, "min_alignment");
    rep.check("projected_fraction", Bound::AtMost, "max_projected_fraction");

    if !cfg.rate_sizes.is_empty() {
        let mut errs = Vec::with_capacity(cfg.rate_sizes.len());
        for &n in &cfg.rate_sizes {
            let mut total = 0.0;
            for r in 0..cfg.rate_replicates.max(1) {
                let seed = rng::derive_seed(cfg.seed, &["rate", &n.to_string(), &r.to_string()]);
                let (s, _, _) = recover(&mdp, cfg, n, seed)?;
                total += rel_error(&s.w2, &w2_true);
            }
            let err = total / cfg.rate_replicates.max(1) as f64;
            rep.metric(format!("w2_error_n{n}"), err);
            errs.push(err);
        }
        rep.threshold("rate_ratio_min", cfg.rate_band.0);
        rep.threshold("rate_ratio_max", cfg.rate_band.1);
        for i in 1..errs.len() {
            let name = format!("rate_ratio_{}_{}", cfg.rate_sizes[i - 1], cfg.rate_sizes[i]);
            rep.metric(name.clone(), errs[i] / errs[i - 1]);
            rep.check(name.clone(), Bound::AtLeast, "rate_ratio_min");
            rep.check(name, Bound::AtMost, "rate_ratio_max");
        }
    }

    if cfg.gradient_steps > 0 {
        let t = ds.learner().transitions(1, Split::All)?;
        let closed = mse_loss(&sol.predict(&t.o, &t.o_next), &t.a)?.0;
        let mut pc = PretrainConfig::new(Objective::InverseDynamics, cfg.gradient_steps, cfg.seed);
        pc.arch = ArchSpec::linear(mdp.latent_dim());
        // weight decay would bias the comparison away from least squares
        pc.optimizer.learning_rate = cfg.gradient_lr;
        pc.optimizer.weight_decay = 0.0;
        let enc = pretrain(&ds, &pc)?;
        let trained = enc.plateau(1).unwrap_or(f64::NAN);
        rep.metric("closed_form_mse", closed);
        rep.metric("gradient_mse", trained);
        rep.metric("gradient_gap", trained - closed);
        rep.threshold("max_gradient_gap", cfg.max_gradient_gap);
        rep.check("gradient_gap", Bound::AtMost, "max_gradient_gap");
    }
    Ok(rep.finish())
}
