//! Demonstration datasets: generation, learner/privileged views, k-step
//! transition extraction and a fixed binary file format.

mod io;

pub use io::{from_bytes, load, save, to_bytes, FORMAT_VERSION, MAGIC};

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::env::{expert_action, Context, ContextSpec, ContextVariant, ExpertPolicy, LatentMdp};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::rng::{self, Stream};

/// Fraction of trajectories held out for validation.
pub const VAL_FRACTION: f64 = 0.1;

/// Opaque bookkeeping identifier of the context that produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ContextTag(pub u64);

/// One demonstration. Latents and the context tag are crate-private and only
/// reachable through [`PrivilegedView`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `(H+1) × d`
    pub observations: Mat,
    /// `H × k`
    pub actions: Mat,
    pub(crate) latents: Mat,
    pub(crate) context_tag: ContextTag,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.nrows()
    }

    fn check(&self) -> Result<()> {
        let h = self.actions.nrows();
        if self.observations.nrows() != h + 1 || self.latents.nrows() != h + 1 {
            return Err(Error::Shape(format!(
                "trajectory has {} observations, {} actions, {} latents",
                self.observations.nrows(),
                h,
                self.latents.nrows()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub mdp_fingerprint: u64,
    pub policy: String,
    pub context: String,
    pub seed: u64,
}

/// Rows `(o_t, a_t, o_{t+κ})`. `a_seq` holds `a_{t:t+κ}` concatenated, which
/// is what multi-step forward models condition on.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch {
    pub o: Mat,
    pub a: Mat,
    pub a_seq: Mat,
    pub o_next: Mat,
    pub step_gap: usize,
    /// `(trajectory, t)` of each row.
    pub origin: Vec<(usize, usize)>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.o.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.o.nrows() == 0
    }

    pub fn rows(&self, idx: &[usize]) -> TransitionBatch {
        TransitionBatch {
            o: self.o.select_rows(idx),
            a: self.a.select_rows(idx),
            a_seq: self.a_seq.select_rows(idx),
            o_next: self.o_next.select_rows(idx),
            step_gap: self.step_gap,
            origin: idx.iter().map(|&i| self.origin[i]).collect(),
        }
    }
}

#[derive(Debug)]
pub struct DatasetHandle {
    trajectories: Vec<Trajectory>,
    train: Vec<usize>,
    val: Vec<usize>,
    pub provenance: Provenance,
    privileged_reads: AtomicUsize,
}

impl Clone for DatasetHandle {
    fn clone(&self) -> Self {
        DatasetHandle {
            trajectories: self.trajectories.clone(),
            train: self.train.clone(),
            val: self.val.clone(),
            provenance: self.provenance.clone(),
            privileged_reads: AtomicUsize::new(0),
        }
    }
}

impl PartialEq for DatasetHandle {
    fn eq(&self, other: &Self) -> bool {
        self.trajectories == other.trajectories
            && self.train == other.train
            && self.val == other.val
            && self.provenance == other.provenance
    }
}

/// Deterministic 90/10 split from the dataset seed alone.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_val = (n as f64 * VAL_FRACTION).floor() as usize;
    let mut keyed: Vec<(u64, usize)> =
        (0..n).map(|i| (rng::derive_seed(seed, &["split", &i.to_string()]), i)).collect();
    keyed.sort_unstable();
    let mut val: Vec<usize> = keyed[..n_val].iter().map(|&(_, i)| i).collect();
    let mut train: Vec<usize> = keyed[n_val..].iter().map(|&(_, i)| i).collect();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

impl DatasetHandle {
    pub fn new(trajectories: Vec<Trajectory>, provenance: Provenance) -> Result<Self> {
        let (train, val) = split_indices(trajectories.len(), provenance.seed);
        Self::with_split(trajectories, train, val, provenance)
    }

    pub(crate) fn with_split(
        trajectories: Vec<Trajectory>,
        train: Vec<usize>,
        val: Vec<usize>,
        provenance: Provenance,
    ) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::EmptyDataset("dataset has no trajectories".into()));
        }
        let n = trajectories.len();
        let mut seen = vec![false; n];
        for &i in train.iter().chain(&val) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidSpec("split is not a partition of the trajectories".into()));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidSpec("split does not cover every trajectory".into()));
        }
        let first = &trajectories[0];
        for t in &trajectories {
            t.check()?;
            if t.observations.shape() != first.observations.shape()
                || t.actions.shape() != first.actions.shape()
                || t.latents.shape() != first.latents.shape()
            {
                return Err(Error::Shape("trajectories have inconsistent shapes".into()));
            }
        }
        Ok(DatasetHandle { trajectories, train, val, provenance, privileged_reads: AtomicUsize::new(0) })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories[0].horizon()
    }

    pub fn obs_dim(&self) -> usize {
        self.trajectories[0].observations.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.trajectories[0].actions.ncols()
    }

    pub fn latent_dim(&self) -> usize {
        self.trajectories[0].latents.ncols()
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn val_indices(&self) -> &[usize] {
        &self.val
    }

    fn indices(&self, split: Split) -> Vec<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::All => (0..self.len()).collect(),
        }
    }

    /// What learners are allowed to see.
    pub fn learner(&self) -> LearnerView<'_> {
        LearnerView { ds: self }
    }

    /// Ground truth for probes and oracles. Every call is counted.
    pub fn privileged(&self) -> PrivilegedView<'_> {
        self.privileged_reads.fetch_add(1, Ordering::Relaxed);
        PrivilegedView { ds: self }
    }

    /// Number of privileged views handed out so far.
    pub fn privileged_reads(&self) -> usize {
        self.privileged_reads.load(Ordering::Relaxed)
    }

    pub(crate) fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }
}

/// Observations and actions only.
#[derive(Clone, Copy)]
pub struct LearnerView<'a> {
    ds: &'a DatasetHandle,
}

impl<'a> LearnerView<'a> {
    pub fn len(&self) -> usize {
        self.ds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ds.is_empty()
    }

    pub fn observations(&self, i: usize) -> &'a Mat {
        &self.ds.trajectories[i].observations
    }

    pub fn actions(&self, i: usize) -> &'a Mat {
        &self.ds.trajectories[i].actions
    }

    /// Every `(o_t, a_t, o_{t+κ})` with `t + κ ≤ H` from the chosen split, in
    /// trajectory-then-time order.
    pub fn transitions(&self, step_gap: usize, split: Split) -> Result<TransitionBatch> {
        let h = self.ds.horizon();
        if step_gap == 0 || step_gap > h {
            return Err(Error::InvalidSpec(format!("step gap {step_gap} outside 1..={h}")));
        }
        let idx = self.ds.indices(split);
        let per = h - step_gap + 1;
        let rows = idx.len() * per;
        let (d, k) = (self.ds.obs_dim(), self.ds.action_dim());
        let mut o = Mat::zeros(rows, d);
        let mut o_next = Mat::zeros(rows, d);
        let mut a = Mat::zeros(rows, k);
        let mut a_seq = Mat::zeros(rows, k * step_gap);
        let mut origin = Vec::with_capacity(rows);
        let mut r = 0;
        for &i in &idx {
            let tr = &self.ds.trajectories[i];
            for t in 0..per {
                o.row_mut(r).copy_from(&tr.observations.row(t));
                o_next.row_mut(r).copy_from(&tr.observations.row(t + step_gap));
                a.row_mut(r).copy_from(&tr.actions.row(t));
                for j in 0..step_gap {
                    a_seq.view_mut((r, j * k), (1, k)).copy_from(&tr.actions.row(t + j));
                }
                origin.push((i, t));
                r += 1;
            }
        }
        Ok(TransitionBatch { o, a, a_seq, o_next, step_gap, origin })
    }

    /// All observations `o_t` (including the terminal one) of a split,
    /// stacked row-wise.
    pub fn observation_rows(&self, split: Split) -> Mat {
        let idx = self.ds.indices(split);
        let h1 = self.ds.horizon() + 1;
        let mut out = Mat::zeros(idx.len() * h1, self.ds.obs_dim());
        for (n, &i) in idx.iter().enumerate() {
            out.rows_mut(n * h1, h1).copy_from(&self.ds.trajectories[i].observations);
        }
        out
    }
}

pub struct PrivilegedView<'a> {
    ds: &'a DatasetHandle,
}

impl<'a> PrivilegedView<'a> {
    pub fn latents(&self, i: usize) -> &'a Mat {
        &self.ds.trajectories[i].latents
    }

    pub fn context_tag(&self, i: usize) -> ContextTag {
        self.ds.trajectories[i].context_tag
    }

    /// Latent rows aligned with [`LearnerView::observation_rows`].
    pub fn latent_rows(&self, split: Split) -> Mat {
        let idx = self.ds.indices(split);
        let h1 = self.ds.horizon() + 1;
        let mut out = Mat::zeros(idx.len() * h1, self.ds.latent_dim());
        for (n, &i) in idx.iter().enumerate() {
            out.rows_mut(n * h1, h1).copy_from(&self.ds.trajectories[i].latents);
        }
        out
    }

    /// Latents `s_t` for each row of a transition batch.
    pub fn transition_latents(&self, batch: &TransitionBatch) -> Mat {
        let mut out = Mat::zeros(batch.len(), self.ds.latent_dim());
        for (r, &(i, t)) in batch.origin.iter().enumerate() {
            out.row_mut(r).copy_from(&self.ds.trajectories[i].latents.row(t));
        }
        out
    }
}

fn context_tag(ctx: &Context, index: usize) -> ContextTag {
    match ctx.variant {
        ContextVariant::Discrete { id, .. } => ContextTag(id as u64),
        _ => ContextTag(index as u64),
    }
}

/// Rolls the expert out for `steps` steps from `s0` under context `ctx`.
pub fn expert_trajectory(
    mdp: &LatentMdp,
    policy: &ExpertPolicy,
    ctx: &Context,
    s0: Vector,
    steps: usize,
    tag: ContextTag,
    rng: &mut Stream,
) -> Result<Trajectory> {
    let (l, d, k) = (mdp.latent_dim(), mdp.obs_dim(), mdp.action_dim());
    let mut latents = Mat::zeros(steps + 1, l);
    let mut observations = Mat::zeros(steps + 1, d);
    let mut actions = Mat::zeros(steps, k);
    let mut s = s0;
    latents.row_mut(0).copy_from(&s.transpose());
    observations.row_mut(0).copy_from(&mdp.lift.decode(&s).transpose());
    for t in 0..steps {
        let a = expert_action(policy, mdp, ctx, &s)?;
        let (next, o) = mdp.step(&s, &a, rng)?;
        actions.row_mut(t).copy_from(&a.transpose());
        latents.row_mut(t + 1).copy_from(&next.transpose());
        observations.row_mut(t + 1).copy_from(&o.transpose());
        s = next;
    }
    Ok(Trajectory { observations, actions, latents, context_tag: tag })
}

fn policy_name(policy: &ExpertPolicy) -> String {
    serde_json::to_string(&policy.family).unwrap_or_default().trim_matches('"').to_string()
}

/// Multi-context pretraining data: trajectory `i` draws its own context from
/// `context_spec` (discrete specs cycle through the allowed ids), its own
/// initial state from `ρ_c`, and its own noise.
pub fn generate_pretraining(
    mdp: &LatentMdp,
    policy: &ExpertPolicy,
    context_spec: &ContextSpec,
    n_traj: usize,
    seed: u64,
) -> Result<DatasetHandle> {
    generate_grouped(mdp, policy, context_spec, n_traj, 1, mdp.horizon, seed)
}

/// `n_contexts` contexts with `per_context` trajectories of `steps` steps
/// each. With `steps = 1` this yields i.i.d. transition tuples.
pub fn generate_grouped(
    mdp: &LatentMdp,
    policy: &ExpertPolicy,
    context_spec: &ContextSpec,
    n_contexts: usize,
    per_context: usize,
    steps: usize,
    seed: u64,
) -> Result<DatasetHandle> {
    context_spec.validate()?;
    if n_contexts == 0 || per_context == 0 || steps == 0 {
        return Err(Error::EmptyDataset("need at least one context, trajectory and step".into()));
    }
    let mut trajectories = Vec::with_capacity(n_contexts * per_context);
    for c in 0..n_contexts {
        let mut ctx_rng = rng::stream(seed, &["context", &c.to_string()]);
        let ctx = context_spec.sample(c, mdp.latent_dim(), mdp.action_dim(), &mut ctx_rng)?;
        ctx.validate(mdp.latent_dim(), mdp.action_dim(), mdp.arena_radius)?;
        let tag = context_tag(&ctx, c);
        for j in 0..per_context {
            let mut r = rng::stream(seed, &["trajectory", &c.to_string(), &j.to_string()]);
            let s0 = mdp.initial_state(&ctx, &mut r);
            trajectories.push(expert_trajectory(mdp, policy, &ctx, s0, steps, tag, &mut r)?);
        }
    }
    let provenance = Provenance {
        mdp_fingerprint: mdp.fingerprint(),
        policy: policy_name(policy),
        context: serde_json::to_string(context_spec).unwrap_or_default(),
        seed,
    };
    DatasetHandle::new(trajectories, provenance)
}

/// Single-context finetuning data for `c_fine`.
pub fn generate_finetuning(
    mdp: &LatentMdp,
    policy: &ExpertPolicy,
    c_fine: &Context,
    n_traj: usize,
    seed: u64,
) -> Result<DatasetHandle> {
    if n_traj == 0 {
        return Err(Error::EmptyDataset("n_traj must be at least 1".into()));
    }
    c_fine.validate(mdp.latent_dim(), mdp.action_dim(), mdp.arena_radius)?;
    let tag = context_tag(c_fine, 0);
    let trajectories = (0..n_traj)
        .map(|i| {
            let mut r = rng::stream(seed, &["finetune", &i.to_string()]);
            let s0 = mdp.initial_state(c_fine, &mut r);
            expert_trajectory(mdp, policy, c_fine, s0, mdp.horizon, tag, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    let provenance = Provenance {
        mdp_fingerprint: mdp.fingerprint(),
        policy: policy_name(policy),
        context: format!("single:{}", tag.0),
        seed,
    };
    DatasetHandle::new(trajectories, provenance)
}

#[cfg(test)]
mod tests;
