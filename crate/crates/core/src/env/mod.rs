//! Contextual MDPs with latent linear dynamics `s' = A s + B a + ε` observed
//! through an invertible lift `o = φ⁻¹(s)`.

mod context;
mod lift;

pub use context::{Context, ContextSpec, ContextVariant};
pub use lift::{LiftSpec, ObservationLift, MANIFOLD_TOL};

use serde::{Deserialize, Serialize};

use crate::data::{ContextTag, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{condition_number, gaussian, orthonormal_columns, pinv, spectral_radius, Mat, Vector};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicsKind {
    /// `A = I + mixing·G` rescaled to the target spectral radius, `B` with
    /// orthonormal columns scaled by `control_scale`.
    #[default]
    Random,
    /// `A = 0`, `B = control_scale·I`: the next state is the action itself.
    /// Used by the rotation construction, which needs `ℓ = k`.
    ActionIsState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSpec {
    pub latent_dim: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub lift: LiftSpec,
    #[serde(default = "defaults::horizon")]
    pub horizon: usize,
    #[serde(default = "defaults::arena_radius")]
    pub arena_radius: f64,
    /// Radius of the context-independent initial-state ball.
    #[serde(default = "defaults::init_radius")]
    pub init_radius: f64,
    /// Isotropic process noise, `Σ = noise_std² I`.
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub dynamics: DynamicsKind,
    #[serde(default = "defaults::mixing")]
    pub mixing: f64,
    #[serde(default = "defaults::spectral_radius")]
    pub spectral_radius: f64,
    #[serde(default = "defaults::control_scale")]
    pub control_scale: f64,
    #[serde(default = "defaults::max_condition")]
    pub max_condition: f64,
}

mod defaults {
    pub fn horizon() -> usize {
        50
    }
    pub fn arena_radius() -> f64 {
        1.0
    }
    pub fn init_radius() -> f64 {
        0.8
    }
    pub fn mixing() -> f64 {
        0.1
    }
    pub fn spectral_radius() -> f64 {
        0.95
    }
    pub fn control_scale() -> f64 {
        1.0
    }
    pub fn max_condition() -> f64 {
        10.0
    }
}

impl MdpSpec {
    pub fn new(latent_dim: usize, obs_dim: usize, action_dim: usize, lift: LiftSpec) -> Self {
        MdpSpec {
            latent_dim,
            obs_dim,
            action_dim,
            lift,
            horizon: defaults::horizon(),
            arena_radius: defaults::arena_radius(),
            init_radius: defaults::init_radius(),
            noise_std: 0.0,
            dynamics: DynamicsKind::Random,
            mixing: defaults::mixing(),
            spectral_radius: defaults::spectral_radius(),
            control_scale: defaults::control_scale(),
            max_condition: defaults::max_condition(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (l, d, k) = (self.latent_dim, self.obs_dim, self.action_dim);
        if !(d >= l && l >= k && k >= 1) {
            return Err(Error::InvalidSpec(format!("need d >= l >= k >= 1, got d={d}, l={l}, k={k}")));
        }
        self.lift.validate(l, d)?;
        if self.horizon == 0 {
            return Err(Error::InvalidSpec("horizon must be positive".into()));
        }
        for (name, v) in [("arena_radius", self.arena_radius), ("control_scale", self.control_scale)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidSpec(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.init_radius.is_finite() && self.init_radius >= 0.0 && self.init_radius <= self.arena_radius) {
            return Err(Error::InvalidSpec("init_radius must lie in [0, arena_radius]".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::InvalidSpec("noise_std must be >= 0".into()));
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius <= 1.0) {
            return Err(Error::InvalidSpec("spectral_radius must lie in (0, 1]".into()));
        }
        if self.dynamics == DynamicsKind::ActionIsState && l != k {
            return Err(Error::InvalidSpec("action-is-state dynamics need latent_dim == action_dim".into()));
        }
        Ok(())
    }
}

/// The generative world. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMdp {
    pub a: Mat,
    pub b: Mat,
    pub b_pinv: Mat,
    pub noise_cov: Mat,
    noise_factor: Mat,
    pub lift: ObservationLift,
    pub horizon: usize,
    pub arena_radius: f64,
    pub init_radius: f64,
}

/// Draws an MDP from `spec`. Deterministic in `seed`.
pub fn make_mdp(spec: &MdpSpec, seed: u64) -> Result<LatentMdp> {
    spec.validate()?;
    let mut rng = rng::stream(seed, &["mdp"]);
    let (l, k) = (spec.latent_dim, spec.action_dim);
    let a = match spec.dynamics {
        DynamicsKind::Random => {
            let mut a = Mat::identity(l, l) + gaussian(&mut rng, l, l) * spec.mixing;
            let rho = spectral_radius(&a);
            if rho <= 1e-12 {
                return Err(Error::Degenerate("drawn A has zero spectral radius".into()));
            }
            a *= spec.spectral_radius / rho;
            a
        }
        DynamicsKind::ActionIsState => Mat::zeros(l, l),
    };
    let b = match spec.dynamics {
        DynamicsKind::Random => {
            let mut accepted = None;
            for _ in 0..100 {
                let b = orthonormal_columns(&mut rng, l, k) * spec.control_scale;
                if condition_number(&b) <= spec.max_condition {
                    accepted = Some(b);
                    break;
                }
            }
            accepted.ok_or_else(|| {
                Error::Degenerate(format!("no B within condition bound {} after 100 draws", spec.max_condition))
            })?
        }
        DynamicsKind::ActionIsState => {
            let b = Mat::identity(l, k) * spec.control_scale;
            if condition_number(&b) > spec.max_condition {
                return Err(Error::Degenerate(format!("B exceeds condition bound {}", spec.max_condition)));
            }
            b
        }
    };
    let lift = ObservationLift::build(&spec.lift, l, spec.obs_dim, &mut rng)?;
    let noise_cov = Mat::identity(l, l) * spec.noise_std.powi(2);
    LatentMdp::from_parts(a, b, noise_cov, lift, spec.horizon, spec.arena_radius, spec.init_radius)
}

impl LatentMdp {
    pub fn from_parts(
        a: Mat,
        b: Mat,
        noise_cov: Mat,
        lift: ObservationLift,
        horizon: usize,
        arena_radius: f64,
        init_radius: f64,
    ) -> Result<Self> {
        let l = lift.latent_dim();
        if a.shape() != (l, l) || b.nrows() != l || noise_cov.shape() != (l, l) || b.ncols() == 0 {
            return Err(Error::Shape(format!(
                "A {:?}, B {:?}, Σ {:?} inconsistent with latent dim {l}",
                a.shape(),
                b.shape(),
                noise_cov.shape()
            )));
        }
        if (&noise_cov - noise_cov.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidSpec("noise covariance is not symmetric".into()));
        }
        let eig = noise_cov.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&v| v < -1e-12) {
            return Err(Error::InvalidSpec("noise covariance is not PSD".into()));
        }
        let sqrt_vals = Mat::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
        let noise_factor = &eig.eigenvectors * sqrt_vals;
        let b_pinv = pinv(&b);
        Ok(LatentMdp { a, b, b_pinv, noise_cov, noise_factor, lift, horizon, arena_radius, init_radius })
    }

    pub fn latent_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.lift.obs_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn is_noiseless(&self) -> bool {
        self.noise_cov.amax() == 0.0
    }

    /// Radial projection onto the arena.
    pub fn project(&self, s: &mut Vector) {
        let n = s.norm();
        if n > self.arena_radius {
            *s *= self.arena_radius / n;
        }
    }

    /// Noise-free successor `A s + B a`, before arena projection.
    pub fn mean_next(&self, s: &Vector, a: &Vector) -> Vector {
        &self.a * s + &self.b * a
    }

    /// One transition. Context never enters: dynamics are shared by all tasks.
    pub fn step(&self, s: &Vector, a: &Vector, rng: &mut Stream) -> Result<(Vector, Vector)> {
        if s.len() != self.latent_dim() || a.len() != self.action_dim() {
            return Err(Error::Shape(format!("step got s:{} a:{}", s.len(), a.len())));
        }
        if !s.iter().chain(a.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("step input".into()));
        }
        let mut next = self.mean_next(s, a);
        if !self.is_noiseless() {
            let z = Vector::from_vec(rng::normal_vec(rng, self.latent_dim()));
            next += &self.noise_factor * z;
        }
        self.project(&mut next);
        let o = self.lift.decode(&next);
        Ok((next, o))
    }

    /// Initial latent state from `ρ_c`.
    pub fn initial_state(&self, ctx: &Context, rng: &mut Stream) -> Vector {
        let l = self.latent_dim();
        match (&ctx.variant, ctx.inferrable) {
            (ContextVariant::Rotation(_), _) => Vector::from_vec(rng::sphere(rng, l)),
            (_, false) => Vector::from_vec(rng::ball(rng, l, self.init_radius)),
            (_, true) => {
                // start on the far side of the goal so o₀ reveals the context
                let g = ctx.target_goal().expect("goal variants carry a goal");
                let mut s = -g + Vector::from_vec(rng::ball(rng, l, 0.1 * self.arena_radius));
                self.project(&mut s);
                s
            }
        }
    }

    /// `φ(o)`, the ground-truth encoder. Used only by probes and oracles.
    pub fn true_encode(&self, o: &Vector) -> Result<Vector> {
        self.lift.encode(o)
    }

    /// Stable digest of the dynamics, noise, lift basis and horizon.
    pub fn fingerprint(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for m in [&self.a, &self.b, &self.noise_cov] {
            h.update((m.nrows() as u64).to_le_bytes());
            h.update((m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                h.update(v.to_le_bytes());
            }
        }
        if let Some(q) = self.lift.basis() {
            for v in q.iter() {
                h.update(v.to_le_bytes());
            }
        }
        h.update(self.lift.kind_name().as_bytes());
        h.update((self.horizon as u64).to_le_bytes());
        h.update(self.arena_radius.to_le_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("sha256 has 32 bytes"))
    }

    pub fn check_invariants(&self, max_condition: f64) -> Result<()> {
        let k = self.action_dim();
        let sv = crate::linalg::singular_values(&self.b);
        if sv.iter().filter(|&&v| v > 1e-12).count() < k {
            return Err(Error::Degenerate("B is not full column rank".into()));
        }
        if condition_number(&self.b) > max_condition {
            return Err(Error::Degenerate("B exceeds condition bound".into()));
        }
        if spectral_radius(&self.a) > 1.0 + 1e-9 {
            return Err(Error::InvalidSpec("spectral radius of A exceeds 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyFamily {
    PdToGoal,
    RotationLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertPolicy {
    pub family: PolicyFamily,
    #[serde(default = "expert_defaults::kp")]
    pub kp: f64,
    #[serde(default = "expert_defaults::kd")]
    pub kd: f64,
    #[serde(default = "expert_defaults::action_clip")]
    pub action_clip: f64,
}

mod expert_defaults {
    pub fn kp() -> f64 {
        0.8
    }
    pub fn kd() -> f64 {
        0.2
    }
    pub fn action_clip() -> f64 {
        1.0
    }
}

impl ExpertPolicy {
    pub fn pd_to_goal() -> Self {
        ExpertPolicy { family: PolicyFamily::PdToGoal, kp: 0.8, kd: 0.2, action_clip: 1.0 }
    }

    pub fn rotation_linear() -> Self {
        ExpertPolicy { family: PolicyFamily::RotationLinear, kp: 0.0, kd: 0.0, action_clip: 1.0 }
    }
}

pub fn clip(a: &mut Vector, bound: f64) {
    a.apply(|v| *v = v.clamp(-bound, bound));
}

/// The context-aware demonstrator.
///
/// `pd-to-goal` works in the controllable coordinates through `B⁺`:
/// proportional action on the position error, cancellation of the passive
/// drift `(A − I)s`, and damping of the drift of the error,
/// `a = clip(B⁺[k_p(g − s) + (I − A)s + k_d(I − A)(s − g)])`.
/// The closed loop then has `g` as an exact fixed point when `ℓ = k`.
///
/// `rotation-linear` returns `R s / ‖s‖`.
pub fn expert_action(policy: &ExpertPolicy, mdp: &LatentMdp, ctx: &Context, s: &Vector) -> Result<Vector> {
    match (policy.family, &ctx.variant) {
        (PolicyFamily::PdToGoal, ContextVariant::Goal(g) | ContextVariant::Discrete { goal: g, .. }) => {
            let l = mdp.latent_dim();
            let drift = Mat::identity(l, l) - &mdp.a;
            let desired = (g - s) * policy.kp + &drift * s + &drift * (s - g) * policy.kd;
            let mut a = &mdp.b_pinv * desired;
            clip(&mut a, policy.action_clip);
            Ok(a)
        }
        (PolicyFamily::RotationLinear, ContextVariant::Rotation(r)) => {
            let n = s.norm();
            if n == 0.0 {
                return Err(Error::ZeroState);
            }
            Ok(r * (s / n))
        }
        (family, _) => Err(Error::InvalidSpec(format!("policy family {family:?} incompatible with context"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSpec {
    pub success_radius: f64,
    pub episodes: usize,
    pub max_steps: usize,
}

impl EvaluationSpec {
    /// Success radius `0.1 × arena`, 100 episodes, one horizon per episode.
    pub fn default_for(mdp: &LatentMdp) -> Self {
        EvaluationSpec { success_radius: 0.1 * mdp.arena_radius, episodes: 100, max_steps: mdp.horizon }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.success_radius > 0.0) || self.episodes == 0 || self.max_steps == 0 {
            return Err(Error::InvalidSpec(
                "evaluation needs success_radius > 0, episodes >= 1, max_steps >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Alignment threshold for the rotation task's terminal direction.
pub const ROTATION_ALIGNMENT: f64 = 0.95;

/// Anything that maps a batch of states to a batch of actions (rows are
/// episodes). Learned policies read only `obs`; the expert reads `latents`.
pub trait Actor: Sync {
    fn act(&self, obs: &Mat, latents: &Mat, ctx: &Context, rngs: &mut [Stream]) -> Result<Mat>;
}

pub struct ExpertActor<'a> {
    pub policy: ExpertPolicy,
    pub mdp: &'a LatentMdp,
}

impl Actor for ExpertActor<'_> {
    fn act(&self, _obs: &Mat, latents: &Mat, ctx: &Context, _rngs: &mut [Stream]) -> Result<Mat> {
        let mut out = Mat::zeros(latents.nrows(), self.mdp.action_dim());
        for i in 0..latents.nrows() {
            let a = expert_action(&self.policy, self.mdp, ctx, &latents.row(i).transpose())?;
            out.row_mut(i).copy_from(&a.transpose());
        }
        Ok(out)
    }
}

/// Uniform actions in the clip box.
pub struct RandomActor {
    pub action_dim: usize,
    pub action_clip: f64,
}

impl Actor for RandomActor {
    fn act(&self, obs: &Mat, _latents: &Mat, _ctx: &Context, rngs: &mut [Stream]) -> Result<Mat> {
        let mut out = Mat::zeros(obs.nrows(), self.action_dim);
        for (i, rng) in rngs.iter_mut().enumerate() {
            for j in 0..self.action_dim {
                out[(i, j)] = rng::uniform(rng, -self.action_clip, self.action_clip);
            }
        }
        Ok(out)
    }
}

pub struct ZeroActor {
    pub action_dim: usize,
}

impl Actor for ZeroActor {
    fn act(&self, obs: &Mat, _latents: &Mat, _ctx: &Context, _rngs: &mut [Stream]) -> Result<Mat> {
        Ok(Mat::zeros(obs.nrows(), self.action_dim))
    }
}

/// Per-episode outcome of a batched rollout.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub trajectory: Trajectory,
    pub success: bool,
}

/// Runs one episode per initial state, all in lock-step so learned policies
/// see a batch. Each episode consumes only its own stream, so outcomes do not
/// depend on batch composition.
pub fn rollout_batch(
    mdp: &LatentMdp,
    actor: &dyn Actor,
    ctx: &Context,
    eval: &EvaluationSpec,
    initial: &[Vector],
    rngs: &mut [Stream],
    action_clip: f64,
) -> Result<Vec<EpisodeResult>> {
    eval.validate()?;
    assert_eq!(initial.len(), rngs.len(), "one stream per episode");
    let n = initial.len();
    let (l, d, k) = (mdp.latent_dim(), mdp.obs_dim(), mdp.action_dim());
    let steps = eval.max_steps;
    let mut lat: Vec<Mat> = initial.iter().map(|_| Mat::zeros(steps + 1, l)).collect();
    let mut obs: Vec<Mat> = initial.iter().map(|_| Mat::zeros(steps + 1, d)).collect();
    let mut act: Vec<Mat> = initial.iter().map(|_| Mat::zeros(steps, k)).collect();
    let mut state: Vec<Vector> = initial.to_vec();
    let mut cur_obs = Mat::zeros(n, d);
    let mut cur_lat = Mat::zeros(n, l);
    let mut reached = vec![false; n];
    let goal = ctx.target_goal().cloned();
    for (i, s) in state.iter().enumerate() {
        let o = mdp.lift.decode(s);
        lat[i].row_mut(0).copy_from(&s.transpose());
        obs[i].row_mut(0).copy_from(&o.transpose());
        if let Some(g) = &goal {
            reached[i] = (s - g).norm() <= eval.success_radius;
        }
    }
    for t in 0..steps {
        for i in 0..n {
            cur_obs.row_mut(i).copy_from(&obs[i].row(t));
            cur_lat.row_mut(i).copy_from(&lat[i].row(t));
        }
        let actions = actor.act(&cur_obs, &cur_lat, ctx, rngs)?;
        if actions.shape() != (n, k) {
            return Err(Error::Shape(format!("actor returned {:?}, expected ({n}, {k})", actions.shape())));
        }
        for i in 0..n {
            let mut a = actions.row(i).transpose();
            clip(&mut a, action_clip);
            let (s_next, o_next) = mdp.step(&state[i], &a, &mut rngs[i])?;
            act[i].row_mut(t).copy_from(&a.transpose());
            lat[i].row_mut(t + 1).copy_from(&s_next.transpose());
            obs[i].row_mut(t + 1).copy_from(&o_next.transpose());
            if let Some(g) = &goal {
                reached[i] |= (&s_next - g).norm() <= eval.success_radius;
            }
            state[i] = s_next;
        }
    }
    let mut results = Vec::with_capacity(n);
    for i in 0..n {
        let success = match &ctx.variant {
            ContextVariant::Rotation(_) => {
                let target = rotation_target(mdp, ctx, &initial[i], steps)?;
                let s = &state[i];
                let norm = s.norm();
                norm > 0.0 && s.dot(&target) / norm >= ROTATION_ALIGNMENT
            }
            _ => reached[i],
        };
        results.push(EpisodeResult {
            trajectory: Trajectory {
                observations: obs[i].clone(),
                actions: act[i].clone(),
                latents: lat[i].clone(),
                context_tag: ContextTag(0),
            },
            success,
        });
    }
    Ok(results)
}

/// Terminal direction reached by the noiseless rotation expert from `s0`.
pub fn rotation_target(mdp: &LatentMdp, ctx: &Context, s0: &Vector, steps: usize) -> Result<Vector> {
    let expert = ExpertPolicy::rotation_linear();
    let mut s = s0.clone();
    for _ in 0..steps {
        let a = expert_action(&expert, mdp, ctx, &s)?;
        s = mdp.mean_next(&s, &a);
        mdp.project(&mut s);
    }
    let n = s.norm();
    if n == 0.0 {
        return Err(Error::ZeroState);
    }
    Ok(s / n)
}

/// Single-episode rollout from `ρ_c`.
pub fn rollout(
    mdp: &LatentMdp,
    actor: &dyn Actor,
    ctx: &Context,
    eval: &EvaluationSpec,
    rng: &mut Stream,
    action_clip: f64,
) -> Result<(Trajectory, bool)> {
    let s0 = mdp.initial_state(ctx, rng);
    let mut streams = vec![rng::fork(rng, "episode")];
    let mut out = rollout_batch(mdp, actor, ctx, eval, &[s0], &mut streams, action_clip)?;
    let r = out.pop().expect("one episode");
    Ok((r.trajectory, r.success))
}

/// Success rate of `actor` over `eval.episodes` fresh episodes. Episode `i`
/// draws its initial state and noise from a stream keyed by `(seed, i)`.
pub fn success_rate(
    mdp: &LatentMdp,
    actor: &dyn Actor,
    ctx: &Context,
    eval: &EvaluationSpec,
    seed: u64,
    action_clip: f64,
) -> Result<Vec<bool>> {
    let mut initial = Vec::with_capacity(eval.episodes);
    let mut streams = Vec::with_capacity(eval.episodes);
    for i in 0..eval.episodes {
        let mut init_rng = rng::stream(seed, &["episode", &i.to_string(), "init"]);
        initial.push(mdp.initial_state(ctx, &mut init_rng));
        streams.push(rng::stream(seed, &["episode", &i.to_string(), "dyn"]));
    }
    Ok(rollout_batch(mdp, actor, ctx, eval, &initial, &mut streams, action_clip)?
        .into_iter()
        .map(|r| r.success)
        .collect())
}
