//! Pretraining objectives. Each consumes transitions from a pretraining
//! dataset and returns a frozen [`Encoder`].

mod encoder;

pub use encoder::{Encoder, EncoderKind};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetHandle, Split, TransitionBatch};
use crate::env::LatentMdp;
use crate::error::{Error, Result};
use crate::linalg::{hcat, vcat, Mat};
use crate::nn::{infonce_loss, mse_loss, Activation, AdamW, AdamWConfig, Mode, Network, NetworkSpec};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Objective {
    #[serde(rename = "ID")]
    InverseDynamics,
    #[serde(rename = "BC")]
    BehaviorCloning,
    #[serde(rename = "FD-e")]
    ForwardExplicit,
    #[serde(rename = "FD-i")]
    ForwardImplicit,
    #[serde(rename = "Cont")]
    Contrastive,
    Scratch,
    States,
}

impl Objective {
    pub const ALL: [Objective; 7] = [
        Objective::InverseDynamics,
        Objective::BehaviorCloning,
        Objective::ForwardExplicit,
        Objective::ForwardImplicit,
        Objective::Contrastive,
        Objective::Scratch,
        Objective::States,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Objective::InverseDynamics => "ID",
            Objective::BehaviorCloning => "BC",
            Objective::ForwardExplicit => "FD-e",
            Objective::ForwardImplicit => "FD-i",
            Objective::Contrastive => "Cont",
            Objective::Scratch => "Scratch",
            Objective::States => "States",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.tag().eq_ignore_ascii_case(tag))
            .ok_or_else(|| Error::InvalidSpec(format!("unknown objective {tag:?}")))
    }

    /// Objectives that train an encoder before finetuning.
    pub fn is_pretrained(self) -> bool {
        !matches!(self, Objective::Scratch | Objective::States)
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Vector analog of image augmentation: additive Gaussian noise, then each
/// coordinate zeroed independently with probability `mask_fraction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugSpec {
    pub noise_std: f64,
    pub mask_fraction: f64,
}

impl Default for AugSpec {
    fn default() -> Self {
        AugSpec { noise_std: 0.1, mask_fraction: 0.2 }
    }
}

impl AugSpec {
    pub const NONE: AugSpec = AugSpec { noise_std: 0.0, mask_fraction: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) || !(0.0..1.0).contains(&self.mask_fraction) {
            return Err(Error::InvalidSpec(format!("bad augmentation {self:?}")));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.noise_std == 0.0 && self.mask_fraction == 0.0
    }

    pub fn apply(&self, x: &Mat, rng: &mut impl Rng) -> Mat {
        let mut out = x.clone();
        for v in out.iter_mut() {
            if self.noise_std > 0.0 {
                *v += self.noise_std * rng::normal(rng);
            }
            if self.mask_fraction > 0.0 && rng.random::<f64>() < self.mask_fraction {
                *v = 0.0;
            }
        }
        out
    }
}

/// Network shapes shared by every objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchSpec {
    pub embedding_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub encoder_activation: Activation,
    pub encoder_normalize: bool,
    pub head_hidden: Vec<usize>,
    pub head_activation: Activation,
    pub head_dropout: f64,
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec {
            embedding_dim: 64,
            encoder_hidden: vec![256, 256],
            encoder_activation: Activation::Tanh,
            encoder_normalize: true,
            head_hidden: vec![256, 256],
            head_activation: Activation::Gelu,
            head_dropout: 0.1,
        }
    }
}

impl ArchSpec {
    /// Linear encoder and linear head, for closed-form comparisons.
    pub fn linear(embedding_dim: usize) -> Self {
        ArchSpec {
            embedding_dim,
            encoder_hidden: vec![],
            encoder_normalize: false,
            head_hidden: vec![],
            head_dropout: 0.0,
            ..ArchSpec::default()
        }
    }

    pub fn encoder(&self, obs_dim: usize) -> NetworkSpec {
        let mut s = NetworkSpec::mlp(obs_dim, &self.encoder_hidden, self.embedding_dim, self.encoder_activation);
        s.output_normalize = self.encoder_normalize;
        s
    }

    pub fn head(&self, input: usize, output: usize) -> NetworkSpec {
        NetworkSpec::mlp(input, &self.head_hidden, output, self.head_activation).with_dropout(self.head_dropout)
    }

    /// Head whose output feeds InfoNCE (normalized, per the projection
    /// convention).
    pub fn projection(&self, input: usize) -> NetworkSpec {
        self.head(input, self.embedding_dim).normalized()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub objective: Objective,
    pub steps: usize,
    pub batch_size: usize,
    /// Batch used by FD-e, which reconstructs full observations.
    pub fd_explicit_batch_size: usize,
    pub step_gap: usize,
    pub augmentation: AugSpec,
    /// Also augment observations for ID, BC and FD-i (Cont always augments,
    /// FD-e never does).
    pub augment_all: bool,
    pub seed: u64,
    pub arch: ArchSpec,
    pub optimizer: AdamWConfig,
}

impl PretrainConfig {
    pub fn new(objective: Objective, steps: usize, seed: u64) -> Self {
        PretrainConfig {
            objective,
            steps,
            batch_size: 256,
            fd_explicit_batch_size: 128,
            step_gap: 1,
            augmentation: AugSpec::default(),
            augment_all: false,
            seed,
            arch: ArchSpec::default(),
            optimizer: AdamWConfig::with_steps(steps),
        }
    }

    pub fn effective_batch(&self) -> usize {
        match self.objective {
            Objective::ForwardExplicit => self.fd_explicit_batch_size,
            _ => self.batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.step_gap == 0 {
            return Err(Error::InvalidSpec("pretraining needs steps >= 1 and step_gap >= 1".into()));
        }
        self.augmentation.validate()?;
        match self.objective {
            Objective::Contrastive if self.augmentation.is_identity() => {
                Err(Error::InvalidSpec("contrastive pretraining with identity augmentation has identical pairs".into()))
            }
            Objective::ForwardImplicit | Objective::Contrastive if self.batch_size < 2 => {
                Err(Error::InvalidSpec("contrastive objectives need batch_size >= 2".into()))
            }
            _ if self.effective_batch() == 0 => Err(Error::InvalidSpec("batch size must be positive".into())),
            _ => Ok(()),
        }
    }
}

fn maybe_augment(cfg: &PretrainConfig, x: Mat, rng: &mut Stream) -> Mat {
    if cfg.augment_all {
        cfg.augmentation.apply(&x, rng)
    } else {
        x
    }
}

fn hsplit(m: &Mat, at: usize) -> (Mat, Mat) {
    (m.columns(0, at).into_owned(), m.columns(at, m.ncols() - at).into_owned())
}

fn sample_rows(rng: &mut Stream, n: usize, batch: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.random_range(0..n)).collect()
}

/// Runs any pretraining objective.
pub fn pretrain(ds: &DatasetHandle, cfg: &PretrainConfig) -> Result<Encoder> {
    match cfg.objective {
        Objective::InverseDynamics => pretrain_id(ds, cfg),
        Objective::BehaviorCloning => pretrain_bc(ds, cfg),
        Objective::ForwardExplicit => pretrain_fd_explicit(ds, cfg),
        Objective::ForwardImplicit => pretrain_fd_implicit(ds, cfg),
        Objective::Contrastive => pretrain_contrastive(ds, cfg),
        Objective::Scratch => scratch_encoder(ds.obs_dim(), cfg),
        Objective::States => Err(Error::InvalidSpec("the states oracle needs the MDP; use states_oracle".into())),
    }
}

fn prepare(ds: &DatasetHandle, cfg: &PretrainConfig, expected: Objective) -> Result<TransitionBatch> {
    cfg.validate()?;
    if cfg.objective != expected {
        return Err(Error::InvalidSpec(format!("config is for {}, not {}", cfg.objective, expected)));
    }
    let batch = ds.learner().transitions(cfg.step_gap, Split::Train)?;
    if batch.is_empty() {
        return Err(Error::EmptyDataset("no training transitions".into()));
    }
    Ok(batch)
}

/// Shared loop: draws a minibatch of row indices per step, lets `step` do
/// forward, backward and updates, and records the loss.
fn train_loop(
    cfg: &PretrainConfig,
    n_rows: usize,
    mut step: impl FnMut(&[usize], &mut Stream) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut rng = rng::stream(cfg.seed, &["pretrain", cfg.objective.tag()]);
    let batch = cfg.effective_batch();
    let mut log = Vec::with_capacity(cfg.steps);
    for t in 0..cfg.steps {
        let idx = sample_rows(&mut rng, n_rows, batch);
        let loss = step(&idx, &mut rng)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("{} loss at step {t}", cfg.objective)));
        }
        log.push(loss);
    }
    Ok(log)
}

/// Networks an objective trains, encoder first, in the order
/// [`objective_loss`] expects.
pub fn objective_networks(cfg: &PretrainConfig, obs_dim: usize, action_dim: usize) -> Result<Vec<Network>> {
    let e = cfg.arch.embedding_dim;
    let ka = action_dim * cfg.step_gap;
    let specs: Vec<(NetworkSpec, &str)> = match cfg.objective {
        Objective::InverseDynamics => vec![(cfg.arch.head(2 * e, action_dim), "head")],
        Objective::BehaviorCloning => vec![(cfg.arch.head(e, action_dim), "head")],
        Objective::ForwardExplicit => vec![(cfg.arch.head(e + ka, obs_dim), "decoder")],
        Objective::ForwardImplicit => {
            let mut act = cfg.arch.encoder(ka);
            act.output_normalize = true;
            vec![(act, "action-encoder"), (cfg.arch.projection(2 * e), "f1"), (cfg.arch.projection(e), "f2")]
        }
        Objective::Contrastive => vec![(cfg.arch.projection(e), "projection")],
        Objective::Scratch | Objective::States => {
            return Err(Error::InvalidSpec(format!("{} has no pretraining loss", cfg.objective)))
        }
    };
    std::iter::once((cfg.arch.encoder(obs_dim), "encoder"))
        .chain(specs)
        .map(|(spec, label)| Network::new(spec, &mut rng::stream(cfg.seed, &["init", label])))
        .collect()
}

/// Minibatch loss of `cfg.objective` and the gradient for each network of
/// [`objective_networks`]. Augmentation and dropout draw from `rng`, so a
/// cloned stream replays the same loss surface.
pub fn objective_loss(
    cfg: &PretrainConfig,
    nets: &[Network],
    batch: &TransitionBatch,
    rng: &mut Stream,
) -> Result<(f64, Vec<Vec<Mat>>)> {
    let e = cfg.arch.embedding_dim;
    let b = batch.len();
    let enc = &nets[0];
    match cfg.objective {
        // min E‖a − f(φ(o), φ(o'))‖² with o' the κ-step successor
        Objective::InverseDynamics => {
            let head = &nets[1];
            let x = maybe_augment(cfg, vcat(&batch.o, &batch.o_next), rng);
            let (z, zc) = enc.forward(&x, Mode::Train, rng)?;
            let pair = hcat(&z.rows(0, b).into_owned(), &z.rows(b, b).into_owned());
            let (pred, hc) = head.forward(&pair, Mode::Train, rng)?;
            let (loss, dpred) = mse_loss(&pred, &batch.a)?;
            let (hg, dpair) = head.backward(&hc, &dpred);
            let (dz0, dz1) = hsplit(&dpair, e);
            let (eg, _) = enc.backward(&zc, &vcat(&dz0, &dz1));
            Ok((loss, vec![eg, hg]))
        }
        // min E‖a − π(φ(o))‖²
        Objective::BehaviorCloning => {
            let head = &nets[1];
            let o = maybe_augment(cfg, batch.o.clone(), rng);
            let (z, zc) = enc.forward(&o, Mode::Train, rng)?;
            let (pred, hc) = head.forward(&z, Mode::Train, rng)?;
            let (loss, dpred) = mse_loss(&pred, &batch.a)?;
            let (hg, dz) = head.backward(&hc, &dpred);
            let (eg, _) = enc.backward(&zc, &dz);
            Ok((loss, vec![eg, hg]))
        }
        // min E‖o' − d(φ(o), a_{t:t+κ})‖², never augmented
        Objective::ForwardExplicit => {
            let dec = &nets[1];
            let (z, zc) = enc.forward(&batch.o, Mode::Train, rng)?;
            let (pred, dc) = dec.forward(&hcat(&z, &batch.a_seq), Mode::Train, rng)?;
            let (loss, dpred) = mse_loss(&pred, &batch.o_next)?;
            let (dg, dinput) = dec.backward(&dc, &dpred);
            let (eg, _) = enc.backward(&zc, &dinput.columns(0, e).into_owned());
            Ok((loss, vec![eg, dg]))
        }
        // InfoNCE between f₁(φ(o), φ_a(a_{t:t+κ})) and f₂(φ(o'))
        Objective::ForwardImplicit => {
            let (act, f1, f2) = (&nets[1], &nets[2], &nets[3]);
            let x = maybe_augment(cfg, vcat(&batch.o, &batch.o_next), rng);
            let (z, zc) = enc.forward(&x, Mode::Train, rng)?;
            let (za, ac) = act.forward(&batch.a_seq, Mode::Train, rng)?;
            let (anchor, c1) = f1.forward(&hcat(&z.rows(0, b).into_owned(), &za), Mode::Train, rng)?;
            let (positive, c2) = f2.forward(&z.rows(b, b).into_owned(), Mode::Train, rng)?;
            let (loss, d_anchor, d_pos) = infonce_loss(&anchor, &positive)?;
            let (g1, d_in1) = f1.backward(&c1, &d_anchor);
            let (g2, dz1) = f2.backward(&c2, &d_pos);
            let (dz0, dza) = hsplit(&d_in1, e);
            let (ga, _) = act.backward(&ac, &dza);
            let (ge, _) = enc.backward(&zc, &vcat(&dz0, &dz1));
            Ok((loss, vec![ge, ga, g1, g2]))
        }
        // SimCLR-style InfoNCE between two augmented views of o
        Objective::Contrastive => {
            let proj = &nets[1];
            let aug = cfg.augmentation;
            let x = vcat(&aug.apply(&batch.o, rng), &aug.apply(&batch.o, rng));
            let (z, zc) = enc.forward(&x, Mode::Train, rng)?;
            let (p, pc) = proj.forward(&z, Mode::Train, rng)?;
            let (loss, da, dp) = infonce_loss(&p.rows(0, b).into_owned(), &p.rows(b, b).into_owned())?;
            let (pg, dz) = proj.backward(&pc, &vcat(&da, &dp));
            let (eg, _) = enc.backward(&zc, &dz);
            Ok((loss, vec![eg, pg]))
        }
        Objective::Scratch | Objective::States => {
            Err(Error::InvalidSpec(format!("{} has no pretraining loss", cfg.objective)))
        }
    }
}

/// Validation loss of the regression objectives; InfoNCE objectives have none.
fn val_loss(ds: &DatasetHandle, cfg: &PretrainConfig, nets: &[Network]) -> Result<Option<f64>> {
    let val = ds.learner().transitions(cfg.step_gap, Split::Val)?;
    if val.is_empty() {
        return Ok(None);
    }
    let (enc, head) = (&nets[0], &nets[1]);
    let loss = match cfg.objective {
        Objective::InverseDynamics => {
            mse_loss(&head.predict(&hcat(&enc.predict(&val.o)?, &enc.predict(&val.o_next)?))?, &val.a)?.0
        }
        Objective::BehaviorCloning => mse_loss(&head.predict(&enc.predict(&val.o)?)?, &val.a)?.0,
        Objective::ForwardExplicit => {
            mse_loss(&head.predict(&hcat(&enc.predict(&val.o)?, &val.a_seq))?, &val.o_next)?.0
        }
        _ => return Ok(None),
    };
    Ok(Some(loss))
}

fn train_objective(ds: &DatasetHandle, cfg: &PretrainConfig, expected: Objective) -> Result<Encoder> {
    let data = prepare(ds, cfg, expected)?;
    let mut nets = objective_networks(cfg, ds.obs_dim(), ds.action_dim())?;
    let mut opts: Vec<AdamW> =
        nets.iter().map(|n| AdamW::new(n, AdamWConfig { total_steps: cfg.steps, ..cfg.optimizer })).collect();
    let log = train_loop(cfg, data.len(), |idx, rng| {
        let (loss, grads) = objective_loss(cfg, &nets, &data.rows(idx), rng)?;
        for ((net, opt), g) in nets.iter_mut().zip(&mut opts).zip(&grads) {
            opt.update(net, g);
        }
        Ok(loss)
    })?;
    let val = val_loss(ds, cfg, &nets)?;
    let enc = nets.swap_remove(0);
    Ok(Encoder::trained(enc, expected, log, val))
}

pub fn pretrain_id(ds: &DatasetHandle, cfg: &PretrainConfig) -> Result<Encoder> {
    train_objective(ds, cfg, Objective::InverseDynamics)
}

pub fn pretrain_bc(ds: &DatasetHandle, cfg: &PretrainConfig) -> Result<Encoder> {
    train_objective(ds, cfg, Objective::BehaviorCloning)
}

pub fn pretrain_fd_explicit(ds: &DatasetHandle, cfg: &PretrainConfig) -> Result<Encoder> {
    train_objective(ds, cfg, Objective::ForwardExplicit)
}

pub fn pretrain_fd_implicit(ds: &DatasetHandle, cfg: &PretrainConfig) -> Result<Encoder> {
    train_objective(ds, cfg, Objective::ForwardImplicit)
}

pub fn pretrain_contrastive(ds: &DatasetHandle, cfg: &PretrainConfig) -> Result<Encoder> {
    train_objective(ds, cfg, Objective::Contrastive)
}

/// Untrained encoder for the from-scratch baseline; finetuning trains it
/// jointly with the policy head.
pub fn scratch_encoder(obs_dim: usize, cfg: &PretrainConfig) -> Result<Encoder> {
    let net = Network::new(cfg.arch.encoder(obs_dim), &mut rng::stream(cfg.seed, &["init", "encoder"]))?;
    Ok(Encoder::trained(net, Objective::Scratch, Vec::new(), None))
}

/// The ground-truth encoder `φ`, never trained.
pub fn states_oracle(mdp: &LatentMdp) -> Encoder {
    Encoder::states(mdp.lift.clone())
}
