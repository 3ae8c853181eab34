//! Policy heads trained on frozen features, and rollout evaluation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetHandle, Split, TransitionBatch};
use crate::env::{success_rate, Actor, Context, EvaluationSpec, LatentMdp};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::nn::{mse_loss, AdamW, AdamWConfig, Mode, Network};
use crate::pretrain::{ArchSpec, AugSpec, Encoder, Objective};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Train the encoder together with the head. Only valid for Scratch.
    pub joint: bool,
    /// Observation augmentation, used on the joint path only.
    pub augmentation: AugSpec,
    pub val_every: usize,
    pub arch: ArchSpec,
    pub optimizer: AdamWConfig,
}

impl FinetuneConfig {
    pub fn new(steps: usize, seed: u64) -> Self {
        FinetuneConfig {
            steps,
            batch_size: 256,
            seed,
            joint: false,
            augmentation: AugSpec::default(),
            val_every: 100,
            arch: ArchSpec::default(),
            optimizer: AdamWConfig::with_steps(steps),
        }
    }

    /// Joint training for Scratch, frozen features for everything else.
    pub fn for_objective(objective: Objective, steps: usize, seed: u64) -> Self {
        FinetuneConfig { joint: objective == Objective::Scratch, ..FinetuneConfig::new(steps, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.val_every == 0 {
            return Err(Error::InvalidSpec("finetuning needs batch_size >= 1 and val_every >= 1".into()));
        }
        self.augmentation.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FinetuneLog {
    pub train: Vec<f64>,
    /// `(step, loss)`, every `val_every` steps and after the last step.
    pub val: Vec<(usize, f64)>,
}

/// `π̂(φ̂(o))`: a trained head on top of an encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyHead {
    net: Network,
    encoder: Encoder,
    log: FinetuneLog,
}

impl PolicyHead {
    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn log(&self) -> &FinetuneLog {
        &self.log
    }

    pub fn predict(&self, obs: &Mat) -> Result<Mat> {
        self.net.predict(&self.encoder.embed(obs)?)
    }
}

impl Actor for PolicyHead {
    fn act(&self, obs: &Mat, _latents: &Mat, _ctx: &Context, _rngs: &mut [Stream]) -> Result<Mat> {
        self.predict(obs)
    }
}

fn val_loss(net: &Network, encoder: &Encoder, val: &TransitionBatch) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    Ok(Some(mse_loss(&net.predict(&encoder.embed(&val.o)?)?, &val.a)?.0))
}

/// MSE of the head on precomputed features, with its parameter gradients.
pub fn head_loss(head: &Network, z: &Mat, target: &Mat, rng: &mut Stream) -> Result<(f64, Vec<Mat>)> {
    let (pred, hc) = head.forward(z, Mode::Train, rng)?;
    let (loss, dpred) = mse_loss(&pred, target)?;
    Ok((loss, head.backward(&hc, &dpred).0))
}

/// Scratch path: augment, encode, predict. Returns the loss and the encoder
/// and head gradients.
pub fn joint_loss(
    encoder: &Network,
    head: &Network,
    obs: &Mat,
    target: &Mat,
    aug: &AugSpec,
    rng: &mut Stream,
) -> Result<(f64, Vec<Mat>, Vec<Mat>)> {
    let o = aug.apply(obs, rng);
    let (z, zc) = encoder.forward(&o, Mode::Train, rng)?;
    let (pred, hc) = head.forward(&z, Mode::Train, rng)?;
    let (loss, dpred) = mse_loss(&pred, target)?;
    let (g, dz) = head.backward(&hc, &dpred);
    let (eg, _) = encoder.backward(&zc, &dz);
    Ok((loss, eg, g))
}

/// Fits a fresh head by MSE to the expert actions of `ds` (train split).
/// The encoder is copied and left untouched unless `cfg.joint` is set for a
/// Scratch encoder.
pub fn finetune(encoder: &Encoder, ds: &DatasetHandle, cfg: &FinetuneConfig) -> Result<PolicyHead> {
    cfg.validate()?;
    if encoder.input_dim() != ds.obs_dim() {
        return Err(Error::Shape(format!(
            "encoder expects {} inputs, observations have {}",
            encoder.input_dim(),
            ds.obs_dim()
        )));
    }
    if cfg.joint && encoder.objective() != Objective::Scratch {
        return Err(Error::InvalidSpec(format!(
            "{} encoder is frozen; joint finetuning is for Scratch only",
            encoder.objective()
        )));
    }
    let train = ds.learner().transitions(1, Split::Train)?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("no finetuning transitions".into()));
    }
    let val = ds.learner().transitions(1, Split::Val)?;

    let mut encoder = encoder.clone();
    let spec = cfg.arch.head(encoder.embedding_dim(), ds.action_dim());
    let mut net = Network::new(spec, &mut rng::stream(cfg.seed, &["init", "policy-head"]))?;
    let opt_cfg = AdamWConfig { total_steps: cfg.steps, ..cfg.optimizer };
    let mut opt = AdamW::new(&net, opt_cfg);
    let mut enc_opt = if cfg.joint { Some(AdamW::new(encoder.scratch_network_mut()?, opt_cfg)) } else { None };
    // frozen features never change, so embed once
    let frozen = if cfg.joint { None } else { Some(encoder.embed(&train.o)?) };

    let mut rng = rng::stream(cfg.seed, &["finetune"]);
    let mut log = FinetuneLog::default();
    for t in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..train.len())).collect();
        let target = train.a.select_rows(&idx);
        let loss = match (&frozen, enc_opt.as_mut()) {
            (Some(z), _) => {
                let (loss, g) = head_loss(&net, &z.select_rows(&idx), &target, &mut rng)?;
                opt.update(&mut net, &g);
                loss
            }
            (None, Some(eopt)) => {
                let enc_net = encoder.scratch_network_mut()?;
                let o = train.o.select_rows(&idx);
                let (loss, eg, g) = joint_loss(enc_net, &net, &o, &target, &cfg.augmentation, &mut rng)?;
                opt.update(&mut net, &g);
                eopt.update(enc_net, &eg);
                loss
            }
            (None, None) => unreachable!("joint path always has an encoder optimizer"),
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("finetune loss at step {t}")));
        }
        log.train.push(loss);
        let done = t + 1;
        if done % cfg.val_every == 0 || done == cfg.steps {
            if let Some(v) = val_loss(&net, &encoder, &val)? {
                log.val.push((done, v));
            }
        }
    }
    Ok(PolicyHead { net, encoder, log })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub outcomes: Vec<bool>,
    pub success_rate: f64,
    /// Binomial standard error `sqrt(p̂(1 − p̂)/n)`.
    pub std_error: f64,
}

impl Evaluation {
    pub fn from_outcomes(outcomes: Vec<bool>) -> Self {
        let n = outcomes.len().max(1) as f64;
        let p = outcomes.iter().filter(|&&s| s).count() as f64 / n;
        Evaluation { std_error: (p * (1.0 - p) / n).sqrt(), success_rate: p, outcomes }
    }
}

/// Runs `eval.episodes` fresh episodes of `actor` in context `ctx`, clipping
/// actions to the expert's bound.
pub fn evaluate(
    mdp: &LatentMdp,
    ctx: &Context,
    actor: &dyn Actor,
    eval: &EvaluationSpec,
    seed: u64,
    action_clip: f64,
) -> Result<Evaluation> {
    ctx.validate(mdp.latent_dim(), mdp.action_dim(), mdp.arena_radius)?;
    Ok(Evaluation::from_outcomes(success_rate(mdp, actor, ctx, eval, seed, action_clip)?))
}

/// Final train MSE and last recorded val MSE (falling back to the final train
/// MSE when the dataset is too small to hold out a val split).
pub fn action_losses(head: &PolicyHead) -> (f64, f64) {
    let train = head.log.train.last().copied().unwrap_or(f64::NAN);
    let val = head.log.val.last().map(|&(_, v)| v).unwrap_or(train);
    (train, val)
}

#[cfg(test)]
mod tests;
