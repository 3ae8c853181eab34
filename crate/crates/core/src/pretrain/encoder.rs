use crate::env::ObservationLift;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::nn::{Checkpoint, Network};

use super::Objective;

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderKind {
    Learned(Network),
    /// The ground-truth inverse lift.
    States(ObservationLift),
}

/// A representation `φ̂: O → ℝ^e`. Once returned by a pretraining routine it
/// only exposes forward evaluation; the from-scratch baseline is the single
/// exception, trained in place by finetuning.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    kind: EncoderKind,
    objective: Objective,
    train_log: Vec<f64>,
    val_loss: Option<f64>,
}

impl Encoder {
    pub(crate) fn trained(net: Network, objective: Objective, train_log: Vec<f64>, val_loss: Option<f64>) -> Self {
        Encoder { kind: EncoderKind::Learned(net), objective, train_log, val_loss }
    }

    pub(crate) fn states(lift: ObservationLift) -> Self {
        Encoder { kind: EncoderKind::States(lift), objective: Objective::States, train_log: Vec::new(), val_loss: None }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let objective = Objective::from_tag(&ck.tag)?;
        if objective == Objective::States {
            return Err(Error::InvalidSpec("the states oracle has no checkpoint".into()));
        }
        Ok(Encoder::trained(ck.network, objective, Vec::new(), None))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        match &self.kind {
            EncoderKind::Learned(net) => Ok(Checkpoint {
                tag: self.objective.tag().to_string(),
                step: self.train_log.len() as u64,
                network: net.clone(),
            }),
            EncoderKind::States(_) => Err(Error::InvalidSpec("the states oracle has no checkpoint".into())),
        }
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn train_log(&self) -> &[f64] {
        &self.train_log
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.train_log.last().copied()
    }

    /// Mean training loss over the last `window` steps.
    pub fn plateau(&self, window: usize) -> Option<f64> {
        let n = self.train_log.len();
        if n == 0 {
            return None;
        }
        let tail = &self.train_log[n.saturating_sub(window)..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }

    pub fn val_loss(&self) -> Option<f64> {
        self.val_loss
    }

    pub fn kind(&self) -> &EncoderKind {
        &self.kind
    }

    pub fn input_dim(&self) -> usize {
        match &self.kind {
            EncoderKind::Learned(n) => n.input_dim(),
            EncoderKind::States(l) => l.obs_dim(),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        match &self.kind {
            EncoderKind::Learned(n) => n.output_dim(),
            EncoderKind::States(l) => l.latent_dim(),
        }
    }

    /// Embeds a batch of observations (rows).
    pub fn embed(&self, obs: &Mat) -> Result<Mat> {
        match &self.kind {
            EncoderKind::Learned(n) => n.predict(obs),
            EncoderKind::States(l) => l.encode_rows(obs),
        }
    }

    /// Mutable network access for joint training of the from-scratch
    /// baseline only.
    pub(crate) fn scratch_network_mut(&mut self) -> Result<&mut Network> {
        match (&mut self.kind, self.objective) {
            (EncoderKind::Learned(n), Objective::Scratch) => Ok(n),
            _ => Err(Error::InvalidSpec(format!("{} encoder is frozen", self.objective))),
        }
    }

    pub fn network(&self) -> Option<&Network> {
        match &self.kind {
            EncoderKind::Learned(n) => Some(n),
            EncoderKind::States(_) => None,
        }
    }
}
