//! Rollout-free measures of representation quality: probes to the true
//! latent or to another representation, and linear subspace alignment.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetHandle, Split};
use crate::env::LatentMdp;
use crate::error::{Error, Result};
use crate::linalg::{fit_affine, r_squared, r_squared_per_column, LinearFit, Mat};
use crate::nn::{mse_loss, Activation, AdamW, AdamWConfig, Mode, Network, NetworkSpec};
use crate::pretrain::{Encoder, Objective};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl ProbeConfig {
    pub fn new(steps: usize, seed: u64) -> Self {
        ProbeConfig {
            steps,
            batch_size: 256,
            hidden: vec![256, 256],
            activation: Activation::Gelu,
            seed,
            optimizer: AdamWConfig::with_steps(steps),
        }
    }
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig::new(2000, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeTarget {
    State,
    Action,
    Representation(Objective),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub target: ProbeTarget,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Divisor applied by [`ProbeResult::normalized`]; 1 until set.
    pub normalizer: f64,
    /// Per-coordinate R² on the val split (state probes only).
    pub r_squared: Option<Vec<f64>>,
}

impl ProbeResult {
    pub fn normalized(&self) -> f64 {
        self.val_loss / self.normalizer
    }

    pub fn with_normalizer(self, normalizer: f64) -> Result<Self> {
        if !(normalizer.is_finite() && normalizer > 0.0) {
            return Err(Error::InvalidSpec(format!("normalizer must be positive, got {normalizer}")));
        }
        Ok(ProbeResult { normalizer, ..self })
    }

    pub fn mean_r_squared(&self) -> Option<f64> {
        self.r_squared.as_ref().map(|r| r.iter().sum::<f64>() / r.len() as f64)
    }
}

/// Affine least-squares map plus an MLP fitted to its residual. The MLP's
/// output layer starts at zero, so targets that are exactly affine in the
/// input are fitted exactly.
struct Probe {
    linear: LinearFit,
    net: Network,
}

impl Probe {
    fn predict(&self, x: &Mat) -> Result<Mat> {
        Ok(self.linear.predict(x) + self.net.predict(x)?)
    }
}

fn fit_probe(x: &Mat, y: &Mat, cfg: &ProbeConfig, label: &str) -> Result<(Probe, f64)> {
    if x.nrows() == 0 || x.nrows() != y.nrows() {
        return Err(Error::EmptyDataset(format!(
            "probe needs matching non-empty inputs, got {} and {}",
            x.nrows(),
            y.nrows()
        )));
    }
    let linear = fit_affine(x, y);
    let residual = y - linear.predict(x);
    let spec = NetworkSpec::mlp(x.ncols(), &cfg.hidden, y.ncols(), cfg.activation);
    let mut net = Network::new(spec, &mut rng::stream(cfg.seed, &["init", "probe", label]))?;
    let last = net.params.len() - 2;
    net.params[last].fill(0.0);
    net.params[last + 1].fill(0.0);
    let mut opt = AdamW::new(&net, AdamWConfig { total_steps: cfg.steps, ..cfg.optimizer });
    let mut rng = rng::stream(cfg.seed, &["probe", label]);
    for t in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..x.nrows())).collect();
        let (pred, cache) = net.forward(&x.select_rows(&idx), Mode::Train, &mut rng)?;
        let (loss, dpred) = mse_loss(&pred, &residual.select_rows(&idx))?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("probe loss at step {t}")));
        }
        let (g, _) = net.backward(&cache, &dpred);
        opt.update(&mut net, &g);
    }
    let probe = Probe { linear, net };
    let train_loss = mse_loss(&probe.predict(x)?, y)?.0;
    Ok((probe, train_loss))
}

fn require_val(ds: &DatasetHandle) -> Result<()> {
    if ds.val_indices().is_empty() {
        return Err(Error::EmptyDataset("probes need a non-empty val split (at least 10 trajectories)".into()));
    }
    Ok(())
}

/// MLP from frozen embeddings to the true latent state, trained on the train
/// split of a pretraining dataset and scored on its val split.
pub fn probe_state(encoder: &Encoder, ds: &DatasetHandle, cfg: &ProbeConfig) -> Result<ProbeResult> {
    require_val(ds)?;
    let learner = ds.learner();
    let privileged = ds.privileged();
    let x_train = encoder.embed(&learner.observation_rows(Split::Train))?;
    let y_train = privileged.latent_rows(Split::Train);
    let x_val = encoder.embed(&learner.observation_rows(Split::Val))?;
    let y_val = privileged.latent_rows(Split::Val);
    let (probe, train_loss) = fit_probe(&x_train, &y_train, cfg, "state")?;
    let pred = probe.predict(&x_val)?;
    Ok(ProbeResult {
        target: ProbeTarget::State,
        train_loss,
        val_loss: mse_loss(&pred, &y_val)?.0,
        normalizer: 1.0,
        r_squared: Some(r_squared_per_column(&pred, &y_val)),
    })
}

/// MLP from `src` embeddings to `tgt` embeddings of the same observations.
pub fn probe_cross(src: &Encoder, tgt: &Encoder, ds: &DatasetHandle, cfg: &ProbeConfig) -> Result<ProbeResult> {
    require_val(ds)?;
    let learner = ds.learner();
    let o_train = learner.observation_rows(Split::Train);
    let o_val = learner.observation_rows(Split::Val);
    let label = format!("{}->{}", src.objective(), tgt.objective());
    let (probe, train_loss) = fit_probe(&src.embed(&o_train)?, &tgt.embed(&o_train)?, cfg, &label)?;
    let pred = probe.predict(&src.embed(&o_val)?)?;
    Ok(ProbeResult {
        target: ProbeTarget::Representation(tgt.objective()),
        train_loss,
        val_loss: mse_loss(&pred, &tgt.embed(&o_val)?)?.0,
        normalizer: 1.0,
        r_squared: None,
    })
}

/// Cross-prediction errors for every ordered pair of encoders; row = source,
/// column = target.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossGrid {
    pub tags: Vec<Objective>,
    pub errors: Mat,
}

impl CrossGrid {
    /// Errors divided by the grid mean.
    pub fn normalized(&self) -> Mat {
        let mean = self.errors.mean();
        if mean > 0.0 {
            &self.errors / mean
        } else {
            self.errors.clone()
        }
    }

    pub fn to_csv(&self) -> String {
        let norm = self.normalized();
        let mut out = String::from("source");
        for t in &self.tags {
            write!(out, ",{t}").unwrap();
        }
        out.push('\n');
        for (i, t) in self.tags.iter().enumerate() {
            out.push_str(t.tag());
            for j in 0..self.tags.len() {
                write!(out, ",{:.6e}", norm[(i, j)]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn cross_grid(encoders: &[Encoder], ds: &DatasetHandle, cfg: &ProbeConfig) -> Result<CrossGrid> {
    let n = encoders.len();
    let mut errors = Mat::zeros(n, n);
    for (i, src) in encoders.iter().enumerate() {
        for (j, tgt) in encoders.iter().enumerate() {
            errors[(i, j)] = probe_cross(src, tgt, ds, cfg)?.val_loss;
        }
    }
    Ok(CrossGrid { tags: encoders.iter().map(Encoder::objective).collect(), errors })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Linear-probe R² from embeddings to latents, clamped to `[0, 1]`.
    pub score: f64,
    /// The centered embeddings span fewer dimensions than the latent.
    pub degenerate: bool,
}

/// Linear-probe R² of `latents` on `embeddings` (rows paired).
pub fn alignment_of(embeddings: &Mat, latents: &Mat) -> Alignment {
    let fit = fit_affine(embeddings, latents);
    let score = if fit.rank == 0 { 0.0 } else { r_squared(&fit.predict(embeddings), latents).clamp(0.0, 1.0) };
    Alignment { score, degenerate: fit.rank < latents.ncols() }
}

/// Alignment of `encoder` with the true latent on `n_samples` observations
/// drawn from the initial-state ball.
pub fn subspace_alignment(encoder: &Encoder, mdp: &LatentMdp, n_samples: usize, seed: u64) -> Result<Alignment> {
    let l = mdp.latent_dim();
    if n_samples < 10 * l {
        return Err(Error::InvalidSpec(format!("alignment needs at least {} samples, got {n_samples}", 10 * l)));
    }
    let mut r = rng::stream(seed, &["alignment"]);
    let mut latents = Mat::zeros(n_samples, l);
    for i in 0..n_samples {
        let s = rng::ball(&mut r, l, mdp.init_radius);
        latents.row_mut(i).copy_from_slice(&s);
    }
    let obs = mdp.lift.decode_rows(&latents);
    Ok(alignment_of(&encoder.embed(&obs)?, &latents))
}

#[cfg(test)]
mod tests;
