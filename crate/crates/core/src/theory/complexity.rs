//! Forward models must decode `o' = (s', sin ωs')`, which gets harder with
//! `ω`; inverse models only need the coordinate projection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::median;
use super::report::{Bound, Experiment, TheoryReport};
use crate::data::generate_pretraining;
use crate::env::{make_mdp, ContextSpec, ExpertPolicy, LiftSpec, MdpSpec};
use crate::error::{Error, Result};
use crate::pretrain::{pretrain, ArchSpec, Objective, PretrainConfig};
use crate::probes::{probe_state, ProbeConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdComplexityConfig {
    pub omegas: Vec<f64>,
    pub latent_dim: usize,
    pub n_trajectories: usize,
    pub pretrain_steps: usize,
    pub batch_size: usize,
    pub fd_explicit_batch_size: usize,
    pub arch: ArchSpec,
    pub probe: ProbeConfig,
    pub seeds: Vec<u64>,
    pub min_fd_growth: f64,
    pub max_id_growth: f64,
    pub min_ratio: f64,
}

impl Default for FdComplexityConfig {
    fn default() -> Self {
        FdComplexityConfig {
            omegas: vec![1.0, 4.0, 16.0],
            latent_dim: 2,
            n_trajectories: 100,
            pretrain_steps: 1000,
            batch_size: 256,
            fd_explicit_batch_size: 128,
            arch: ArchSpec::default(),
            probe: ProbeConfig::new(1000, 0),
            seeds: (0..3).collect(),
            min_fd_growth: 2.0,
            max_id_growth: 1.5,
            min_ratio: 2.0,
        }
    }
}

struct Cell {
    fd_probe: f64,
    id_probe: f64,
    fd_loss: f64,
}

fn run_cell(cfg: &FdComplexityConfig, omega: f64, seed: u64) -> Result<Cell> {
    let l = cfg.latent_dim;
    let mdp = make_mdp(&MdpSpec::new(l, 2 * l, l, LiftSpec::GraphManifold { omega }), 0)?;
    let spec = ContextSpec::Goal { radius: mdp.init_radius, inferrable: false };
    let ds = generate_pretraining(&mdp, &ExpertPolicy::pd_to_goal(), &spec, cfg.n_trajectories, seed)?;
    let config = |objective| {
        let mut pc = PretrainConfig::new(objective, cfg.pretrain_steps, seed);
        pc.arch = cfg.arch.clone();
        pc.batch_size = cfg.batch_size;
        pc.fd_explicit_batch_size = cfg.fd_explicit_batch_size;
        pc
    };
    let fd = pretrain(&ds, &config(Objective::ForwardExplicit))?;
    let id = pretrain(&ds, &config(Objective::InverseDynamics))?;
    let probe = ProbeConfig { seed, ..cfg.probe.clone() };
    Ok(Cell {
        fd_probe: probe_state(&fd, &ds, &probe)?.val_loss,
        id_probe: probe_state(&id, &ds, &probe)?.val_loss,
        fd_loss: fd.val_loss().unwrap_or(f64::NAN),
    })
}

fn omega_label(omega: f64) -> String {
    format!("{omega}").replace('.', "p")
}

pub fn verify_fd_complexity(cfg: &FdComplexityConfig) -> Result<TheoryReport> {
    if cfg.omegas.len() < 2 {
        return Err(Error::InvalidSpec("need at least two frequencies".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..cfg.omegas.len()).flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s))).collect();
    let cells: Vec<Cell> = jobs.par_iter().map(|&(i, s)| run_cell(cfg, cfg.omegas[i], s)).collect::<Result<_>>()?;

    let mut rep = TheoryReport::new(Experiment::FdComplexity);
    let mut fd = Vec::new();
    let mut id = Vec::new();
    for (i, &omega) in cfg.omegas.iter().enumerate() {
        let mine: Vec<&Cell> = jobs.iter().zip(&cells).filter(|((j, _), _)| *j == i).map(|(_, c)| c).collect();
        let f = median(&mine.iter().map(|c| c.fd_probe).collect::<Vec<_>>());
        let d = median(&mine.iter().map(|c| c.id_probe).collect::<Vec<_>>());
        let w = omega_label(omega);
        rep.metric(format!("fd_probe_w{w}"), f);
        rep.metric(format!("id_probe_w{w}"), d);
        rep.metric(format!("fd_recon_w{w}"), median(&mine.iter().map(|c| c.fd_loss).collect::<Vec<_>>()));
        fd.push(f);
        id.push(d);
    }
    let last = cfg.omegas.len() - 1;
    rep.metric("fd_growth", fd[last] / fd[0]);
    rep.metric("id_growth", id[last] / id[0]);
    rep.metric("ratio_at_max_omega", fd[last] / id[last]);
    rep.metric("ratio_at_min_omega", fd[0] / id[0]);
    rep.threshold("min_fd_growth", cfg.min_fd_growth);
    rep.threshold("max_id_growth", cfg.max_id_growth);
    rep.threshold("min_ratio", cfg.min_ratio);
    rep.check("fd_growth", Bound::AtLeast, "min_fd_growth");
    rep.check("id_growth", Bound::AtMost, "max_id_growth");
    rep.check("ratio_at_max_omega", Bound::AtLeast, "min_ratio");
    Ok(rep.finish())
}
