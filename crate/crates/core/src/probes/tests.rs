use super::*;
use crate::data::generate_pretraining;
use crate::env::{make_mdp, ContextSpec, ExpertPolicy, LiftSpec, MdpSpec};
use crate::linalg::gaussian;
use crate::pretrain::{pretrain, scratch_encoder, states_oracle, ArchSpec, PretrainConfig};

fn world() -> (LatentMdp, DatasetHandle) {
    let mdp = make_mdp(&MdpSpec::new(2, 8, 2, LiftSpec::LinearOrthonormal), 0).unwrap();
    let spec = ContextSpec::Goal { radius: 0.8, inferrable: false };
    let ds = generate_pretraining(&mdp, &ExpertPolicy::pd_to_goal(), &spec, 20, 1).unwrap();
    (mdp, ds)
}

fn small_probe() -> ProbeConfig {
    ProbeConfig { hidden: vec![32, 32], batch_size: 64, ..ProbeConfig::new(200, 0) }
}

fn small_arch(e: usize) -> ArchSpec {
    ArchSpec { embedding_dim: e, encoder_hidden: vec![32], head_hidden: vec![32], ..ArchSpec::default() }
}

fn zero_encoder(obs_dim: usize) -> Encoder {
    let spec = NetworkSpec::mlp(obs_dim, &[16], 8, Activation::Tanh);
    let params = spec.param_shapes().into_iter().map(|(r, c)| Mat::zeros(r, c)).collect();
    Encoder::trained(Network::from_params(spec, params).unwrap(), Objective::Scratch, vec![], None)
}

#[test]
fn states_oracle_probes_exactly() {
    let (mdp, ds) = world();
    let oracle = states_oracle(&mdp);
    let r = probe_state(&oracle, &ds, &small_probe()).unwrap();
    assert!(r.val_loss < 1e-6, "{}", r.val_loss);
    assert!(r.r_squared.as_ref().unwrap().iter().all(|&v| v > 1.0 - 1e-6), "{r:?}");
    let c = probe_cross(&oracle, &oracle, &ds, &small_probe()).unwrap();
    assert!(c.val_loss < 1e-8, "{}", c.val_loss);
}

#[test]
fn self_prediction_is_near_exact() {
    let (_, ds) = world();
    let cfg = PretrainConfig {
        arch: small_arch(16),
        batch_size: 64,
        ..PretrainConfig::new(Objective::InverseDynamics, 50, 0)
    };
    let id = pretrain(&ds, &cfg).unwrap();
    let r = probe_cross(&id, &id, &ds, &small_probe()).unwrap();
    assert!(r.val_loss < 1e-4, "{}", r.val_loss);
    assert_eq!(r.target, ProbeTarget::Representation(Objective::InverseDynamics));
}

#[test]
fn probes_are_deterministic() {
    let (mdp, ds) = world();
    let e =
        scratch_encoder(8, &PretrainConfig { arch: small_arch(8), ..PretrainConfig::new(Objective::Scratch, 1, 4) })
            .unwrap();
    let a = probe_state(&e, &ds, &small_probe()).unwrap();
    let b = probe_state(&e, &ds, &small_probe()).unwrap();
    assert_eq!(a, b);
    assert!(a.train_loss >= 0.0 && a.val_loss >= 0.0);
    assert!(a.r_squared.unwrap().iter().all(|&v| v <= 1.0));
    let _ = mdp;
}

#[test]
fn probes_need_a_val_split() {
    let (mdp, _) = world();
    let spec = ContextSpec::Goal { radius: 0.8, inferrable: false };
    let tiny = generate_pretraining(&mdp, &ExpertPolicy::pd_to_goal(), &spec, 5, 1).unwrap();
    assert!(matches!(probe_state(&states_oracle(&mdp), &tiny, &small_probe()), Err(Error::EmptyDataset(_))));
}

#[test]
fn normalizer_divides_val_loss() {
    let r =
        ProbeResult { target: ProbeTarget::State, train_loss: 1.0, val_loss: 3.0, normalizer: 1.0, r_squared: None };
    assert_eq!(r.clone().with_normalizer(1.5).unwrap().normalized(), 2.0);
    assert!(r.with_normalizer(0.0).is_err());
}

#[test]
fn cross_grid_is_normalized_by_its_mean() {
    let (mdp, ds) = world();
    let scratch =
        scratch_encoder(8, &PretrainConfig { arch: small_arch(8), ..PretrainConfig::new(Objective::Scratch, 1, 0) })
            .unwrap();
    let grid = cross_grid(&[states_oracle(&mdp), scratch], &ds, &small_probe()).unwrap();
    assert_eq!(grid.errors.shape(), (2, 2));
    assert!((grid.normalized().mean() - 1.0).abs() < 1e-12);
    let csv = grid.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "source,States,Scratch");
    assert!(lines[1].starts_with("States,") && lines[2].starts_with("Scratch,"));
}

#[test]
fn states_oracle_is_perfectly_aligned() {
    let (mdp, _) = world();
    let a = subspace_alignment(&states_oracle(&mdp), &mdp, 200, 0).unwrap();
    assert!((a.score - 1.0).abs() < 1e-12);
    assert!(!a.degenerate);
}

#[test]
fn constant_encoder_is_degenerate() {
    let (mdp, _) = world();
    let a = subspace_alignment(&zero_encoder(8), &mdp, 200, 0).unwrap();
    assert_eq!(a.score, 0.0);
    assert!(a.degenerate);
}

#[test]
fn alignment_needs_enough_samples() {
    let (mdp, _) = world();
    assert!(subspace_alignment(&states_oracle(&mdp), &mdp, 19, 0).is_err());
}

#[test]
fn alignment_is_affine_invariant() {
    let (mdp, ds) = world();
    let cfg = PretrainConfig {
        arch: small_arch(64),
        batch_size: 64,
        ..PretrainConfig::new(Objective::InverseDynamics, 50, 0)
    };
    let id = pretrain(&ds, &cfg).unwrap();
    let mut r = rng::stream(7, &["affine"]);
    let latents = Mat::from_fn(1000, 2, |_, _| rng::uniform(&mut r, -0.5, 0.5));
    let z = id.embed(&mdp.lift.decode_rows(&latents)).unwrap();
    let m = gaussian(&mut r, 64, 64);
    let shift = gaussian(&mut r, 1, 64);
    let mut z2 = &z * &m;
    for mut row in z2.row_iter_mut() {
        row += &shift;
    }
    let a = alignment_of(&z, &latents);
    let b = alignment_of(&z2, &latents);
    assert!((a.score - b.score).abs() < 1e-9, "{} vs {}", a.score, b.score);
}
