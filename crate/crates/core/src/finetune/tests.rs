use super::*;
use crate::data::{generate_finetuning, generate_pretraining};
use crate::env::{make_mdp, ContextSpec, ExpertActor, ExpertPolicy, LiftSpec, MdpSpec, ZeroActor};
use crate::linalg::{fit_affine, Vector};
use crate::pretrain::{pretrain, scratch_encoder, states_oracle, PretrainConfig};

fn setup() -> (LatentMdp, Context) {
    let mdp = make_mdp(&MdpSpec::new(2, 8, 2, LiftSpec::LinearOrthonormal), 0).unwrap();
    (mdp, Context::goal(Vector::from_vec(vec![0.5, -0.3])))
}

fn small(steps: usize) -> FinetuneConfig {
    let mut c = FinetuneConfig::new(steps, 0);
    c.arch = ArchSpec { embedding_dim: 8, encoder_hidden: vec![32], head_hidden: vec![64, 64], ..ArchSpec::default() };
    c.batch_size = 64;
    c
}

#[test]
fn states_oracle_fits_the_expert() {
    let (mdp, ctx) = setup();
    let ds = generate_finetuning(&mdp, &ExpertPolicy::pd_to_goal(), &ctx, 10, 0).unwrap();
    let val = ds.learner().transitions(1, Split::Val).unwrap();
    let lat = ds.privileged().transition_latents(&val);
    // least-squares oracle: the unclipped expert is affine in s for fixed g
    let train = ds.learner().transitions(1, Split::Train).unwrap();
    let fit = fit_affine(&ds.privileged().transition_latents(&train), &train.a);
    let oracle = mse_loss(&fit.predict(&lat), &val.a).unwrap().0;
    assert!(oracle < 1e-3, "affine oracle {oracle}");

    let mut cfg = FinetuneConfig::new(2000, 0);
    cfg.arch.head_hidden = vec![256, 256];
    let head = finetune(&states_oracle(&mdp), &ds, &cfg).unwrap();
    let (_, v) = action_losses(&head);
    assert!(v < 1e-3, "val mse {v}");
    assert_eq!(head.log().train.len(), 2000);
    assert_eq!(
        head.log().val.iter().map(|&(s, _)| s).collect::<Vec<_>>(),
        (1..=20).map(|i| i * 100).collect::<Vec<_>>()
    );
}

#[test]
fn zero_steps_leaves_the_head_at_initialization() {
    let (mdp, ctx) = setup();
    let ds = generate_finetuning(&mdp, &ExpertPolicy::pd_to_goal(), &ctx, 2, 0).unwrap();
    let cfg = small(0);
    let head = finetune(&states_oracle(&mdp), &ds, &cfg).unwrap();
    let init = Network::new(cfg.arch.head(2, 2), &mut rng::stream(0, &["init", "policy-head"])).unwrap();
    assert_eq!(head.network(), &init);
    assert!(head.log().train.is_empty());
}

#[test]
fn joint_training_moves_only_scratch_encoders() {
    let (mdp, ctx) = setup();
    let ds = generate_finetuning(&mdp, &ExpertPolicy::pd_to_goal(), &ctx, 2, 0).unwrap();
    let pcfg = PretrainConfig { arch: small(1).arch, ..PretrainConfig::new(Objective::Scratch, 1, 0) };
    let scratch = scratch_encoder(ds.obs_dim(), &pcfg).unwrap();
    let mut cfg = small(20);
    cfg.joint = true;
    let head = finetune(&scratch, &ds, &cfg).unwrap();
    assert_ne!(head.encoder(), &scratch);

    let pre = generate_pretraining(
        &mdp,
        &ExpertPolicy::pd_to_goal(),
        &ContextSpec::Goal { radius: 0.8, inferrable: false },
        4,
        1,
    )
    .unwrap();
    let id = pretrain(
        &pre,
        &PretrainConfig {
            arch: small(1).arch,
            batch_size: 32,
            ..PretrainConfig::new(Objective::InverseDynamics, 5, 0)
        },
    )
    .unwrap();
    assert!(matches!(finetune(&id, &ds, &cfg), Err(Error::InvalidSpec(_))));
}

#[test]
fn frozen_features_are_bit_identical_across_heads() {
    let (mdp, ctx) = setup();
    let pre = generate_pretraining(
        &mdp,
        &ExpertPolicy::pd_to_goal(),
        &ContextSpec::Goal { radius: 0.8, inferrable: false },
        4,
        1,
    )
    .unwrap();
    let arch = small(1).arch;
    let id = pretrain(
        &pre,
        &PretrainConfig { arch, batch_size: 32, ..PretrainConfig::new(Objective::InverseDynamics, 5, 0) },
    )
    .unwrap();
    let before = id.clone();
    let ds = generate_finetuning(&mdp, &ExpertPolicy::pd_to_goal(), &ctx, 2, 0).unwrap();
    let h1 = finetune(&id, &ds, &small(30)).unwrap();
    let h2 = finetune(&id, &ds, &FinetuneConfig { seed: 9, ..small(30) }).unwrap();
    assert_eq!(id, before);
    assert_eq!(h1.encoder(), &before);
    let o = ds.learner().observations(0);
    assert_eq!(h1.encoder().embed(o).unwrap(), h2.encoder().embed(o).unwrap());
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let (mdp, ctx) = setup();
    let ds = generate_finetuning(&mdp, &ExpertPolicy::pd_to_goal(), &ctx, 2, 0).unwrap();
    let pcfg = PretrainConfig { arch: small(1).arch, ..PretrainConfig::new(Objective::Scratch, 1, 0) };
    let wrong = scratch_encoder(5, &pcfg).unwrap();
    assert!(matches!(finetune(&wrong, &ds, &small(5)), Err(Error::Shape(_))));
}

#[test]
fn expert_and_zero_policies_bracket_success() {
    let (mdp, ctx) = setup();
    let eval = EvaluationSpec::default_for(&mdp);
    let expert = ExpertActor { policy: ExpertPolicy::pd_to_goal(), mdp: &mdp };
    let e = evaluate(&mdp, &ctx, &expert, &eval, 0, 1.0).unwrap();
    assert!(e.success_rate >= 0.98);
    // the initial ball has radius 0.8, so a boundary goal is never hit by drift
    let far = Context::goal(Vector::from_vec(vec![1.0, 0.0]));
    let z = evaluate(&mdp, &far, &ZeroActor { action_dim: 2 }, &eval, 0, 1.0).unwrap();
    assert_eq!(z.success_rate, 0.0);
    assert_eq!(z.outcomes.len(), 100);
}

#[test]
fn standard_error_is_binomial() {
    let outcomes: Vec<bool> = (0..100).map(|i| i % 4 == 0).collect();
    let e = Evaluation::from_outcomes(outcomes);
    assert_eq!(e.success_rate, 0.25);
    assert!((e.std_error - (0.25f64 * 0.75 / 100.0).sqrt()).abs() < 1e-15);
    assert_eq!(e.outcomes.iter().filter(|&&s| s).count(), 25);
}

#[test]
fn finetuning_is_deterministic() {
    let (mdp, ctx) = setup();
    let ds = generate_finetuning(&mdp, &ExpertPolicy::pd_to_goal(), &ctx, 2, 0).unwrap();
    let a = finetune(&states_oracle(&mdp), &ds, &small(50)).unwrap();
    let b = finetune(&states_oracle(&mdp), &ds, &small(50)).unwrap();
    assert_eq!(a, b);
}
