use super::io::{from_bytes, to_bytes};
use super::*;
use crate::env::{make_mdp, LiftSpec, MdpSpec};

fn mdp() -> LatentMdp {
    make_mdp(&MdpSpec::new(2, 16, 2, LiftSpec::LinearOrthonormal), 0).unwrap()
}

fn goal_spec() -> ContextSpec {
    ContextSpec::Goal { radius: 0.8, inferrable: false }
}

#[test]
fn continuous_contexts_are_distinct_per_trajectory() {
    let m = mdp();
    let ds = generate_pretraining(&m, &ExpertPolicy::pd_to_goal(), &goal_spec(), 1000, 1).unwrap();
    let view = ds.privileged();
    let mut tags: Vec<u64> = (0..ds.len()).map(|i| view.context_tag(i).0).collect();
    tags.sort_unstable();
    tags.dedup();
    assert_eq!(tags.len(), 1000);
}

#[test]
fn discrete_contexts_cycle() {
    let m = mdp();
    let spec = ContextSpec::Discrete {
        goals: vec![vec![0.5, 0.0], vec![0.0, 0.5], vec![-0.5, 0.0]],
        allowed: vec![0, 1, 2],
        inferrable: false,
    };
    let ds = generate_pretraining(&m, &ExpertPolicy::pd_to_goal(), &spec, 3, 1).unwrap();
    let view = ds.privileged();
    let tags: Vec<u64> = (0..3).map(|i| view.context_tag(i).0).collect();
    assert_eq!(tags, vec![0, 1, 2]);
}

#[test]
fn empty_context_set_is_rejected() {
    let spec = ContextSpec::Discrete { goals: vec![vec![0.5, 0.0]], allowed: vec![], inferrable: false };
    assert!(generate_pretraining(&mdp(), &ExpertPolicy::pd_to_goal(), &spec, 3, 1).is_err());
}

#[test]
fn replaying_actions_reproduces_latents() {
    let m = mdp();
    let ds = generate_pretraining(&m, &ExpertPolicy::pd_to_goal(), &goal_spec(), 20, 2).unwrap();
    let learner = ds.learner();
    let view = ds.privileged();
    for i in 0..ds.len() {
        let lat = view.latents(i);
        let acts = learner.actions(i);
        let mut s = lat.row(0).transpose();
        for t in 0..acts.nrows() {
            s = m.mean_next(&s, &acts.row(t).transpose());
            m.project(&mut s);
            assert!((lat.row(t + 1).transpose() - &s).amax() < 1e-9);
        }
    }
}

#[test]
fn finetuning_data_has_one_context() {
    let m = mdp();
    let ctx = Context::goal(Vector::from_row_slice(&[0.3, 0.4]));
    let ds = generate_finetuning(&m, &ExpertPolicy::pd_to_goal(), &ctx, 10, 3).unwrap();
    assert_eq!(ds.len(), 10);
    let view = ds.privileged();
    assert!((0..10).all(|i| view.context_tag(i) == view.context_tag(0)));
    let two = generate_finetuning(&m, &ExpertPolicy::pd_to_goal(), &ctx, 2, 3).unwrap();
    assert_eq!(two.len(), 2);
}

#[test]
fn transition_counts() {
    let m = mdp();
    let ctx = Context::goal(Vector::from_row_slice(&[0.3, 0.4]));
    let ds = generate_finetuning(&m, &ExpertPolicy::pd_to_goal(), &ctx, 1, 3).unwrap();
    let view = ds.learner();
    assert_eq!(view.transitions(1, Split::All).unwrap().len(), 50);
    let five = view.transitions(5, Split::All).unwrap();
    assert_eq!(five.len(), 46);
    assert_eq!(five.a_seq.ncols(), 10);
    assert_eq!(five.a_seq.view((3, 4), (1, 2)), view.actions(0).rows(5, 1));
    assert!(view.transitions(51, Split::All).is_err());
    assert!(view.transitions(0, Split::All).is_err());
}

#[test]
fn one_step_transitions_follow_the_dynamics() {
    let m = mdp();
    let ds = generate_pretraining(&m, &ExpertPolicy::pd_to_goal(), &goal_spec(), 10, 4).unwrap();
    let b = ds.learner().transitions(1, Split::All).unwrap();
    let s = m.lift.encode_rows(&b.o).unwrap();
    let s_next = m.lift.encode_rows(&b.o_next).unwrap();
    let predicted = &s * m.a.transpose() + &b.a * m.b.transpose();
    // interior rows only: projection onto the arena is not linear
    for r in 0..b.len() {
        if predicted.row(r).norm() < m.arena_radius {
            assert!((predicted.row(r) - s_next.row(r)).amax() < 1e-6);
        }
    }
}

#[test]
fn split_is_a_stable_partition() {
    let (train, val) = split_indices(100, 9);
    assert_eq!(val.len(), 10);
    assert_eq!(train.len() + val.len(), 100);
    assert!(val.iter().all(|i| !train.contains(i)));
    assert_eq!(split_indices(100, 9), (train, val));
    let (_, other) = split_indices(100, 10);
    assert_ne!(other, split_indices(100, 9).1);
}

#[test]
fn generation_is_deterministic() {
    let m = mdp();
    let a = generate_pretraining(&m, &ExpertPolicy::pd_to_goal(), &goal_spec(), 15, 5).unwrap();
    let b = generate_pretraining(&m, &ExpertPolicy::pd_to_goal(), &goal_spec(), 15, 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn privileged_access_is_audited() {
    let m = mdp();
    let ds = generate_pretraining(&m, &ExpertPolicy::pd_to_goal(), &goal_spec(), 5, 5).unwrap();
    let _ = ds.learner().transitions(1, Split::Train).unwrap();
    assert_eq!(ds.privileged_reads(), 0);
    let _ = ds.privileged().latents(0);
    assert_eq!(ds.privileged_reads(), 1);
}

#[test]
fn binary_round_trip_is_bit_exact() {
    let m = mdp();
    let ds = generate_pretraining(&m, &ExpertPolicy::pd_to_goal(), &goal_spec(), 12, 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.impd");
    save(&ds, &path).unwrap();
    let back = load(&path).unwrap();
    assert_eq!(ds, back);
    for (x, y) in ds.trajectories().iter().zip(back.trajectories()) {
        assert!(x.observations.iter().zip(y.observations.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn corrupted_files_give_distinct_errors() {
    let m = mdp();
    let ds = generate_pretraining(&m, &ExpertPolicy::pd_to_goal(), &goal_spec(), 3, 6).unwrap();
    let bytes = to_bytes(&ds);

    let mut flipped = bytes.clone();
    flipped[40] ^= 0x01;
    assert!(matches!(from_bytes(&flipped), Err(Error::Checksum { .. })));

    let mut version = bytes.clone();
    version[4] = 2;
    assert!(matches!(from_bytes(&version), Err(Error::Version { found: 2, expected: 1 })));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(from_bytes(&magic), Err(Error::BadMagic(_))));

    // a truncated body with a recomputed checksum reaches the structural check
    let mut short = bytes[..bytes.len() - 100].to_vec();
    let crc = crc32fast::hash(&short);
    short.extend_from_slice(&crc.to_le_bytes());
    assert!(matches!(from_bytes(&short), Err(Error::Truncated(_))));

    let codes: Vec<i32> = [from_bytes(&flipped), from_bytes(&version), from_bytes(&magic), from_bytes(&short)]
        .into_iter()
        .map(|r| r.unwrap_err().code())
        .collect();
    let mut uniq = codes.clone();
    uniq.sort_unstable();
    uniq.dedup();
    assert_eq!(uniq.len(), codes.len());
}

/// A file assembled byte by byte, independent of the host's endianness:
/// one trajectory, `l = d = k = 1`, `H = 1`.
#[test]
fn little_endian_fixture_decodes_on_any_host() {
    let mut bytes: Vec<u8> = b"IMPD".to_vec();
    bytes.extend([0x01, 0x00]); // version 1
    for v in [1u8, 1, 1, 1, 1] {
        bytes.extend([v, 0, 0, 0]);
    }
    bytes.extend([0x2a, 0, 0, 0, 0, 0, 0, 0]); // seed 42
    bytes.extend([0; 8]); // fingerprint
    bytes.extend([0x01, 0, 0, 0, b'p']); // policy "p"
    bytes.extend([0x01, 0, 0, 0, b'c']); // context "c"
    bytes.extend([0; 4]); // no val indices
    bytes.extend([0x07, 0, 0, 0, 0, 0, 0, 0]); // tag 7
    let f = |hi: u8, next: u8| [0, 0, 0, 0, 0, 0, next, hi];
    bytes.extend(f(0x3f, 0xf0)); // latent 1.0
    bytes.extend(f(0x40, 0x00)); // latent 2.0
    bytes.extend(f(0xbf, 0xf0)); // obs -1.0
    bytes.extend(f(0x40, 0x08)); // obs 3.0
    bytes.extend(f(0x3f, 0xe0)); // action 0.5
    let crc = crc32fast::hash(&bytes);
    bytes.extend(crc.to_le_bytes());

    let ds = from_bytes(&bytes).unwrap();
    assert_eq!(ds.provenance.seed, 42);
    assert_eq!(ds.privileged().context_tag(0), ContextTag(7));
    assert_eq!(ds.privileged().latents(0).as_slice(), &[1.0, 2.0]);
    assert_eq!(ds.learner().observations(0).as_slice(), &[-1.0, 3.0]);
    assert_eq!(ds.learner().actions(0).as_slice(), &[0.5]);
}
