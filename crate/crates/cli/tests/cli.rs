use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use imlab::theory::{Bound, Experiment, TheoryReport};

const CONFIG: &str = r#"
name = "cli-smoke"
objectives = ["ID", "Scratch"]
pretrain_sizes = [10]
finetune_sizes = [1, 2]
seeds = [0]

[budget]
pretrain_steps = 5
finetune_steps = 5
batch_size = 16
fd_explicit_batch_size = 8
eval_episodes = 4
save_artifacts = true

[arch]
embedding_dim = 8
encoder_hidden = [16]
head_hidden = [16]

[[environments]]
name = "goal-linear"
[environments.mdp]
latent_dim = 2
obs_dim = 8
action_dim = 2
horizon = 10
lift = { kind = "linear-orthonormal" }
[environments.contexts]
kind = "goal"
radius = 0.8
"#;

fn imlab(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_imlab"));
    cmd.args(args).env_remove("IMLAB_OUT").env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn run_then_report_then_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("out");
    let o = imlab(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", "2"], &[]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("4 executed"), "{}", text(&o));
    let body = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(body.lines().count(), 2 + 4);

    let o = imlab(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert!(text(&o).contains("0 executed, 4 skipped"), "{}", text(&o));

    let o = imlab(&["report", "sweep", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(out.join("sweep_finetune_size.svg").exists());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("objective,finetune_size,n,mean,se,baseline"));

    let o = imlab(&["report", "sweep", out.to_str().unwrap(), "--axis", "pretrain", "--fixed", "1"], &[]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("Scratch,all,1,"));

    let o = imlab(&["report", "regime", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(out.join("regimes.csv").exists());

    let artifacts = out.join("artifacts");
    let enc = fs::read_dir(&artifacts)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "enc") && p.with_extension("ds").exists())
        .expect("an ID cell saved its encoder and data");
    let o = imlab(&["probe", enc.to_str().unwrap(), enc.with_extension("ds").to_str().unwrap(), "--steps", "20"], &[]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("val_mse"));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, CONFIG.replace("finetune_sizes = [1, 2]", "finetune_sizes = [1]").replace("\"ID\", ", "")).unwrap();
    let out = dir.path().join("from-env");
    let o = imlab(&["run", cfg.to_str().unwrap()], &[("IMLAB_OUT", &out)]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(out.join("metrics.csv").exists());
}

#[test]
fn bad_config_names_the_field_and_sets_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, CONFIG.replace("pretrain_sizes = [10]", "pretrain_sizes = [10, 0]")).unwrap();
    let o = imlab(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(30), "{}", text(&o));
    assert!(text(&o).contains("pretrain_sizes[1]"), "{}", text(&o));
}

fn save_report(dir: &Path, e: Experiment, pass: bool) {
    let mut r = TheoryReport::new(e);
    r.metric("m", if pass { 0.0 } else { 2.0 });
    r.threshold("t", 1.0);
    r.check("m", Bound::AtMost, "t");
    r.finish().save(dir).unwrap();
}

#[test]
fn theory_report_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().to_str().unwrap();
    assert_eq!(imlab(&["report", "theory", p], &[]).status.code(), Some(2));
    for e in Experiment::ALL {
        save_report(dir.path(), e, true);
    }
    assert_eq!(imlab(&["report", "theory", p], &[]).status.code(), Some(0));
    save_report(dir.path(), Experiment::BcConfounding, false);
    let o = imlab(&["report", "theory", p], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("FAIL bc-confounding"));
}

#[test]
fn verify_writes_a_passing_recovery_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = imlab(&["verify", "id-recovery", "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let rep = TheoryReport::load(&dir.path().join("theory/id-recovery.json")).unwrap();
    assert!(rep.pass);
    assert!(dir.path().join("theory/id-recovery.txt").exists());
    assert!(dir.path().join("theory/id-recovery.csv").exists());
}
