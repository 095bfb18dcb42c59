//! End-to-end runs of the `fat2thin` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fat2thin::dataset::OfflineDataset;
use fat2thin::harness::{read_metrics, read_summary};
use fat2thin::nn::Mlp;
use fat2thin::{EntropicIndex, QGaussianPolicy};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fat2thin"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, extra: &[&str]) -> std::path::PathBuf {
    let path = dir.join(name);
    let mut args = vec!["gen-data", "--out", p(&path)];
    args.extend_from_slice(extra);
    ok(&args);
    path
}

const QUICK: &[&str] = &[
    "--iterations",
    "40",
    "--eval-interval",
    "20",
    "--eval-episodes",
    "2",
    "--batch-size",
    "32",
    "--hidden",
    "8",
];

#[test]
fn gen_data_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a.jsonl", &[]);
    let b = gen(dir.path(), "b.jsonl", &[]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let d = OfflineDataset::load(&a).unwrap();
    assert_eq!(d.len(), 1200);
    assert_eq!(d.transitions().iter().filter(|t| t.timeout).count(), 50);
    assert!(d.transitions().iter().all(|t| t.a[0] > -100.0 && t.a[0] < 100.0));
    let c = gen(dir.path(), "c.jsonl", &["--seed", "1"]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn gen_data_episodes_flag() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let stdout = ok(&["gen-data", "--out", p(&path), "--episodes", "10"]);
    assert!(stdout.contains("240 transitions"), "{stdout}");
    assert_eq!(OfflineDataset::load(&path).unwrap().len(), 240);
}

#[test]
fn train_ftt_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.jsonl", &["--episodes", "5"]);
    let out = dir.path().join("run");
    let mut args = vec!["train", "--algo", "ftt", "--seed", "0", "--dataset", p(&data), "--out-dir", p(&out)];
    args.extend_from_slice(QUICK);
    let stdout = ok(&args);
    assert!(stdout.contains("algo=ftt"), "{stdout}");
    let summary = read_summary(&out.join("summary.json")).unwrap();
    assert!(summary.final_eval_mean.unwrap().is_finite());
    assert_eq!(summary.nonfinite_events, 0);
    assert_eq!(summary.max_copy_discrepancy, Some(0.0));
    assert_eq!(read_metrics(&out.join("metrics.csv")).unwrap().len(), 2);
    for f in ["actor.bin", "proposal.bin", "critic.bin"] {
        assert!(out.join("final").join(f).exists());
        assert!(out.join("checkpoints/iter_0000020").join(f).exists());
    }
    // refuses to overwrite a run
    assert!(!run(&args).status.success());
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.jsonl", &["--episodes", "5"]);
    let first = dir.path().join("first");
    let mut args = vec!["train", "--algo", "rar", "--rar-k", "4", "--dataset", p(&data), "--out-dir", p(&first)];
    args.extend_from_slice(QUICK);
    ok(&args);
    let second = dir.path().join("second");
    ok(&["train", "--config", p(&first.join("config.txt")), "--out-dir", p(&second)]);
    assert_eq!(
        fs::read(first.join("metrics.csv")).unwrap(),
        fs::read(second.join("metrics.csv")).unwrap()
    );
    assert_eq!(
        fs::read(first.join("final/actor.bin")).unwrap(),
        fs::read(second.join("final/actor.bin")).unwrap()
    );
}

#[test]
fn forward_kl_with_sparse_actor_records_nonfinite_events() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.jsonl", &["--episodes", "5"]);
    let out = dir.path().join("run");
    let mut args = vec!["train", "--algo", "fkl", "--q-s", "0", "--dataset", p(&data), "--out-dir", p(&out)];
    args.extend_from_slice(QUICK);
    ok(&args);
    let summary = read_summary(&out.join("summary.json")).unwrap();
    assert!(summary.nonfinite_events >= 1);
    assert!(summary.aborted.is_none());
}

#[test]
fn two_seeds_give_two_reproducible_directories() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.jsonl", &["--episodes", "5"]);
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let mut args = vec!["train", "--seeds", "0,1", "--dataset", p(&data), "--out-dir", p(&out)];
        args.extend_from_slice(QUICK);
        ok(&args);
        outs.push(out);
    }
    let m = |root: &Path, seed: &str| fs::read(root.join(seed).join("metrics.csv")).unwrap();
    assert_eq!(m(&outs[0], "seed_0"), m(&outs[1], "seed_0"));
    assert_eq!(m(&outs[0], "seed_1"), m(&outs[1], "seed_1"));
    assert_ne!(m(&outs[0], "seed_0"), m(&outs[0], "seed_1"));
    assert!(fs::read_to_string(outs[0].join("seed_1/config.txt")).unwrap().contains("seed = 1"));
}

#[test]
fn config_errors_exit_nonzero_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.jsonl", &["--episodes", "2"]);
    let cfg = dir.path().join("bad.txt");
    fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let out = run(&["train", "--config", p(&cfg), "--dataset", p(&data)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
    let out = run(&["train", "--algo", "ftt", "--alpha-spot", "0.2", "--dataset", p(&data)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha_spot"));
    let out = run(&["train", "--dataset", p(&dir.path().join("missing.jsonl"))]);
    assert!(!out.status.success());
}

fn zero_policy(path: &Path) {
    let mean = Mlp::zeros(&[8, 1]).unwrap();
    let mut logsigma = Mlp::zeros(&[8, 1]).unwrap();
    logsigma.output_bias_mut()[0] = -30.0;
    QGaussianPolicy::from_parts(EntropicIndex::new(0.0).unwrap(), mean, logsigma, 1e-12, 100.0, 1.0)
        .unwrap()
        .save(path)
        .unwrap();
}

#[test]
fn eval_zero_policy_on_noiseless_env() {
    let dir = tempfile::tempdir().unwrap();
    let policy = dir.path().join("zero.bin");
    zero_policy(&policy);
    let stdout = ok(&["eval", "--snapshot", p(&policy), "--episodes", "3", "--noise-scale", "0"]);
    let mean: f64 = stdout
        .split_whitespace()
        .find_map(|w| w.strip_prefix("mean="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(mean.abs() < 1e-9, "{stdout}");
}

#[test]
fn eval_format_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.jsonl", &["--episodes", "5"]);
    let out = dir.path().join("run");
    let mut args = vec!["train", "--dataset", p(&data), "--out-dir", p(&out)];
    args.extend_from_slice(QUICK);
    ok(&args);
    let snap = out.join("final");
    let one = ok(&["eval", "--snapshot", p(&snap), "--episodes", "1"]);
    let many = ok(&["eval", "--snapshot", p(&snap), "--episodes", "100"]);
    let shape = |s: &str| s.split_whitespace().map(|w| w.split('=').next().unwrap().to_string()).collect::<Vec<_>>();
    assert_eq!(shape(&one), shape(&many));
    assert!(one.contains("std=0.000000"));
    assert!(!many.contains("std=0.000000"));
    assert_eq!(many, ok(&["eval", "--snapshot", p(&snap), "--episodes", "100"]));
    assert_ne!(many, ok(&["eval", "--snapshot", p(&snap), "--episodes", "100", "--seed", "3"]));
    assert!(!run(&["eval", "--snapshot", p(&dir.path().join("nope"))]).status.success());
}

#[test]
fn dump_policy_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.jsonl", &["--episodes", "5"]);
    let out = dir.path().join("run");
    let mut args = vec!["train", "--dataset", p(&data), "--out-dir", p(&out)];
    args.extend_from_slice(QUICK);
    ok(&args);
    let csv = dir.path().join("grid.csv");
    ok(&["dump-policy", "--snapshot", p(&out.join("final")), "--lo", "-5", "--hi", "5", "--n", "37", "--out", p(&csv)]);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "action,proposal_density,actor_density");
    assert_eq!(lines.len(), 38);
    let stdout = ok(&["dump-policy", "--snapshot", p(&out.join("final")), "--n", "5"]);
    assert_eq!(stdout.lines().count(), 6);
    assert!(!run(&["dump-policy", "--snapshot", p(&out.join("final")), "--n", "1"]).status.success());
    assert!(!run(&["dump-policy", "--snapshot", p(&dir.path().join("missing"))]).status.success());
    assert!(!run(&["dump-policy", "--snapshot", p(&out.join("final")), "--state", "1,2"]).status.success());
}
