use std::path::Path;
use std::process::{Command, Output};

fn jumpflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jumpflow")).args(args).output().expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    std::fs::write(
        &path,
        "env = \"toy3\"\n[budget]\nonline_steps = 200\ncritic_pretrain_steps = 100\n\
         generator_pretrain_steps = 50\neval_episodes = 5\nlog_interval = 50\n",
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let p = |s: &str| tmp.path().join(s).to_str().unwrap().to_string();

    let o = jumpflow(&["collect-data", "--config", &cfg, "--seed", "3", "--out", &p("data")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("data/dataset.csv")).unwrap();
    assert!(csv.starts_with("# env=toy3"));

    let o = jumpflow(&["pretrain", "--config", &cfg, "--seed", "3", "--data", &p("data/dataset.csv"), "--out", &p("pre")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("pre/pretrained/rate.net").exists());

    let o = jumpflow(&[
        "finetune",
        "--config",
        &cfg,
        "--seed",
        "3",
        "--checkpoint",
        &p("pre/pretrained"),
        "--out",
        &p("ft"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.csv", "eval.toml", "config.toml", "agent/agent.toml", "agent/q1.net", "agent/v.net"] {
        assert!(tmp.path().join("ft").join(f).exists(), "missing {f}");
    }
    let rows = jumpflow::harness::read_metrics(&tmp.path().join("ft/metrics.csv")).unwrap();
    assert_eq!(rows.last().unwrap().step, 200);
    let resolved = jumpflow::harness::RunConfig::load(&tmp.path().join("ft/config.toml")).unwrap();
    assert_eq!(resolved.seed, 3);
    assert_eq!(resolved.budget.online_steps, 200);

    let o = jumpflow(&["eval", "--checkpoint", &p("ft/agent"), "--episodes", "4", "--out", &p("ev")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let eval: toml::Table = std::fs::read_to_string(tmp.path().join("ev/eval.toml")).unwrap().parse().unwrap();
    assert_eq!(eval["episodes"].as_integer(), Some(4));
}

#[test]
fn finetune_requires_checkpoint_unless_cold() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("x");
    let o = jumpflow(&["finetune", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--checkpoint"));

    let o = jumpflow(&["finetune", "--config", &cfg, "--cold-start", "--steps", "60", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn dqn_agent_round_trips_through_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("dqn");
    let o = jumpflow(&["finetune", "--config", &cfg, "--agent", "dqn", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(out.join("agent/agent.toml")).unwrap();
    assert!(manifest.contains("kind = \"dqn\""));
    let ev = tmp.path().join("ev");
    let o = jumpflow(&["eval", "--checkpoint", out.join("agent").to_str().unwrap(), "--episodes", "3", "--out", ev.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn ablate_writes_one_row_per_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("ab");
    let o = jumpflow(&["ablate", "--config", &cfg, "--axis", "M", "--values", "2,5", "--seeds", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().starts_with("substeps,2"));
}

#[test]
fn check_theory_reports_and_sets_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = jumpflow(&["check-theory", "--which", "kl", "--trials", "2000", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("PASS kl"));

    let o = jumpflow(&["check-theory", "--which", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[hyper]\nnot_a_key = 1\n").unwrap();
    let o = jumpflow(&["collect-data", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not_a_key"));
}
