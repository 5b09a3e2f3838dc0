//! The command-line pipeline on the bundled demo dataset.

mod common;

use std::fs;
use std::path::Path;

use common::{cli, demo_config, files_under};

fn report(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("{name}.json"))).unwrap()).unwrap()
}

fn run_ok(args: &[&str]) {
    assert_eq!(cli(args), 0, "bilevel {}", args.join(" "));
}

#[test]
fn ingest_writes_split_indices() {
    let cfg = demo_config();
    let out = tempfile::tempdir().unwrap();
    run_ok(&["ingest", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    let r = report(out.path(), "ingest");
    let body = &r["body"];
    assert_eq!(body["records"], 867);
    let train = body["train"].as_u64().unwrap();
    let test = body["test"].as_u64().unwrap();
    assert!(train > test && test > 0);
    for f in ["train.idx", "test.idx"] {
        assert!(out.path().join("split").join(f).is_file());
    }
}

#[test]
fn eval_is_repeatable_and_world_snapshot_is_equivalent() {
    let cfg = demo_config();
    let cfg = cfg.to_str().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&["train", "--config", cfg, "--seed", "2", "--out", out]);
    run_ok(&["eval", "--config", cfg, "--seed", "2", "--out", out]);
    let first = fs::read(dir.path().join("eval.json")).unwrap();
    run_ok(&["eval", "--config", cfg, "--seed", "2", "--out", out]);
    assert_eq!(first, fs::read(dir.path().join("eval.json")).unwrap());

    // Scorers loaded from a snapshot give the same world as training them.
    run_ok(&["train-scorer", "--config", cfg, "--seed", "2", "--out", out]);
    let world = dir.path().join("world");
    let other = tempfile::tempdir().unwrap();
    run_ok(&[
        "eval",
        "--config",
        cfg,
        "--seed",
        "2",
        "--out",
        other.path().to_str().unwrap(),
        "--memory",
        out,
        "--world",
        world.to_str().unwrap(),
    ]);
    assert_eq!(first, fs::read(other.path().join("eval.json")).unwrap());

    let r = report(dir.path(), "eval");
    assert_eq!(r["kind"], "eval");
    assert_eq!(r["seed"], 2);
    assert_eq!(r["body"]["n_episodes"], 20);
    assert_eq!(r["body"]["n_seeds"], 2);
}

#[test]
fn overrides_and_missing_memory() {
    let cfg = demo_config();
    let dir = tempfile::tempdir().unwrap();
    run_ok(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "run.eval_episodes=3",
        "--set",
        "run.seeds=1",
        "--set",
        "agent.macro_enabled=false",
    ]);
    let r = report(dir.path(), "eval");
    assert_eq!(r["body"]["n_episodes"], 3);
    assert_eq!(r["body"]["n_seeds"], 1);
    assert!(fs::read_to_string(dir.path().join("eval.txt")).unwrap().starts_with("eval | seed 5"));
}

#[test]
fn ablate_reports_every_variant() {
    let cfg = demo_config();
    let dir = tempfile::tempdir().unwrap();
    run_ok(&[
        "ablate",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "run.seeds=1",
    ]);
    let summary = report(dir.path(), "ablate");
    let labels: Vec<&str> = summary["body"].as_array().unwrap().iter().map(|e| e["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["BiLLP", "w/o Macro", "w/o Micro", "ActOnly"]);
    for slug in ["billp", "no-macro", "no-micro", "act-only"] {
        let r = report(dir.path(), &format!("ablate-{slug}"));
        assert_eq!(r["kind"], "ablate");
        assert!(dir.path().join(slug).join("audit.jsonl").is_file());
        assert!(dir.path().join(slug).join("memory/seed-1/planner.mem").is_file());
    }
    let act_only = report(dir.path(), "ablate-act-only");
    let calls = &act_only["body"]["llm_calls"];
    assert_eq!(calls["planner"], 0);
    assert_eq!(calls["critic"], 0);
    assert_eq!(calls["reflector"], 0);
    assert!(calls["actor"].as_u64().unwrap() > 0);
}

#[test]
fn analysis_commands() {
    let cfg = demo_config();
    let cfg = cfg.to_str().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let small = ["--set", "run.seeds=1", "--set", "run.eval_episodes=4"];
    let with = |args: &[&str]| -> Vec<String> { args.iter().chain(small.iter()).map(|s| s.to_string()).collect() };

    let a = with(&["train", "--config", cfg, "--seed", "4", "--out", out]);
    run_ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let a = with(&["mc-oracle", "--config", cfg, "--seed", "4", "--out", out, "--rollouts", "20"]);
    run_ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let mc = report(dir.path(), "mc-oracle");
    assert_eq!(mc["body"]["samples"].as_array().unwrap().len(), 20);

    let a = with(&["variance-study", "--config", cfg, "--seed", "4", "--out", out, "--probes", "1", "--mc", "10", "--critic", "5"]);
    run_ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let vs = report(dir.path(), "variance-study");
    assert_eq!(vs["body"].as_array().unwrap().len(), 1);
    assert_eq!(vs["body"][0]["n_critic"], 5);

    let a = with(&["sweep", "--config", cfg, "--seed", "4", "--out", out, "--windows", "1,8"]);
    run_ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let sw = report(dir.path(), "sweep");
    let lens: Vec<f64> = sw["body"].as_array().unwrap().iter().map(|e| e[1]["len_mean"].as_f64().unwrap()).collect();
    assert_eq!(lens.len(), 2);

    let steps = dir.path().join("traces/train-seed-4.steps.jsonl");
    let traces = format!("trained={}", steps.display());
    run_ok(&["popularity", "--config", cfg, "--out", out, "--traces", &traces]);
    let pop = report(dir.path(), "popularity");
    let shares = pop["body"]["shares"]["trained"].as_array().unwrap();
    let total: f64 = shares.iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(cli(&["frobnicate"]), 2);
    assert_eq!(cli(&["eval", "--seed", "1"]), 2);
    assert_eq!(cli(&["eval", "--config", "/definitely/missing.toml", "--seed", "1"]), 2);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "version = 1\nmanifest = \"m.toml\"\n[agent]\ngamma = 3.0\n").unwrap();
    assert_eq!(cli(&["train", "--config", bad.to_str().unwrap(), "--seed", "1"]), 2);
    fs::write(&bad, "version = 1\nmanifest = \"m.toml\"\nunknown_key = 1\n").unwrap();
    assert_eq!(cli(&["train", "--config", bad.to_str().unwrap(), "--seed", "1"]), 2);
    assert_eq!(cli(&["--help"]), 0);
}

#[test]
fn train_outputs_are_complete() {
    let cfg = demo_config();
    let dir = tempfile::tempdir().unwrap();
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "run.seeds=1",
    ]);
    let files: Vec<String> = files_under(dir.path()).iter().map(|p| p.display().to_string()).collect();
    for f in [
        "audit-train.jsonl",
        "memory/seed-9/actor.mem",
        "memory/seed-9/critic.mem",
        "memory/seed-9/planner.mem",
        "traces/train-seed-9.episodes.jsonl",
        "traces/train-seed-9.steps.jsonl",
        "train.json",
        "train.txt",
    ] {
        assert!(files.contains(&f.to_string()), "missing {f} in {files:?}");
    }
    let episodes = fs::read_to_string(dir.path().join("traces/train-seed-9.episodes.jsonl")).unwrap();
    assert_eq!(episodes.lines().count(), 10);
    for line in episodes.lines() {
        let t: bilevel_core::agent::EpisodeTrace = serde_json::from_str(line).unwrap();
        assert!(t.aborted.is_none());
        assert_eq!(t.advantages.len(), t.steps.len());
        assert!(t.reflection.is_some());
    }
}
