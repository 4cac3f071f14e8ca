use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const FIELDS: [&str; 10] = [
    "time",
    "stress",
    "strain",
    "shear",
    "scenario",
    "load_factor",
    "instability_index",
    "cat",
    "cat_embedding",
    "damage_increment",
];

const SMALL: &str = r#"
seeds = [0, 1]
ages = [20.0, 80.0]
[ppo]
total_steps = 1024
rollout_len = 256
hidden = [16]
[evolution]
generations = 2
popsize = 4
rl_steps_short = 256
rl_steps_long = 256
[probe]
n_pairs = 2
rl_steps = 256
"#;

fn afferent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afferent")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    afferent(args).status.code().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(code(&["train", "--ablation", "bogus", "--out", out]), 2);
    assert_eq!(code(&["simulate", "--scenario", "marathon", "--out", out]), 2);
    assert_eq!(code(&["train", "--ages", "5", "--out", out]), 2);
    assert_eq!(code(&["train", "--config", "/does/not/exist.toml"]), 2);
    let bad = write_config(dir.path(), "[ppo]\nclip = -1.0\n");
    assert_eq!(code(&["train", "--config", &bad, "--out", out]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
}

#[test]
fn runtime_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    assert_eq!(code(&["simulate", "--out", out.to_str().unwrap()]), 3);
}

#[test]
fn config_subcommand_prints_loadable_toml() {
    let dir = tempfile::tempdir().unwrap();
    let o = afferent(&["config", "--seed", "7"]);
    assert!(o.status.success());
    let path = write_config(dir.path(), std::str::from_utf8(&o.stdout).unwrap());
    let again = afferent(&["config", "--config", &path]);
    assert_eq!(again.stdout, o.stdout);
}

#[test]
fn simulate_writes_fifteen_rollouts_with_the_full_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&["simulate", "--out", out.to_str().unwrap()]), 0);
    let files: Vec<_> = fs::read_dir(out.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), 15);
    for f in &files {
        let text = fs::read_to_string(f).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 80, "{}", f.display());
        for line in lines {
            let v: Value = serde_json::from_str(line).unwrap();
            let obj = v.as_object().unwrap();
            for field in FIELDS {
                assert!(obj.contains_key(field), "{field} missing in {}", f.display());
            }
            let cat = obj["cat"].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&cat));
            assert_eq!(obj["cat_embedding"].as_array().unwrap().len(), 8);
        }
    }
}

#[test]
fn stress_distribution_differs_between_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&["simulate", "--out", out.to_str().unwrap()]), 0);
    let stresses = |scenario: &str| {
        let mut v: Vec<f64> = (0..5)
            .flat_map(|r| {
                let text = fs::read_to_string(out.join(format!("runs/simulate_{scenario}_{r:02}.jsonl"))).unwrap();
                text.lines()
                    .map(|l| serde_json::from_str::<Value>(l).unwrap()["stress"].as_f64().unwrap())
                    .collect::<Vec<_>>()
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let (a, b) = (stresses("normal"), stresses("meniscus_overload"));
    let ecdf = |xs: &[f64], x: f64| xs.partition_point(|&v| v <= x) as f64 / xs.len() as f64;
    let ks = a.iter().chain(&b).map(|&x| (ecdf(&a, x) - ecdf(&b, x)).abs()).fold(0.0, f64::max);
    assert!(ks > 0.0);
}

#[test]
fn every_subcommand_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for cmd in ["simulate", "train", "evaluate", "evolve", "probe-lipschitz", "ablate"] {
        let trees: Vec<_> = ["a", "b"]
            .iter()
            .map(|run| {
                let out = dir.path().join(format!("{cmd}_{run}"));
                assert_eq!(code(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap()]), 0, "{cmd}");
                read_tree(&out)
            })
            .collect();
        assert!(!trees[0].is_empty(), "{cmd} wrote nothing");
        assert!(trees[0] == trees[1], "{cmd} outputs differ between identical runs");
    }
}

#[test]
fn ablation_logs_respect_variant_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    assert_eq!(code(&["ablate", "--config", &cfg, "--out", out.to_str().unwrap()]), 0);

    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("reports/ablation.json")).unwrap()).unwrap();
    let variants = report["variants"].as_object().unwrap();
    assert_eq!(variants.len(), 5);
    assert!(variants["no_amm"].get("mean_recall_risk").is_none());
    assert!(variants["full"].get("mean_recall_risk").is_some());
    assert_eq!(variants["no_evolution"]["genome_source"], "hand_designed");
    assert_eq!(
        report["bonferroni_multiplier"].as_u64().unwrap() as usize,
        report["comparisons"].as_object().unwrap().len()
    );

    for entry in fs::read_dir(out.join("runs")).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        for line in fs::read_to_string(&path).unwrap().lines() {
            let v: Value = serde_json::from_str(line).unwrap();
            if name.starts_with("no_cat") {
                assert!(v.get("cat").is_none(), "{name}");
                assert_eq!(v["obs_layout"], "features");
                assert_eq!(v["obs"].as_array().unwrap().len(), 3);
            } else {
                assert!(v.get("cat").is_some(), "{name}");
            }
            if name.starts_with("no_amm") {
                assert!(v.get("y_hat").is_none(), "{name}");
            }
        }
    }
}
