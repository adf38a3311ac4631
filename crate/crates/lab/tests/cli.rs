use std::path::Path;
use std::process::{Command, Output};

use vaml_lab::mdp_json::{load_mdp, mdp_from_json, mdp_to_json};
use vaml_lab::output::{mean_and_se, read_curve_csv};
use vaml_lab_core::env::{Gridworld, GridworldSpec};
use vaml_lab_core::random::{random_mdp, rng_from_seed};

fn lab(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vaml-lab"));
    cmd.args(args).env_remove("VAML_LAB_OUT");
    if let Some(dir) = out_env {
        cmd.env("VAML_LAB_OUT", dir);
    }
    cmd.output().expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

const SMALL: &str = r#"{
  "env": {"grid_size": 5},
  "methods": [METHODS],
  "loop": {"model_steps": 3, "policy_steps": 3, "real_samples": 32, "virtual_samples": 64,
           "eval_interval": 32, "eval_episodes": 3, "rollout_horizon": 8},
  "seeds": [SEEDS],
  "total_env_steps": 96,
  "output_dir": "OUT"
}"#;

fn small_config(dir: &Path, methods: &str, seeds: &str, extra: &str) -> std::path::PathBuf {
    let body = SMALL
        .replace("METHODS", methods)
        .replace("SEEDS", seeds)
        .replace("OUT", &dir.join("out").display().to_string());
    let body = if extra.is_empty() {
        body
    } else {
        body.replacen('{', &format!("{{\n  {extra},"), 1)
    };
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn mdp_json_round_trip() {
    let mut rng = rng_from_seed(5);
    let mdp = random_mdp(&mut rng, 4, 3, 0.9);
    let back = mdp_from_json(&mdp_to_json(&mdp)).unwrap();
    for (a, b) in mdp.transitions().iter().zip(back.transitions()) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert_eq!(mdp.rewards(), back.rewards());
    assert_eq!(mdp.start(), back.start());
}

#[test]
fn build_env_dumps_the_exact_gridworld() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("env.json");
    let out = lab(&["build-env", "--size", "6", "--out", path.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let loaded = load_mdp(&path).unwrap();
    let world = Gridworld::new(GridworldSpec::with_size(6)).unwrap();
    assert_eq!(loaded.transitions(), world.mdp().transitions());
    assert_eq!(loaded.rewards(), world.mdp().rewards());
    assert_eq!(loaded.num_states(), 16);
}

#[test]
fn verify_lemmas_passes_and_zero_trials_warns() {
    let out = lab(&["verify-lemmas", "--trials", "20", "--seed", "3"], None);
    assert!(out.status.success());
    assert!(text(&out.stdout).contains("PASS"));
    let out = lab(&["verify-lemmas", "--trials", "0"], None);
    assert!(out.status.success());
    assert!(text(&out.stderr).contains("warning"));
}

#[test]
fn verify_lemmas_around_a_loaded_mdp_and_rejects_a_broken_one() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    let mdp = random_mdp(&mut rng_from_seed(8), 3, 2, 0.5);
    std::fs::write(&good, mdp_to_json(&mdp)).unwrap();
    let out = lab(&["verify-lemmas", "--trials", "4", "--mdp", good.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", text(&out.stderr));

    let broken = dir.path().join("broken.json");
    let doc = r#"{"num_states": 2, "num_actions": 1, "transition": [[[0.5, 0.4]], [[0.0, 1.0]]],
                  "reward": [[0.0], [1.0]], "start": [1.0, 0.0], "gamma": 0.9, "r_max": 1.0}"#;
    std::fs::write(&broken, doc).unwrap();
    let out = lab(&["verify-lemmas", "--mdp", broken.to_str().unwrap()], None);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("sums to"), "{}", text(&out.stderr));
}

#[test]
fn gradcheck_passes() {
    let out = lab(&["gradcheck", "--seed", "9"], None);
    assert!(out.status.success(), "{}", text(&out.stdout));
    assert!(text(&out.stdout).contains("vaml+vps"));
}

#[test]
fn train_rejects_an_empty_seed_list_with_a_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), r#"{"objective": "mle"}"#, "", "");
    let out = lab(&["train", "--config", config.to_str().unwrap()], None);
    assert!(!out.status.success());
    let err = text(&out.stderr);
    assert!(err.contains("line 6"), "{err}");
}

#[test]
fn train_single_run_writes_increasing_curve() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), r#"{"objective": "ma-ub-l1", "model_lr": 100.0}"#, "4", "");
    let out = lab(&["train", "--config", config.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let runs: Vec<_> = std::fs::read_dir(dir.path().join("out/runs")).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let rows = read_curve_csv(&dir.path().join("out/runs/ma-ub-l1__seed4.csv")).unwrap();
    let steps: Vec<usize> = rows.iter().map(|r| r.env_steps).collect();
    assert_eq!(steps, vec![32, 64, 96]);
    assert!(rows.iter().all(|r| r.seed == 4 && r.method == "ma-ub-l1"));
}

#[test]
fn output_env_var_wins_and_curves_are_recomputable() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), r#"{"objective": "mle", "model_lr": 10.0}, {"objective": "vaml", "model_lr": 100.0}"#, "0, 1, 2", "");
    let elsewhere = dir.path().join("elsewhere");
    let out = lab(&["train", "--config", config.to_str().unwrap(), "--jobs", "3"], Some(&elsewhere));
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(!dir.path().join("out").exists());

    let curves = std::fs::read_to_string(elsewhere.join("curves.csv")).unwrap();
    let mut lines = curves.lines();
    assert_eq!(lines.next(), Some("method,env_steps,runs,mean_return,se_return"));
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let steps: usize = f[1].parse().unwrap();
        let xs: Vec<f64> = (0..3)
            .map(|seed| {
                let rows = read_curve_csv(&elsewhere.join(format!("runs/{}__seed{seed}.csv", f[0]))).unwrap();
                rows.iter().find(|r| r.env_steps == steps).unwrap().mean_return
            })
            .collect();
        let (mean, se) = mean_and_se(&xs);
        assert!((mean - f[3].parse::<f64>().unwrap()).abs() <= 1e-12);
        assert!((se - f[4].parse::<f64>().unwrap()).abs() <= 1e-12);
    }
    let summary = std::fs::read_to_string(elsewhere.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 7);
}

#[test]
fn divergence_is_recorded_without_stopping_other_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), r#"{"objective": "vaml", "model_lr": 1e15}, {"objective": "mle", "model_lr": 10.0}"#, "0", "");
    let out = lab(&["train", "--config", config.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let summary = std::fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("vaml,0,diverged")), "{summary}");
    assert!(summary.lines().any(|l| l.starts_with("mle,0,ok,3")), "{summary}");
}

#[test]
fn sweep_prefers_the_finite_candidate() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(
        dir.path(),
        r#"{"objective": "ma-ub-l1"}"#,
        "0",
        r#""sweep": {"alpha": {"min": 10.0, "max": 1e15, "points": 2}, "seeds": [0, 1]}"#,
    );
    let out = lab(&["sweep", "--config", config.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let method = &report["methods"][0];
    assert_eq!(method["selected"]["alpha"].as_f64(), Some(10.0));
    assert!(method["candidates"][1]["mean_return"].is_null());
    assert!(dir.path().join("out/sweep.json").exists());
}
