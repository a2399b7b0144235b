use std::fs;
use std::path::Path;
use std::process::Command;

use edgesense::baselines::PolicyKind;
use edgesense::config::{load_config, ExperimentConfig};
use edgesense::ddpg::{load_checkpoint, save_checkpoint, TrainConfig};
use edgesense::experiment::{run_eval, train_policy, PolicySpec, Setup};

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.evaluation.repetitions = 4;
    cfg.evaluation.horizon = Some(20);
    cfg.training = TrainConfig {
        episodes: 2,
        steps: 10,
        hidden: 8,
        batch: 4,
        ..TrainConfig::default()
    };
    cfg
}

fn setup() -> Setup {
    Setup::new(small_config()).unwrap()
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let path = dir.path().join("run.toml");
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let mut back = load_config(&path).unwrap();
    back.base_dir = cfg.base_dir.clone();
    assert_eq!(back, cfg);
}

#[test]
fn evaluation_is_deterministic() {
    let s = setup();
    let bounds = s.bounds(10, 0.95).unwrap();
    let w = s.cfg.weights().unwrap();
    for kind in [PolicyKind::Spm, PolicyKind::Rsm, PolicyKind::Psm] {
        let spec = PolicySpec::Baseline(kind);
        let a = run_eval(&s, &spec, w, bounds, 3, 20, 7, true).unwrap();
        let b = run_eval(&s, &spec, w, bounds, 3, 20, 7, true).unwrap();
        assert_eq!(a, b, "{kind}");
    }
}

#[test]
fn single_run_single_slot() {
    let s = setup();
    let bounds = s.bounds(10, 0.95).unwrap();
    let out = run_eval(&s, &PolicySpec::Baseline(PolicyKind::Spm), s.cfg.weights().unwrap(), bounds, 1, 1, 0, false)
        .unwrap();
    assert_eq!(out.runs.len(), 1);
    assert!(out.mean_cost.is_finite() && out.mean_cost > 0.0);
    assert_eq!(out.cost_stderr, 0.0);
    assert!(run_eval(&s, &PolicySpec::Constant(0.5), s.cfg.weights().unwrap(), bounds, 0, 1, 0, false).is_err());
}

#[test]
fn rsm_seeds_agree_within_standard_error() {
    let s = setup();
    let bounds = s.bounds(10, 0.95).unwrap();
    let w = s.cfg.weights().unwrap();
    let spec = PolicySpec::Baseline(PolicyKind::Rsm);
    let a = run_eval(&s, &spec, w, bounds, 30, 50, 1, false).unwrap();
    let b = run_eval(&s, &spec, w, bounds, 30, 50, 2, false).unwrap();
    let se = (a.cost_stderr.powi(2) + b.cost_stderr.powi(2)).sqrt();
    assert!((a.mean_cost - b.mean_cost).abs() <= 3.0 * se, "{} vs {} (se {se})", a.mean_cost, b.mean_cost);
}

#[test]
fn power_weight_leaves_accuracy_unchanged() {
    let s = setup();
    let bounds = s.bounds(10, 0.95).unwrap();
    let spec = PolicySpec::Baseline(PolicyKind::Spm);
    let cheap = run_eval(&s, &spec, s.cfg.weights_with_ratio(0.0).unwrap(), bounds, 2, 20, 3, false).unwrap();
    let dear = run_eval(&s, &spec, s.cfg.weights_with_ratio(10.0).unwrap(), bounds, 2, 20, 3, false).unwrap();
    assert!((cheap.mean_accuracy - dear.mean_accuracy).abs() <= 1e-12 * cheap.mean_accuracy);
    assert!(dear.mean_cost > cheap.mean_cost);
}

#[test]
fn trained_actor_survives_checkpoint() {
    let s = setup();
    let bounds = s.bounds(10, 0.95).unwrap();
    let w = s.cfg.weights().unwrap();
    let out = train_policy(&s, w, bounds, &s.cfg.training, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("actor.txt");
    save_checkpoint(&path, &out.actor).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let a = run_eval(&s, &PolicySpec::Learned(out.actor), w, bounds, 2, 15, 9, true).unwrap();
    let b = run_eval(&s, &PolicySpec::Learned(loaded), w, bounds, 2, 15, 9, true).unwrap();
    assert_eq!(a, b);
}

fn cli(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_edgesense"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

#[test]
fn cli_eval_writes_reproducible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "[evaluation]\nrepetitions = 3\nhorizon = 15\n",
    )
    .unwrap();
    for out in ["a", "b"] {
        let res = cli(dir.path(), &["eval", "--config", "run.toml", "--seed", "4", "--out", out, "--policy", "psm"]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        assert!(dir.path().join(out).join("manifest.json").exists());
    }
    let read = |out: &str| fs::read(dir.path().join(out).join("summary.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
}

#[test]
fn cli_bounds_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let res = cli(dir.path(), &["bounds", "--out", "o"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(dir.path().join("o/bounds.csv")).unwrap();
    assert!(text.lines().count() >= 2);

    fs::write(dir.path().join("bad.toml"), "[hotroll]\nspeeed = 5.0\n").unwrap();
    let res = cli(dir.path(), &["bounds", "--config", "bad.toml", "--out", "o2"]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("speeed"));

    fs::write(dir.path().join("files.toml"), "[plant]\nmodel = \"files\"\n").unwrap();
    let res = cli(dir.path(), &["bounds", "--config", "files.toml", "--out", "o3"]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("plant_files"));
}
