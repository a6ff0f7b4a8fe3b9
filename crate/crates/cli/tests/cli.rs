//! End-to-end tests of the `rgm` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rgm_core::convex::{ConvexProblem, ConvexVars, DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE};
use rgm_core::experiments::{gaussian_train_config, segment_circle_data, segment_circle_train_config};
use rgm_core::gw::{bounds, EntropicGwConfig, NetworkSpace};
use rgm_core::maps::MapModel;
use rgm_core::measure::read_csv;
use rgm_core::trainer::{Checkpoint, TrainConfig};
use rgm_core::KernelSpec;
use serde_json::{json, Value};

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(dir: &Path, command: &str, config: &Value, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{command}-config.json"));
    std::fs::write(&cfg, config.to_string()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_rgm"))
        .arg(command)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir)
        .args(extra)
        .output()
        .unwrap()
}

fn ok_results(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    report["results"].clone()
}

fn rbf() -> Value {
    serde_json::to_value(KernelSpec::rbf(1.0)).unwrap()
}

#[test]
fn gen_circle_writes_four_points() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), "gen", &json!({"points": {"type": "circle", "n": 4}}), &[]);
    let r = ok_results(&out);
    assert_eq!(r["rows"], 4);
    let cloud = read_csv(tmp.path().join("points.csv"), false).unwrap();
    let expect = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
    for (i, e) in expect.iter().enumerate() {
        let p = cloud.point(i);
        assert!((p[0] - e[0]).abs() < 1e-15 && (p[1] - e[1]).abs() < 1e-15, "{p:?}");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["command"], "gen");
    assert!(report["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["config"]["points"]["n"], 4);
}

#[test]
fn overrides_and_seed_reach_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({"points": {"type": "gaussian", "n": 3}});
    let out = run(tmp.path(), "gen", &cfg, &["--override", "points.n=6", "--seed", "11"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["results"]["rows"], 6);
    assert_eq!(report["seed"], 11);
    let a = std::fs::read_to_string(tmp.path().join("points.csv")).unwrap();
    run(tmp.path(), "gen", &cfg, &["--override", "points.n=6", "--seed", "12"]);
    let b = std::fs::read_to_string(tmp.path().join("points.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn zero_iteration_training_reports_the_initial_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let mut train = serde_json::to_value(segment_circle_train_config(1.0, 3)).unwrap();
    train["iterations"] = json!(0);
    let r = ok_results(&run(
        tmp.path(),
        "train",
        &json!({"data": {"type": "segment_circle", "n": 5}, "train": train}),
        &[],
    ));
    let total = r["final"]["L"].as_f64().unwrap();
    assert!(total.is_finite() && total > 0.0);
    let trace = std::fs::read_to_string(tmp.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2, "{trace}");
    Checkpoint::load(tmp.path().join("checkpoint.json")).unwrap();
}

#[test]
fn push_through_identity_checkpoint_is_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = Checkpoint {
        forward: MapModel::identity(2),
        backward: MapModel::identity(2),
    };
    let path = tmp.path().join("id.json");
    ckpt.save(&path).unwrap();
    let input = tmp.path().join("in.csv");
    std::fs::write(&input, "0.5,-1.25\n3,4\n").unwrap();
    let r = ok_results(&run(
        tmp.path(),
        "push",
        &json!({"checkpoint": path, "input": {"type": "file", "path": input}}),
        &[],
    ));
    assert_eq!(r["rows"], 2);
    let pushed = read_csv(tmp.path().join("pushed.csv"), false).unwrap();
    assert_eq!(pushed.points().as_slice(), &[0.5, -1.25, 3.0, 4.0]);
}

#[test]
fn bounds_of_identical_clouds_vanish() {
    let tmp = tempfile::tempdir().unwrap();
    let src = json!({"type": "circle", "n": 5});
    let r = ok_results(&run(
        tmp.path(),
        "bounds",
        &json!({"data": {"type": "pair", "source": src, "target": src}, "cost_x": rbf(), "cost_y": rbf()}),
        &[],
    ));
    assert!(r["flb2"].as_f64().unwrap().abs() < 1e-15);
    assert!(r["slb2"].as_f64().unwrap().abs() < 1e-15);
    assert!(r["gm2_oracle"].as_f64().unwrap().abs() < 1e-15);
    assert!(r["gw2_entropic"].as_f64().unwrap() >= 0.0);
}

#[test]
fn convex_command_matches_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({"data": {"type": "segment_circle", "n": 6}, "kernel_x": rbf(), "kernel_y": rbf(), "lambda": [2.0, 2.0, 2.0]});
    let r = ok_results(&run(tmp.path(), "convex", &cfg, &[]));
    let k = KernelSpec::rbf(1.0);
    let p = ConvexProblem::from_data(&k, &k, &segment_circle_data(6).unwrap(), [2.0; 3]).unwrap();
    let sol = p.solve(ConvexVars::zeros(6, 6), DEFAULT_TOLERANCE, DEFAULT_MAX_ITERATIONS).unwrap();
    assert_eq!(r["breakdown"]["omega"].as_f64().unwrap(), sol.breakdown.omega);
    let saved: ConvexVars =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("convex_solution.json")).unwrap()).unwrap();
    assert_eq!(saved, sol.vars);
}

#[test]
fn plots_are_written_and_empty_traces_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let r = ok_results(&run(
        tmp.path(),
        "plot",
        &json!({"plot": {"type": "scatter", "clouds": [{"type": "circle", "n": 7}]}, "output": "c.svg"}),
        &[],
    ));
    assert_eq!(r["points"], 7);
    let svg = std::fs::read_to_string(tmp.path().join("c.svg")).unwrap();
    assert_eq!(svg.matches("class=\"marker\"").count(), 7);

    let trace = tmp.path().join("empty.csv");
    std::fs::write(&trace, "iteration,C0,l1,l2,l3,L\n").unwrap();
    let out = run(
        tmp.path(),
        "plot",
        &json!({"plot": {"type": "trace", "input": trace}, "output": "t.svg"}),
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("t.svg").exists());
}

#[test]
fn exit_codes_distinguish_input_and_numerical_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_key = run(tmp.path(), "gen", &json!({"points": {"type": "circle", "n": 4}, "extra": 1}), &[]);
    assert_eq!(bad_key.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&bad_key.stderr).is_empty());

    let missing = run(
        tmp.path(),
        "gen",
        &json!({"points": {"type": "file", "path": tmp.path().join("nope.csv")}}),
        &[],
    );
    assert_eq!(missing.status.code(), Some(2));

    let cfg = json!({"data": {"type": "segment_circle", "n": 8}, "kernel_x": rbf(), "kernel_y": rbf(),
                     "lambda": [1.0, 1.0, 1.0], "tolerance": 1e-14, "max_iterations": 1});
    let stuck = run(tmp.path(), "convex", &cfg, &[]);
    assert_eq!(stuck.status.code(), Some(3), "{}", String::from_utf8_lossy(&stuck.stderr));
}

#[test]
fn preset_configs_match_the_library_presets() {
    let dir = workspace_root().join("configs");
    let read = |name: &str| -> Value {
        serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
    };
    let sc = read("segment_circle_train.json");
    let train: TrainConfig = serde_json::from_value(sc["train"].clone()).unwrap();
    assert_eq!(train, segment_circle_train_config(1e2, 0));
    let g = read("gaussian_train.json");
    let train: TrainConfig = serde_json::from_value(g["train"].clone()).unwrap();
    assert_eq!(train, gaussian_train_config(0));

    let tmp = tempfile::tempdir().unwrap();
    let r = ok_results(&run(tmp.path(), "bounds", &read("segment_circle_bounds.json"), &[]));
    let data = segment_circle_data(30).unwrap();
    let a = NetworkSpace::new(data.source, KernelSpec::rbf(1.0)).unwrap();
    let b = NetworkSpace::new(data.target, KernelSpec::rbf(1.0)).unwrap();
    let lib = bounds(&a, &b, &EntropicGwConfig::default()).unwrap();
    assert_eq!(r["flb2"].as_f64().unwrap(), lib.flb2);
    assert_eq!(r["gw2_entropic"].as_f64().unwrap(), lib.gw2_entropic);
    assert!(r.get("gm2_oracle").is_none());

    let r = ok_results(&run(tmp.path(), "convex", &read("segment_circle_convex.json"), &[]));
    assert!(r["breakdown"]["m1"].as_f64().unwrap() < 1e-6);
}
