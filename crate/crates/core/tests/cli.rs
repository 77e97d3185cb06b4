use std::path::Path;
use std::process::{Command, Output};

fn abmgc(args: &[&str], extra: &[&Path]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_abmgc"));
    c.args(args);
    for p in extra {
        c.arg(p);
    }
    c.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, "[train]\nepochs = 4\n\n[train.init]\nhidden = 4\n\n[simulation]\nagents = 3\nsteps = 40\n").unwrap();
    p
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&abmgc(&["--help"], &[])), 0);
    assert_eq!(code(&abmgc(&["simulate"], &[])), 1);
    assert_eq!(code(&abmgc(&["simulate", "--system", "ants", "--out", "/tmp/x"], &[])), 1);
    assert_eq!(code(&abmgc(&["bogus"], &[])), 1);
}

#[test]
fn bad_config_exits_one_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nepochs = 3\nlambda = -1.0\n").unwrap();
    let o = abmgc(&["simulate", "--system", "boid", "--out"], &[&dir.path().join("o"), Path::new("--config"), &cfg]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::write(&cfg, "[train]\nepochs = 3\nnot_a_key = 1\n").unwrap();
    let o = abmgc(&["simulate", "--system", "boid", "--out"], &[&dir.path().join("o"), Path::new("--config"), &cfg]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.toml:3:"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = abmgc(&["train", "--input"], &[&dir.path().join("none.csv"), Path::new("--out"), dir.path()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_experiment_validate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data");
    let o = abmgc(&["simulate", "--system", "kuramoto", "--trials", "2", "--seed", "3", "--config"], &[&cfg, Path::new("--out"), &data]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("manifest.json").exists() && data.join("trial_001.csv").exists());

    for method in ["abm", "linear_gc", "local_te"] {
        let out = dir.path().join(method);
        let o = abmgc(
            &["experiment", "--system", "kuramoto", "--method", method, "--config"],
            &[&cfg, Path::new("--data"), &data, Path::new("--out"), &out],
        );
        assert_eq!(code(&o), 0, "{method}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("metrics.json").exists() && out.join("summary.csv").exists());
    }
    let o = abmgc(
        &["experiment", "--system", "kuramoto", "--no-tg", "--no-navigation", "--config"],
        &[&cfg, Path::new("--data"), &data, Path::new("--out"), &dir.path().join("ablated")],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let o = abmgc(&["validate", "--out"], &[dir.path()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));

    std::fs::write(dir.path().join("abm").join("summary.csv"), "metric,mean\nacc,0.5\n").unwrap();
    assert_eq!(code(&abmgc(&["validate", "--out"], &[dir.path()])), 1);
}

#[test]
fn experiment_on_other_system_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data");
    assert_eq!(code(&abmgc(&["simulate", "--system", "boid", "--trials", "1", "--config"], &[&cfg, Path::new("--out"), &data])), 0);
    let o = abmgc(&["experiment", "--system", "kuramoto", "--config"], &[&cfg, Path::new("--data"), &data, Path::new("--out"), &dir.path().join("x")]);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_infer_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data");
    assert_eq!(code(&abmgc(&["simulate", "--system", "boid", "--trials", "1", "--config"], &[&cfg, Path::new("--out"), &data])), 0);
    let input = data.join("trial_000.csv");
    let truth = data.join("trial_000.truth.json");
    let out = dir.path().join("train");
    let o = abmgc(&["train", "--config"], &[&cfg, Path::new("--input"), &input, Path::new("--truth"), &truth, Path::new("--out"), &out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let infer = dir.path().join("infer");
    let o = abmgc(
        &["infer", "--config"],
        &[&cfg, Path::new("--model"), &out.join("model.json"), Path::new("--input"), &input, Path::new("--truth"), &truth, Path::new("--out"), &infer],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trained = std::fs::read_to_string(out.join("gc.json")).unwrap();
    assert_eq!(trained, std::fs::read_to_string(infer.join("gc.json")).unwrap());
    let eval = dir.path().join("eval");
    let o = abmgc(&["eval", "--gc"], &[&infer.join("gc.json"), Path::new("--truth"), &truth, Path::new("--out"), &eval]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(eval.join("metrics.json").exists());
}

#[test]
fn analyze_writes_all_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let input = dir.path().join("tracks.csv");
    let mut csv = String::from("frame,agent,x,y\n");
    for f in 0..90 {
        let t = f as f64 / 30.0;
        for (a, (x, y)) in [(t, 0.5 * t), (2.0 - t, (3.0 * t).sin()), (t.cos(), t.sin())].into_iter().enumerate() {
            csv.push_str(&format!("{f},{a},{x},{y}\n"));
        }
    }
    std::fs::write(&input, csv).unwrap();
    let out = dir.path().join("analysis");
    let o = abmgc(&["analyze", "--fps", "30", "--bin-seconds", "1", "--config"], &[&cfg, Path::new("--input"), &input, Path::new("--out"), &out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["gc.json", "coefficients.csv", "trace.csv", "durations.csv", "history.csv", "model.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let durations = std::fs::read_to_string(out.join("durations.csv")).unwrap();
    assert!(durations.starts_with("bin,source,target,positive_seconds,negative_seconds"));
    // 3 one-second bins, 6 ordered pairs each.
    assert_eq!(durations.lines().count(), 1 + 3 * 6);
    assert_eq!(code(&abmgc(&["validate", "--out"], &[&out])), 0);
}
