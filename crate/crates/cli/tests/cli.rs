use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn evalact(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evalact"))
        .args(args)
        .current_dir(cwd)
        .env_remove("EVALACT_CONFIG")
        .env("RUST_BACKTRACE", "0")
        .output()
        .expect("spawn evalact")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn rir_prints_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let s = ok(&evalact(&["rir", "--lambda-base", "0.1", "--lambda-max", "0.5", "--delta", "0.01"], dir.path()));
    assert!((s.trim().parse::<f64>().unwrap() - 3.0).abs() < 1e-12);
    let s = ok(&evalact(&["rir", "--lambda-max", "0.99", "--delta", "0.01"], dir.path()));
    assert!((s.trim().parse::<f64>().unwrap() - 199.0).abs() < 1e-9);
}

#[test]
fn golden_passes() {
    let dir = tempfile::tempdir().unwrap();
    let s = ok(&evalact(&["golden"], dir.path()));
    let v: serde_json::Value = serde_json::from_str(&s).unwrap();
    assert_eq!(v["compliant"], true);
    assert_eq!(v["reward"], 1.0);
}

#[test]
fn synth_train_rollout_eval() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&evalact(&["synth", "--out-dir", "d", "--docs", "30", "--questions", "8"], p));
    assert_eq!(fs::read_to_string(p.join("d/corpus.jsonl")).unwrap().lines().count(), 30);

    let stats = ok(&evalact(&["index", "--corpus", "d/corpus.jsonl", "--dataset", "d/dataset.jsonl"], p));
    let v: serde_json::Value = serde_json::from_str(&stats).unwrap();
    assert_eq!(v["n_docs"], 30);

    let log = ok(&evalact(
        &[
            "train", "--corpus", "d/corpus.jsonl", "--dataset", "d/dataset.jsonl", "--iterations", "3",
            "--out-dir", "o",
        ],
        p,
    ));
    assert_eq!(log.lines().filter(|l| l.starts_with("iter")).count(), 3);
    for f in ["metrics.json", "curves.csv", "curves.svg", "batch.jsonl", "diagnostics.jsonl", "policy.json"] {
        assert!(p.join("o").join(f).is_file(), "{f} missing");
    }
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("o/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics.as_array().unwrap().len(), 3);

    ok(&evalact(
        &[
            "rollout", "--corpus", "d/corpus.jsonl", "--dataset", "d/dataset.jsonl", "--policy", "o/policy.json",
            "--out-dir", "r",
        ],
        p,
    ));
    assert_eq!(fs::read_to_string(p.join("r/rollouts.jsonl")).unwrap().lines().count(), 8 * 5);

    let report = ok(&evalact(&["eval", "--data", "d/dataset.jsonl", "--predictions", "r/rollouts.jsonl"], p));
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["datasets"][0]["n"], 8);
    let em = v["macro_em"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&em));
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("run.kv"), "# small run\ngrpo.group_size = 3\nrun.iterations = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_evalact"))
        .args(["train", "--out-dir", "o", "--set", "run.seed=9"])
        .current_dir(p)
        .env("EVALACT_CONFIG", "run.kv")
        .output()
        .unwrap();
    ok(&out);
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("o/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["group_size"], 3);
    assert_eq!(cfg["seed"], 9);
    assert_eq!(cfg["iterations"], 1);
}

#[test]
fn bad_inputs_fail() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = evalact(&["train", "--set", "nope=1"], p);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));

    let out = evalact(&["train", "--group-size", "1"], p);
    assert!(!out.status.success());

    fs::write(p.join("bad.jsonl"), "{not json\n").unwrap();
    let out = evalact(&["index", "--corpus", "bad.jsonl"], p);
    assert!(!out.status.success());

    let out = evalact(&["eval", "--data", "a", "--data", "b", "--predictions", "c"], p);
    assert!(!out.status.success());
}
