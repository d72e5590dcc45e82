//! Pipeline-level integration tests: exit codes, command wiring, resumable
//! reporting, and the compare command.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fairaudit")
}

fn base_config(dir: &Path, out_dir: &Path, extra: &str) -> PathBuf {
    let cfg = format!(
        r#"
master_seed = 7
output_dir = "{}"

[dataset]
source = "synth"
n_per_group = 25
groups = 3
dims = 5
separation = 2.0
label_noise = 0.1

[split]
train_fraction = 0.8
audit_samples = 18

[model]
arch = "lr"

[train]
algorithm = "sgd"
epochs = 6
batch_size = 60
learning_rate = 0.3
clip_bound = 10.0
scale_bound = 2.0
persist_clip_bound = false
group_denominator = "full-dataset"

[audit]
method = "alooa"
rounds = 4
threshold_rule = "lower-loss-member"
{extra}
"#,
        out_dir.display()
    );
    let path = dir.join("cfg.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(bin()).args(args).output().unwrap()
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = base_config(dir.path(), &out, "unknown_key = 1");
    let result = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn bad_enum_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = base_config(dir.path(), &out, "");
    let result = run(&[
        "audit",
        "--config",
        cfg.to_str().unwrap(),
        "--method",
        "shadow",
    ]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn report_without_artifacts_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = base_config(dir.path(), &out, "");
    let result = run(&["report", "--config", cfg.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&result.stderr);
    assert!(msg.contains("missing artifact"), "{msg}");
}

#[test]
fn per_class_exceeding_source_exits_3_with_class_name() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = base_config(dir.path(), &out, "");
    let result = run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--per-class",
        "999",
    ]);
    assert_eq!(result.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&result.stderr).contains("class"));
}

#[test]
fn looa_requires_target_index() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = base_config(dir.path(), &out, "");
    let result = run(&[
        "audit",
        "--config",
        cfg.to_str().unwrap(),
        "--method",
        "looa",
    ]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn dpsgds_logs_group_bounds_every_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = base_config(
        dir.path(),
        &out,
        "",
    );
    let result = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--algorithm",
        "dpsgds",
        "--epsilon",
        "10",
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let log = std::fs::read_to_string(out.join("iterations.csv")).unwrap();
    for line in log.lines().skip(2).filter(|l| !l.contains(",true,")) {
        // clip_per_group column holds K=3 pipe-joined bounds
        let bounds = line.split(',').nth(4).unwrap();
        assert_eq!(bounds.split('|').count(), 3, "line {line}");
    }
    // ledger present with epsilon at or under target
    let ledger: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("ledger.json")).unwrap()).unwrap();
    let eps = ledger["ledger"]["epsilon"].as_f64().unwrap();
    assert!(eps <= 10.0, "epsilon {eps}");
}

#[test]
fn full_pipeline_smoke_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_g = dir.path().join("g");
    let cfg = base_config(dir.path(), &out_a, "");
    let c = cfg.to_str().unwrap();

    for args in [
        vec!["gen-data", "--config", c],
        vec!["train", "--config", c],
        vec!["audit", "--config", c],
        vec!["report", "--config", c],
    ] {
        let result = run(&args);
        assert!(
            result.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&result.stderr)
        );
    }

    // Same data and seed, per-round-threshold method, then compare traces.
    let result = run(&[
        "audit",
        "--config",
        c,
        "--out-dir",
        out_g.to_str().unwrap(),
        "--method",
        "ga",
    ]);
    assert!(result.status.success());
    let result = run(&[
        "compare",
        "--config",
        c,
        "--trace-a",
        out_a.join("trace").to_str().unwrap(),
        "--trace-b",
        out_g.join("trace").to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let cmp: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_a.join("comparison.json")).unwrap(),
    )
    .unwrap();
    assert!(cmp["kruskal_wallis_p"].as_f64().unwrap() >= 0.0);

    // Comparing a trace against itself yields exact zeros and p = 1.
    let result = run(&[
        "compare",
        "--config",
        c,
        "--trace-a",
        out_a.join("trace").to_str().unwrap(),
        "--trace-b",
        out_a.join("trace").to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let cmp: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_a.join("comparison.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(cmp["mean_abs_diff"].as_f64().unwrap(), 0.0);
    assert_eq!(cmp["mean_signed_diff"].as_f64().unwrap(), 0.0);
    assert_eq!(cmp["kruskal_wallis_p"].as_f64().unwrap(), 1.0);

    // Disjoint sample sets cannot be compared.
    let out_m = dir.path().join("m");
    let result = run(&[
        "audit",
        "--config",
        c,
        "--out-dir",
        out_m.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert!(result.status.success());
    let result = run(&[
        "compare",
        "--config",
        c,
        "--trace-a",
        out_a.join("trace").to_str().unwrap(),
        "--trace-b",
        out_m.join("trace").to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(3));
}

#[test]
fn gen_data_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let cfg = base_config(dir.path(), &out_a, "");
    let c = cfg.to_str().unwrap();
    assert!(run(&["gen-data", "--config", c]).status.success());
    assert!(run(&["gen-data", "--config", c, "--out-dir", out_b.to_str().unwrap()])
        .status
        .success());
    let a = std::fs::read(out_a.join("data.bin")).unwrap();
    let b = std::fs::read(out_b.join("data.bin")).unwrap();
    assert_eq!(a, b);
}
