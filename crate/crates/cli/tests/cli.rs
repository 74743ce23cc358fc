//! Black-box tests of the `ovvis` binary: the synth/run/eval/ablate flow
//! and the documented exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn ovvis(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ovvis"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

#[test]
fn synth_run_eval_flow_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = ovvis(
        &["synth", "--kind", "stable", "--seed", "5", "--out", "bundle", "--n", "4", "--frames", "3"],
        dir.path(),
    );
    assert!(out.status.success(), "synth failed: {out:?}");

    let out = ovvis(
        &["run", "--bundle", "bundle", "--strategy", "topk", "--T", "9", "--K", "5", "--out", "preds.json"],
        dir.path(),
    );
    assert!(out.status.success(), "run failed: {out:?}");

    std::fs::write(
        dir.path().join("novel.json"),
        b"{\"novel_categories\": [2, 3]}",
    )
    .unwrap();
    let out = ovvis(
        &["eval", "--pred", "preds.json", "--gt", "bundle/ground_truth.json", "--novel", "novel.json"],
        dir.path(),
    );
    assert!(out.status.success(), "eval failed: {out:?}");
    let result: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(result["ap"], 1.0);
    assert_eq!(result["ap_n"], 1.0);
    assert_eq!(result["per_threshold"].as_array().unwrap().len(), 10);
}

#[test]
fn run_outputs_are_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    ovvis(
        &["synth", "--kind", "disappear_reappear", "--seed", "11", "--out", "bundle"],
        dir.path(),
    );
    for out_name in ["a.json", "b.json"] {
        let out = ovvis(
            &["run", "--bundle", "bundle", "--strategy", "longterm", "--out", out_name],
            dir.path(),
        );
        assert!(out.status.success());
    }
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    let b = std::fs::read(dir.path().join("b.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ablate_writes_the_fixed_csv_header_in_grid_order() {
    let dir = tempfile::tempdir().unwrap();
    for seed in [1, 2] {
        let out = ovvis(
            &[
                "synth", "--kind", "stable", "--seed", &seed.to_string(),
                "--out", &format!("suite/b{seed}"), "--n", "4", "--frames", "3",
            ],
            dir.path(),
        );
        assert!(out.status.success());
    }
    let out = ovvis(
        &["ablate", "--bundles", "suite", "--grid", "adjacent,longterm,3x1,9x5", "--out", "table.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "ablate failed: {out:?}");
    let csv = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "strategy,T,K,AP,AP_n,id_switches,runtime_ms");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("adjacent,-,-,"));
    assert!(lines[2].starts_with("longterm,-,-,"));
    assert!(lines[3].starts_with("topk,3,1,"));
    assert!(lines[4].starts_with("topk,9,5,"));
}

#[test]
fn missing_bundle_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = ovvis(
        &["run", "--bundle", "does_not_exist", "--strategy", "adjacent", "--out", "x.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_inputs_exit_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = ovvis(
        &["synth", "--kind", "flicker", "--seed", "1", "--out", "b"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));

    // K > T violates the strategy invariant.
    ovvis(
        &["synth", "--kind", "stable", "--seed", "1", "--out", "b", "--n", "4", "--frames", "2"],
        dir.path(),
    );
    let out = ovvis(
        &["run", "--bundle", "b", "--strategy", "topk", "--T", "3", "--K", "5", "--out", "x.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}
