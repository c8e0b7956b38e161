use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn ergolab(args: &[&str], config: Option<&str>, out: &Path) -> i32 {
    let dir = out.parent().unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ergolab"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(text) = config {
        let path = dir.join(format!(
            "{}.cfg.json",
            out.file_name().unwrap().to_string_lossy()
        ));
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.status().unwrap().code().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn build_writes_heights() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("build");
    assert_eq!(ergolab(&["build"], Some(r#"{"j_max": 7}"#), &out), 0);
    let stages = read_json(&out.join("stages.json"));
    let h: Vec<&str> = stages
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["h"].as_str().unwrap())
        .collect();
    assert_eq!(h, ["1", "4", "24", "288", "5760", "172800", "7257600"]);
    assert_eq!(
        fs::read_to_string(out.join("config.json")).unwrap(),
        r#"{"j_max": 7}"#
    );
    let meta = read_json(&out.join("metadata.json"));
    assert_eq!(meta["preset"], "basic");
}

#[test]
fn build_accepts_empty_markers_and_staircase() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(
        ergolab(&["build"], Some(r#"{"j_max": 6, "marker_stages": []}"#), &a),
        0
    );
    assert_eq!(
        ergolab(
            &["build"],
            Some(r#"{"j_max": 6, "preset": "staircase-mixing"}"#),
            &b
        ),
        0
    );
    let sa = read_json(&a.join("stages.json"));
    let sb = read_json(&b.join("stages.json"));
    assert_eq!(sa[0]["r"], sb[0]["r"]);
    assert_ne!(sa[0]["s"], sb[0]["s"]);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        (vec!["build"], r#"{"j_max": 0}"#),
        (vec!["build"], r#"{"marker_stages": [3]}"#),
        (vec!["build"], r#"{"marker_stages": "odd"}"#),
        (vec!["build"], r#"{"no_such_field": 1}"#),
        (vec!["build"], "not json"),
        (vec!["verify"], r#"{"verify": {"j": 7}}"#),
        (vec!["verify"], r#"{"verify": {"j": 0}}"#),
        (vec!["series"], r#"{"j_top": 4}"#),
        (vec!["series"], r#"{"model": {"kind": "poisson", "m": 0}}"#),
        (vec!["series"], r#"{"checkpoint_ratio": 1.0}"#),
    ];
    for (i, (args, cfg)) in cases.iter().enumerate() {
        let out = tmp.path().join(format!("case{i}"));
        assert_eq!(ergolab(args, Some(cfg), &out), 2, "{cfg}");
    }
}

#[test]
fn verify_exit_code_follows_report() {
    let tmp = tempfile::tempdir().unwrap();
    for j in [1u32, 2] {
        let out = tmp.path().join(format!("verify{j}"));
        let cfg = format!(r#"{{"j_max": 7, "verify": {{"j": {j}, "conjugacy_n_max": 200}}}}"#);
        let code = ergolab(&["verify"], Some(&cfg), &out);
        let lemma = read_json(&out.join("lemma2.json"));
        let conj = read_json(&out.join("conjugacy.json"));
        let clean = lemma["windows"]
            .as_array()
            .unwrap()
            .iter()
            .all(|w| w["violations"].as_array().unwrap().is_empty());
        assert_eq!(conj["mismatches"], serde_json::json!([]));
        if j == 1 {
            // Diagnostic only.
            assert_eq!(lemma["asserted"], false);
            assert_eq!(code, 0);
        } else {
            assert_eq!(code, if clean { 0 } else { 1 });
        }
    }
}

#[test]
fn series_small_run_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"j_max": 6, "j_top": 2, "model": {"kind": "gaussian", "m": 1}}"#;
    let a = tmp.path().join("s1");
    let b = tmp.path().join("s2");
    assert_eq!(ergolab(&["series"], Some(cfg), &a), 0);
    assert_eq!(ergolab(&["series"], Some(cfg), &b), 0);
    for f in ["series.csv", "report.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let csv = fs::read_to_string(a.join("series.csv")).unwrap();
    assert!(csv.starts_with("n,overlap_num,overlap_den,integrand,a_n,is_milestone\n"));
    let report = read_json(&a.join("report.json"));
    assert_eq!(
        report["divergence"]["milestones"].as_array().unwrap().len(),
        8
    );
    assert_eq!(report["divergence"]["all_within_bracket"], true);

    let r = tmp.path().join("r");
    assert_eq!(ergolab(&["report"], Some(cfg), &r), 0);
    assert!(!r.join("series.csv").exists());
    assert_eq!(read_json(&r.join("report.json")), report);
}

#[test]
fn mc_check_small() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"mc_samples": 20000, "seed": 99}"#;
    let a = tmp.path().join("mc1");
    let b = tmp.path().join("mc2");
    assert_eq!(ergolab(&["mc-check"], Some(cfg), &a), 0);
    assert_eq!(ergolab(&["mc-check"], Some(cfg), &b), 0);
    let log = fs::read_to_string(a.join("mc_check.log")).unwrap();
    assert!(log.contains("samples=20000"));
    assert_eq!(log.lines().filter(|l| l.starts_with("PASS")).count(), 6);
    assert_eq!(log, fs::read_to_string(b.join("mc_check.log")).unwrap());
}

#[test]
fn missing_output_dir_is_config_error() {
    let status = Command::new(env!("CARGO_BIN_EXE_ergolab"))
        .arg("build")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
