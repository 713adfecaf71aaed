use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_segpoint");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn run_with_stdin(args: &[&str], stdin: &[u8]) -> Output {
    let mut child = Command::new(BIN)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin).unwrap();
    child.wait_with_output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn indices(v: &Value) -> Vec<u64> {
    v["change_points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_u64().unwrap())
        .collect()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn every_subcommand_has_help() {
    for sub in [
        "detect",
        "calibrate",
        "gen",
        "elrt",
        "boxcox",
        "gof",
        "bench",
        "carhop",
    ] {
        let out = run(&[sub, "--help"]);
        assert!(out.status.success(), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
    assert!(run(&["--help"]).status.success());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["detect", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        run(&["gen", "--m", "3", "--changes", "5"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["detect", "--method", "lrt"]).status.code(),
        Some(2),
        "empty stdin is a validation error"
    );
}

#[test]
fn missing_input_exits_3_and_names_the_path() {
    let out = run(&[
        "detect",
        "--method",
        "cluster",
        "--input",
        "/no/such/series.txt",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/series.txt"));
}

#[test]
fn thread_cap_must_be_positive() {
    let out = Command::new(BIN)
        .args(["elrt", "--m", "10", "--runs", "10"])
        .env("SEGPOINT_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(BIN)
        .args(["elrt", "--m", "10", "--runs", "10"])
        .env("SEGPOINT_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn generated_series_pipes_into_lrt_detection() {
    let series = run(&[
        "gen",
        "--m",
        "200",
        "--changes",
        "1",
        "--lambda0",
        "1",
        "--delta",
        "5",
        "--seed",
        "7",
    ]);
    assert!(series.status.success());
    let detect = [
        "detect",
        "--method",
        "lrt",
        "--seed",
        "7",
        "--cal-reps",
        "10",
        "--cal-sets",
        "50",
        "--elrt-runs",
        "500",
    ];
    let out = run_with_stdin(&detect, &series.stdout);
    let result = json(&out);
    let cps = indices(&result);
    assert_eq!(cps.len(), 1, "{result}");
    assert!((95..=105).contains(&cps[0]), "{cps:?}");
    assert_eq!(result["series_length"], 200);
    // identical inputs and options reproduce the output exactly
    assert_eq!(run_with_stdin(&detect, &series.stdout).stdout, out.stdout);
}

#[test]
fn gen_writes_series_sidecar_and_runchart() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.txt");
    let out = run(&[
        "gen",
        "--m",
        "120",
        "--changes",
        "2",
        "--delta",
        "4",
        "--placement",
        "30,90",
        "--seed",
        "3",
        "--out",
        path_str(&file),
        "--emit-runchart",
    ]);
    let sidecar = json(&out);
    assert_eq!(sidecar["true_change_points"], serde_json::json!([30, 90]));
    let on_disk: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.txt.json")).unwrap())
            .unwrap();
    assert_eq!(on_disk, sidecar);
    let values = std::fs::read_to_string(&file).unwrap();
    assert_eq!(values.lines().count(), 120);
    let chart = std::fs::read_to_string(dir.path().join("s.txt.runchart.csv")).unwrap();
    let lines: Vec<&str> = chart.lines().collect();
    assert_eq!(lines[0], "index,value");
    assert_eq!(lines.len(), 121);
    assert!(lines[1].starts_with("1,"));
    assert_eq!(
        lines[1].split(',').nth(1).unwrap(),
        values.lines().next().unwrap()
    );
    assert!(lines[120].starts_with("120,"));
}

#[test]
fn calibrated_profile_feeds_detection() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("h.json");
    let out = run(&[
        "calibrate",
        "--method",
        "cluster",
        "--m",
        "120",
        "--reps",
        "20",
        "--sets",
        "50",
        "--seed",
        "5",
        "--out",
        path_str(&profile),
    ]);
    let p = json(&out);
    assert_eq!(p["g"], 7);
    assert_eq!(p["provenance"]["kind"], "calibrated");

    // two flat runs with slight jitter; the last index of the first run is 50
    let series = dir.path().join("s.txt");
    let text: String = (0..120)
        .map(|i| {
            let base = if i < 50 { 1.0 } else { 8.0 };
            format!("{}\n", base + 0.05 * (i as f64).sin())
        })
        .collect();
    std::fs::write(&series, text).unwrap();
    let result = json(&run(&[
        "detect",
        "--method",
        "cluster",
        "--transform",
        "off",
        "--input",
        path_str(&series),
        "--thresholds",
        path_str(&profile),
    ]));
    assert_eq!(result["method"], "cluster");
    assert_eq!(indices(&result)[0], 50, "{result}");
    assert_eq!(result["levels"][0]["location"], 50);
    let limited = json(&run(&[
        "detect",
        "--method",
        "cluster",
        "--transform",
        "off",
        "--input",
        path_str(&series),
        "--thresholds",
        path_str(&profile),
        "--max-changes",
        "2",
    ]));
    assert_eq!(limited["levels"].as_array().unwrap().len(), 2);

    let wrong = run(&[
        "detect",
        "--method",
        "lrt",
        "--input",
        path_str(&series),
        "--thresholds",
        path_str(&profile),
    ]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn manifest_records_inputs_and_options() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("s.txt");
    std::fs::write(
        &series,
        "value\n1.5\n0.2\n3.1\n0.7\n2.2\n0.9\n1.1\n4.0\n0.3\n",
    )
    .unwrap();
    let manifest = dir.path().join("run.json");
    let out = run(&[
        "gof",
        "--input",
        path_str(&series),
        "--manifest",
        path_str(&manifest),
    ]);
    let report = json(&out);
    assert_eq!(report["sample_size"], 9);
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["subcommand"], "gof");
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["options"]["input"], path_str(&series));
    assert_eq!(m["inputs"][0]["bytes"], 42);
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(m["started"].is_string() && m["finished"].is_string());

    // without --manifest it goes to stderr
    let out = run(&["gof", "--input", path_str(&series)]);
    let stderr: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(stderr["subcommand"], "gof");
}

#[test]
fn boxcox_reports_exponent_and_values() {
    let out = run_with_stdin(&["boxcox", "--eta", "0"], b"1\n2.718281828459045\n");
    let v = json(&out);
    assert_eq!(v["eta"], 0.0);
    let vals = v["values"].as_array().unwrap();
    assert_eq!(vals[0], 0.0);
    assert!((vals[1].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(
        run_with_stdin(&["boxcox"], b"1\n-2\n3\n").status.code(),
        Some(2)
    );
}

#[test]
fn elrt_dumps_csv() {
    let out = run(&["elrt", "--m", "20", "--runs", "200", "--seed", "1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "m_1,elrt");
    assert_eq!(lines.len(), 1 + 17);
    assert!(lines[1].starts_with("2,"));
}

#[test]
fn carhop_summary_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "carhop",
        "--mode",
        "I",
        "--reps",
        "5",
        "--seed",
        "4",
        "--audit",
        "--audit-rep",
        "2",
        "--out",
        path_str(dir.path()),
    ]);
    let s = json(&out);
    assert_eq!(s["replications"], 5);
    let audit = std::fs::read_to_string(dir.path().join("audit.csv")).unwrap();
    assert!(audit.starts_with("time,event,customer,server,queue_len,in_system"));
    assert_eq!(
        audit.lines().filter(|l| l.contains(",arrival,")).count(),
        200
    );
    assert!(dir.path().join("summary.json").exists());
    assert_eq!(
        run(&["carhop", "--mode", "II", "--audit"]).status.code(),
        Some(2)
    );
    let pooled = json(&run(&[
        "carhop",
        "--mode",
        "II",
        "--reps",
        "3",
        "--pool-from-seed",
    ]));
    assert!(pooled["pooled_mean"].as_f64().unwrap() > 0.0);
}

#[test]
fn bench_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "bench",
        "--method",
        "cluster",
        "--transform",
        "off",
        "--scale",
        "0.02",
        "--changes",
        "1,2",
        "--deltas",
        "2,5",
        "--seed",
        "9",
        "--out",
        path_str(dir.path()),
    ]);
    let v = json(&out);
    assert_eq!(v["reps"], 20);
    assert_eq!(v["cells"], 4);
    for f in [
        "accuracy.md",
        "accuracy.csv",
        "precision.md",
        "precision.csv",
        "bundle.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let bundle: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("bundle.json")).unwrap())
            .unwrap();
    assert_eq!(bundle["cells"].as_array().unwrap().len(), 4);
}
