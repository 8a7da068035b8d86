use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn scalewave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scalewave"))
        .args(args)
        .env("SCALEWAVE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn out_dir(tmp: &TempDir, name: &str) -> String {
    tmp.path().join(name).display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn exponents_report_window() {
    let tmp = TempDir::new().unwrap();
    let out = out_dir(&tmp, "e");
    let o = scalewave(&["exponents", "--n", "4", "--mu", "2", "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(Path::new(&out).join("exponents.json")).unwrap()).unwrap();
    let p_low = json["window"]["p_low"].as_f64().unwrap();
    let p_high = json["window"]["p_high"].as_f64().unwrap();
    assert!((p_low - 1.6434).abs() < 1e-4, "{p_low}");
    assert!((p_high - 1.8).abs() < 1e-12);
    assert!(Path::new(&out).join("config.snapshot").exists());
}

#[test]
fn bad_input_exits_with_one_and_names_the_field() {
    let tmp = TempDir::new().unwrap();
    let out = out_dir(&tmp, "x");
    let o = scalewave(&["exponents", "--mu", "abc", "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`mu`"), "{}", stderr(&o));

    let o = scalewave(&["exponents", "--bogus", "3"]);
    assert_eq!(o.status.code(), Some(1));

    let o = scalewave(&["exponents", "--n", "5", "--p", "1.5", "--kappa", "0.5", "--out", &out]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = scalewave(&["propagate-linear", "--grid", "2x9", "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`grid`"));

    let o = scalewave(&["propagate-linear", "--set", "colour=blue", "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn zero_data_gives_all_zero_csv() {
    let tmp = TempDir::new().unwrap();
    let out = out_dir(&tmp, "z");
    let o = scalewave(&["propagate-linear", "--set", "data=zero", "--grid", "5x6", "--tmax", "3", "--rmax", "5", "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&Path::new(&out).join("linear.csv"));
    assert_eq!(rows.len(), 30);
    for row in rows {
        for v in &row[2..] {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0);
        }
    }
}

#[test]
fn identical_config_and_seed_give_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    let run = |name: &str, seed: &str| {
        let out = out_dir(&tmp, name);
        let o = scalewave(&[
            "propagate-linear", "--grid", "4x5", "--tmax", "5", "--rmax", "5", "--seed", seed, "--set", "jitter=0.3", "--out", &out,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(Path::new(&out).join("linear.csv")).unwrap()
    };
    let a = run("a", "11");
    let b = run("b", "11");
    let c = run("c", "12");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn snapshot_reruns_to_the_same_output() {
    let tmp = TempDir::new().unwrap();
    let first = out_dir(&tmp, "first");
    let o = scalewave(&["blowup-probe", "--tmax", "3", "--rmax", "8", "--grid", "16", "--set", "epsilons=0,0.5,50", "--out", &first]);
    assert!(o.status.success(), "{}", stderr(&o));
    let snapshot = Path::new(&first).join("config.snapshot");
    let second = out_dir(&tmp, "second");
    let o = scalewave(&["blowup-probe", "--config", snapshot.to_str().unwrap(), "--out", &second]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = fs::read(Path::new(&first).join("probe.csv")).unwrap();
    let b = fs::read(Path::new(&second).join("probe.csv")).unwrap();
    assert_eq!(a, b);
    let rows = csv_rows(&Path::new(&first).join("probe.csv"));
    assert_eq!(rows[0][2], "completed");
    assert_eq!(rows[2][2], "blowup_detected");
    // Apart from `out`, the rerun's snapshot matches the original.
    let strip = |p: &str| {
        fs::read_to_string(Path::new(p).join("config.snapshot"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("out"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&first), strip(&second));
}

#[test]
fn compare_oracle_writes_tables() {
    let tmp = TempDir::new().unwrap();
    let out = out_dir(&tmp, "co");
    let o = scalewave(&["compare-oracle", "--grid", "64", "--set", "times=1,2", "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&Path::new(&out).join("errors.csv"));
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert!(row[3].parse::<f64>().unwrap() < 0.05);
    }
    let snaps = fs::read_to_string(Path::new(&out).join("snapshots.csv")).unwrap();
    assert!(snaps.starts_with("t,r,u\n"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(Path::new(&out).join("comparison.json")).unwrap()).unwrap();
    assert!(report["convergence"]["order"].as_f64().unwrap() > 1.0);
}

#[test]
fn semilinear_trace_and_nonconvergence_exit_code() {
    let tmp = TempDir::new().unwrap();
    let out = out_dir(&tmp, "ss");
    let o = scalewave(&["solve-semilinear", "--grid", "6x6", "--tmax", "3", "--rmax", "3", "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trace: serde_json::Value = serde_json::from_str(&fs::read_to_string(Path::new(&out).join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace["converged"], serde_json::Value::Bool(true));
    assert_eq!(csv_rows(&Path::new(&out).join("field.csv")).len(), 36);

    let out = out_dir(&tmp, "ss1");
    let o = scalewave(&["solve-semilinear", "--grid", "6x6", "--tmax", "3", "--rmax", "3", "--max-iter", "1", "--out", &out]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(Path::new(&out).join("config.snapshot").exists());
}

#[test]
fn verify_estimates_all_pass_on_admissible_configuration() {
    let tmp = TempDir::new().unwrap();
    let out = out_dir(&tmp, "ve");
    let o = scalewave(&["verify-estimates", "--n", "4", "--mu", "2", "--p", "1.72", "--kappa", "0.6", "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&Path::new(&out).join("summary.csv"));
    assert!(rows.len() > 10);
    assert!(rows.iter().all(|r| r.last().unwrap() == "true"));
    assert!(fs::read_dir(Path::new(&out).join("reports")).unwrap().count() == rows.len());
}

#[test]
fn inadmissible_estimates_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let out = out_dir(&tmp, "bad");
    let o = scalewave(&["verify-estimates", "--n", "4", "--mu", "2", "--p", "1.9", "--kappa", "0.6", "--out", &out]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}
