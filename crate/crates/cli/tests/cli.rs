use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SCENARIO: &str = "duration_ms = 2000\nscenario_speed_kmh = 60\nseed = 4\n\
[[users]]\nkind = \"native_dsrc\"\n\
[[users]]\nkind = \"native_cv2x\"\n\
[[users]]\nkind = \"nonnative_cell\"\n\
[[users]]\nkind = \"non_connected\"\n";

fn arsu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arsu"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_scenario(dir: &Path, body: &str) -> String {
    let path = dir.join("scenario.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_scenario(dir.path(), SCENARIO);
    let out = dir.path().join("out");
    let o = arsu(&["run", &cfg, "--out", out.to_str().unwrap(), "--trace"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "table4.csv", "matrix.csv", "trace.csv", "decisions.csv", "mqtt.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 4);
    assert_eq!(report["scenario_matrix"].as_array().unwrap().len(), 10);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("at_ms,kind,actor,subject,detail\n"));
}

#[test]
fn equal_seeds_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_scenario(dir.path(), SCENARIO);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for (d, seed) in [(&a, "9"), (&b, "9"), (&c, "10")] {
        let o = arsu(&["run", &cfg, "--seed", seed, "--out", d.to_str().unwrap(), "--trace"]);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["report.json", "trace.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("trace.csv")).unwrap(), fs::read(c.join("trace.csv")).unwrap());
}

#[test]
fn config_error_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for body in [
        "duration_ms = 1000\nscenario_speed_kmh = 130\n",
        "duration_ms = 1000\nspede = 3\n",
        "duration_ms = = 1\n",
    ] {
        let cfg = write_scenario(dir.path(), body);
        let o = arsu(&["run", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{body}");
        assert!(!out.exists());
    }
    let cfg = write_scenario(dir.path(), "duration_ms = 1000\nspede = 3\n");
    let o = arsu(&["validate-config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("spede"));
}

#[test]
fn unwritable_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_scenario(dir.path(), SCENARIO);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let o = arsu(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let missing = dir.path().join("nope.toml");
    let o = arsu(&["run", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn table4_prints_the_composed_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = arsu(&["table4", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("5.470") && text.contains("382.741*"));
    assert!(!text.contains('!') || text.contains("! unserviceable"));
    let csv = fs::read_to_string(dir.path().join("table4.csv")).unwrap();
    assert_eq!(csv.lines().count(), 36);
}

#[test]
fn table4_reads_a_custom_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    fs::write(&csv, "link,0,30\nDSRC-CV2X,1,2\n").unwrap();
    let o = arsu(&["table4", "--latency-csv", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn matrix_over_a_narrow_range() {
    let dir = tempfile::tempdir().unwrap();
    let o = arsu(&["matrix", "--speed-range", "0,0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("83.318"), "{text}");
    let csv = fs::read_to_string(dir.path().join("matrix.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    let o = arsu(&["matrix", "--speed-range", "90,30"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_config_accepts_a_good_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_scenario(dir.path(), SCENARIO);
    let o = arsu(&["validate-config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("4 users"));
}
