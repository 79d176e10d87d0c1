//! End-to-end checks of the experiment runner: exit codes, config parsing,
//! and byte-identical reruns.

use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_roughfbm"))
}

fn read_sorted_json(dir: &Path) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            out.push((
                path.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read_to_string(&path).unwrap(),
            ));
        }
    }
    out.sort();
    out
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    // inadmissible Hurst index
    let st = bin()
        .args(["fbm", "--h", "0.6", "--out"])
        .arg(tmp.path())
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
    // unknown subcommand flag (clap uses exit code 2)
    let st = bin().args(["fbm", "--frobnicate"]).status().unwrap();
    assert_eq!(st.code(), Some(2));
    // unknown config key
    let cfgfile = tmp.path().join("bad.cfg");
    fs::write(&cfgfile, "H=0.4\nwibble=3\n").unwrap();
    let st = bin()
        .args(["fbm", "--config"])
        .arg(&cfgfile)
        .arg("--out")
        .arg(tmp.path())
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn config_file_is_parsed_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfgfile = tmp.path().join("run.cfg");
    // file asks for an inadmissible Hurst index; the flag fixes it
    fs::write(&cfgfile, "# comment\nH=0.34\nseed=9\nlevel=5\n").unwrap();
    let st = bin()
        .args(["lift", "--config"])
        .arg(&cfgfile)
        .arg("--out")
        .arg(tmp.path())
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2), "0.34 breaks the exponent inequalities");

    let st = bin()
        .args(["lift", "--h", "0.42", "--config"])
        .arg(&cfgfile)
        .arg("--out")
        .arg(tmp.path())
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let report = fs::read_to_string(tmp.path().join("lift_report.json")).unwrap();
    assert!(report.contains("\"seed\": 9"));
    assert!(report.contains("\"level\": 5"));
}

#[test]
fn passing_checks_exit_0_and_failing_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let st = bin()
        .args(["cmspace", "--n", "5", "--out"])
        .arg(tmp.path())
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));

    // an increment fit at tiny replica counts misses the Hurst index band
    let st = bin()
        .args([
            "germ-rate",
            "--germ",
            "increment",
            "--n",
            "5",
            "--scales",
            "8,4,2",
            "--replicas",
            "8",
            "--out",
        ])
        .arg(tmp.path())
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(1), "failing check must exit 1");
}

#[test]
fn rerun_is_byte_identical() {
    let run = |dir: &Path| {
        let st = bin()
            .args(["all", "--seed", "1", "--n", "5", "--out"])
            .arg(dir)
            .status()
            .unwrap();
        st.code()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let code_a = run(a.path());
    let code_b = run(b.path());
    assert_eq!(code_a, code_b);
    let ja = read_sorted_json(a.path());
    let jb = read_sorted_json(b.path());
    assert!(!ja.is_empty());
    assert_eq!(ja, jb, "identical config and seed must produce identical reports");
    // CSV artifacts as well
    let csv_a = fs::read_to_string(a.path().join("fbm_samples.csv")).unwrap();
    let csv_b = fs::read_to_string(b.path().join("fbm_samples.csv")).unwrap();
    assert_eq!(csv_a, csv_b);
}
