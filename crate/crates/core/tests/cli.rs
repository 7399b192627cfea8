use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn fgshield(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fgshield"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn fgshield")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const STORE: [&str; 4] = ["--ldb", "ldb.txt", "--ledger", "ledger.tsv"];

fn detect(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "--seed",
        "5",
        "detect",
        "--rules-out",
        "rules.txt",
        "--report-out",
        "report.txt",
    ];
    args.extend_from_slice(&STORE);
    args.extend_from_slice(extra);
    fgshield(dir, &args)
}

#[test]
fn help_and_usage_exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&fgshield(dir.path(), &["--help"])), 0);
    assert_eq!(code(&fgshield(dir.path(), &["--version"])), 0);
    assert_eq!(code(&fgshield(dir.path(), &[])), 1);
    assert_eq!(code(&fgshield(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&fgshield(dir.path(), &["detect"])), 1);
    assert_eq!(code(&fgshield(dir.path(), &["simulate"])), 1);
}

#[test]
fn input_errors_exit_2_without_side_effects() {
    let dir = TempDir::new().unwrap();
    let out = detect(dir.path(), &["--input", "missing.log"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(!dir.path().join("ldb.txt").exists());
    assert!(!dir.path().join("rules.txt").exists());

    fs::write(dir.path().join("bad.toml"), "[sensor]\nnope = 1\n").unwrap();
    let out = fgshield(dir.path(), &["--config", "bad.toml", "detect", "--scenario", "benign"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nope"), "{}", stderr(&out));

    let out = fgshield(dir.path(), &["ga-search", "--target", "1:2:3", "--ldb", "missing.txt"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_then_ingest_and_detect_from_files() {
    let dir = TempDir::new().unwrap();
    let out = fgshield(
        dir.path(),
        &[
            "--seed",
            "3",
            "simulate",
            "--scenario",
            "mixed",
            "--count",
            "2000",
            "--out",
            "t.log",
            "--truth-out",
            "t.truth",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(dir.path().join("t.truth")).unwrap(),
        "10.0.0.10 192.168.0.254 80 6\n"
    );

    let out = fgshield(dir.path(), &["ingest", "--input", "t.log"]);
    assert_eq!(code(&out), 0);
    assert!(stderr(&out).contains("rejected: 0"));

    let out = detect(dir.path(), &["--input", "t.log", "--truth", "t.truth"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("rate_percent: 100.00"), "{report}");
    assert!(report.contains("benign_packets_flagged: 0"));
    assert_eq!(
        fs::read_to_string(dir.path().join("rules.txt")).unwrap(),
        "iptables -A INPUT -s 10.0.0.10 -p tcp --dport 80 -j DROP\n"
    );

    let out = fgshield(dir.path(), &["report", "--input", "report.txt"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("detection_rate: 100.00"));
}

#[test]
fn ingest_reports_rejects() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("x.log"),
        "IN=eth0 OUT=eth0\nSRC=1.2.3.4 DST=5.6.7.8 PROTO=ICMP\n",
    )
    .unwrap();
    let out = fgshield(dir.path(), &["ingest", "--input", "x.log", "--emit", "custom"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 1:"));
    assert!(stderr(&out).contains("accepted: 1"));
    assert!(stdout(&out).starts_with("PKTNR=1 "));
}

#[test]
fn benign_traffic_emits_nothing() {
    let dir = TempDir::new().unwrap();
    let out = detect(dir.path(), &["--scenario", "benign", "--count", "300"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("flows_escalated: 0"));
    assert!(report.contains("rules_emitted: 0"));
    assert!(!report.contains("Input String"));
    assert!(fs::read_to_string(dir.path().join("rules.txt"))
        .unwrap_or_default()
        .is_empty());
}

#[test]
fn config_file_changes_behaviour() {
    let dir = TempDir::new().unwrap();
    // A higher count threshold than the flood can reach keeps it silent.
    fs::write(dir.path().join("c.toml"), "[sensor]\npacket_threshold = 100000\n").unwrap();
    let out = fgshield(
        dir.path(),
        &[
            "--config",
            "c.toml",
            "detect",
            "--scenario",
            "syn-flood",
            "--count",
            "3000",
            "--rules-out",
            "r.txt",
            "--ldb",
            "l.txt",
            "--ledger",
            "g.tsv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("flows_escalated: 0"));
    assert!(stdout(&out).contains("rate_percent: 0.00"));
}

#[test]
fn ga_search_prints_match_block() {
    let dir = TempDir::new().unwrap();
    let entries: String = (3300..3400)
        .map(|p| format!("167772170:{p}:3232235774:80:160:6\n"))
        .collect();
    fs::write(dir.path().join("ldb.txt"), entries).unwrap();
    let out = fgshield(
        dir.path(),
        &[
            "--seed",
            "1",
            "ga-search",
            "--target",
            "167772170:3325:3232235774:80:160:6",
            "--ldb",
            "ldb.txt",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    for line in [
        "Input String: 167772170:3325:3232235774:80:160:6",
        "Best Match: 167772170:3325:3232235774:80:160:6",
        "%100 Matching",
        "Source IP: 10.0.0.10",
        "Source Port: 3325",
        "Destination IP: 192.168.0.254",
        "Destination Port: 80",
        "Protocol: 6 = TCP",
        "Match found in Generation:",
    ] {
        assert!(text.contains(line), "missing {line:?} in\n{text}");
    }
}

#[test]
fn report_runs_mean() {
    let dir = TempDir::new().unwrap();
    let out = fgshield(
        dir.path(),
        &["report", "--runs", "182,328,133,230,146,181,146,728,133,114"],
    );
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("performance_mean_seconds: 232.1\n"));
}
