//! Command-line surface: file formats, exit codes, error objects, and the
//! per-command behaviors.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fetchsim"))
}

fn run_ok(args: &[&str]) -> String {
    let output = bin().args(args).output().expect("spawn");
    assert!(
        output.status.success(),
        "args {args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout).unwrap()
}

fn run_fail(args: &[&str]) -> Output {
    let output = bin().args(args).output().expect("spawn");
    assert!(
        !output.status.success(),
        "args {args:?} unexpectedly succeeded"
    );
    output
}

struct Workdir(PathBuf);

impl Workdir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("fetchsim-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        Self(dir)
    }

    fn path(&self, name: &str) -> String {
        self.0.join(name).display().to_string()
    }
}

impl Drop for Workdir {
    fn drop(&mut self) {
        std::fs::remove_dir_all(&self.0).ok();
    }
}

#[test]
fn gen_writes_the_expected_record_counts() {
    let dir = Workdir::new("gen");
    let tiny = dir.path("tiny.trc");
    run_ok(&[
        "gen",
        "loop",
        "--segments",
        "1",
        "--blocks",
        "2",
        "--iters",
        "2",
        "--out",
        &tiny,
    ]);
    // 4 records: 5-byte header + 4 x 9 bytes
    assert_eq!(std::fs::metadata(&tiny).unwrap().len(), 41);

    let big = dir.path("big.trc");
    run_ok(&[
        "gen",
        "loop",
        "--segments",
        "8",
        "--blocks",
        "16",
        "--iters",
        "100",
        "--out",
        &big,
    ]);
    assert_eq!(std::fs::metadata(&big).unwrap().len(), 5 + 12_800 * 9);
}

#[test]
fn run_with_no_prefetcher_reports_zero_coverage() {
    let dir = Workdir::new("none");
    let trace = dir.path("t.trc");
    run_ok(&[
        "gen",
        "segmented",
        "--segments",
        "4",
        "--blocks",
        "8",
        "--iters",
        "30",
        "--out",
        &trace,
    ]);
    let report = run_ok(&["run", "--trace", &trace, "--set", "prefetcher.kind=none"]);
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(json["covered_fraction"], 0.0);
    assert_eq!(json["prefetches_issued"], 0);
}

#[test]
fn mana_beats_no_prefetcher_on_the_segmented_loop() {
    let dir = Workdir::new("cmp");
    let trace = dir.path("t.trc");
    run_ok(&[
        "gen",
        "segmented",
        "--segments",
        "8",
        "--blocks",
        "16",
        "--iters",
        "80",
        "--out",
        &trace,
    ]);
    let small_l1 = ["--set", "l1.kb=16", "--set", "l1.ways=2"];
    let none: serde_json::Value = serde_json::from_str(&run_ok(
        &[
            &["run", "--trace", &trace, "--set", "prefetcher.kind=none"],
            &small_l1[..],
        ]
        .concat(),
    ))
    .unwrap();
    let mana: serde_json::Value = serde_json::from_str(&run_ok(
        &[&["run", "--trace", &trace], &small_l1[..]].concat(),
    ))
    .unwrap();
    let c_none = none["covered_fraction"].as_f64().unwrap();
    let c_mana = mana["covered_fraction"].as_f64().unwrap();
    assert!(c_mana > c_none, "mana {c_mana} vs none {c_none}");
}

#[test]
fn run_writes_identical_reports_for_identical_inputs() {
    let dir = Workdir::new("det");
    let trace = dir.path("t.trc");
    run_ok(&[
        "gen",
        "loop",
        "--segments",
        "2",
        "--blocks",
        "16",
        "--iters",
        "20",
        "--out",
        &trace,
    ]);
    let a = dir.path("a.json");
    let b = dir.path("b.json");
    run_ok(&["run", "--trace", &trace, "--out", &a]);
    run_ok(&["run", "--trace", &trace, "--out", &b]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn sweep_rows_follow_input_order_and_trends() {
    let dir = Workdir::new("sweep");
    let trace = dir.path("t.trc");
    run_ok(&[
        "gen",
        "segmented",
        "--segments",
        "8",
        "--blocks",
        "16",
        "--iters",
        "60",
        "--out",
        &trace,
    ]);
    let csv = run_ok(&[
        "sweep",
        "--trace",
        &trace,
        "--set",
        "l1.kb=16",
        "--set",
        "l1.ways=2",
        "--vary",
        "lookahead=1,3",
    ]);
    let lines: Vec<&str> = csv.trim().lines().collect();
    assert_eq!(lines.len(), 3, "header + 2 rows: {csv}");
    assert!(lines[0].starts_with("lookahead,baseline_misses"));
    let covered = |line: &str| -> f64 { line.split(',').nth(5).unwrap().parse().unwrap() };
    assert!(lines[1].starts_with("1,"));
    assert!(lines[2].starts_with("3,"));
    assert!(covered(lines[2]) >= covered(lines[1]), "{csv}");
}

#[test]
fn sweep_l1_size_grows_external_requests() {
    let dir = Workdir::new("bw");
    let trace = dir.path("t.trc");
    run_ok(&[
        "gen",
        "random",
        "--segments",
        "32",
        "--blocks",
        "64",
        "--iters",
        "20",
        "--seed",
        "5",
        "--out",
        &trace,
    ]);
    let csv = run_ok(&["sweep", "--trace", &trace, "--vary", "l1.kb=32,16,8"]);
    let requests: Vec<u64> = csv
        .trim()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(13).unwrap().parse().unwrap())
        .collect();
    assert_eq!(requests.len(), 3);
    assert!(
        requests[0] <= requests[1] && requests[1] <= requests[2],
        "{requests:?}"
    );
}

#[test]
fn sweep_rejects_bad_vary_specs() {
    let dir = Workdir::new("badvary");
    let trace = dir.path("t.trc");
    run_ok(&[
        "gen", "loop", "--blocks", "4", "--iters", "4", "--out", &trace,
    ]);
    let out = run_fail(&["sweep", "--trace", &trace, "--vary", "lookahead="]);
    assert_eq!(out.status.code(), Some(2));
    let out = run_fail(&["sweep", "--trace", &trace, "--vary", "bogus=1,2"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(err.contains("unknown sweep key"), "{err}");
}

#[test]
fn storage_single_row_and_bounds() {
    let text = run_ok(&["storage", "--partial-tag", "2"]);
    for fragment in ["0.44 KB", "14.5 KB", "14.94 KB"] {
        assert!(text.contains(fragment), "{text}");
    }
    let out = run_fail(&["storage", "--partial-tag", "99"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(err.contains("error"), "{err}");
}

#[test]
fn config_errors_name_the_offending_key() {
    let dir = Workdir::new("cfg");
    let trace = dir.path("t.trc");
    run_ok(&[
        "gen", "loop", "--blocks", "4", "--iters", "4", "--out", &trace,
    ]);
    let config = dir.path("bad.json");
    std::fs::write(&config, r#"{ "l1": { "kbb": 32 } }"#).unwrap();
    let out = run_fail(&["run", "--trace", &trace, "--config", &config]);
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert!(
        err["error"]["message"].as_str().unwrap().contains("kbb"),
        "{err}"
    );
}

#[test]
fn missing_trace_file_is_an_input_error() {
    let out = run_fail(&["run", "--trace", "/nonexistent/path.trc"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn text_traces_are_accepted() {
    let dir = Workdir::new("text");
    let trace = dir.path("t.txt");
    std::fs::write(
        &trace,
        "# four blocks, one ending in a call\n0\n40\n1000 c+\n200000\n",
    )
    .unwrap();
    let report = run_ok(&["run", "--trace", &trace, "--set", "warmup.instructions=0"]);
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(json["baseline_misses"], 4);
}

#[test]
fn count_records_matches_the_windowing_rule() {
    let dir = Workdir::new("count");
    let trace = dir.path("t.trc");
    run_ok(&[
        "gen",
        "loop",
        "--segments",
        "1",
        "--blocks",
        "16",
        "--iters",
        "1",
        "--out",
        &trace,
    ]);
    // 16 sequential blocks under (0,8) regions: triggers at blocks 0 and 9
    let n = run_ok(&["count-records", "--trace", &trace, "--kind", "mana-trigger"]);
    assert_eq!(n.trim(), "2");
    let n = run_ok(&[
        "count-records",
        "--trace",
        &trace,
        "--kind",
        "rdip-signature",
    ]);
    assert_eq!(n.trim(), "1");
}
